#include "mmc/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace mmc {

namespace {

constexpr char kMagic[4] = {'P', 'V', 'T', 'D'};
constexpr uint8_t kVersion = 0x01;
constexpr uint8_t kDtypeF64 = 0x01;

void put_u64_le(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t get_u64_le(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace

void atomic_write_file(const std::filesystem::path& path, const std::string& contents) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open for write: " + tmp.string());
        f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!f) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void write_tensor_file(const std::filesystem::path& path, const Tensor& t) {
    std::string buf;
    buf.reserve(7 + 8 * t.dims().size() + 8 * t.numel());
    buf.append(kMagic, 4);
    buf.push_back(static_cast<char>(kVersion));
    buf.push_back(static_cast<char>(kDtypeF64));
    if (t.dims().size() > 255) throw std::invalid_argument("write_tensor_file: rank > 255");
    buf.push_back(static_cast<char>(t.dims().size()));
    for (std::size_t d : t.dims()) put_u64_le(buf, d);
    for (double x : t.data()) {
        uint64_t bits = std::bit_cast<uint64_t>(x);
        put_u64_le(buf, bits);
    }
    atomic_write_file(path, buf);
}

Tensor read_tensor_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open tensor file: " + path.string());
    std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
    if (raw.size() < 7 || std::memcmp(p, kMagic, 4) != 0)
        throw std::runtime_error("tensor file: bad magic: " + path.string());
    if (p[4] != kVersion)
        throw std::runtime_error("tensor file: unsupported version: " + path.string());
    if (p[5] != kDtypeF64)
        throw std::runtime_error("tensor file: unsupported dtype: " + path.string());
    const std::size_t rank = p[6];
    std::size_t off = 7;
    if (raw.size() < off + 8 * rank) throw std::runtime_error("tensor file: truncated header");
    std::vector<std::size_t> dims(rank);
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        dims[i] = static_cast<std::size_t>(get_u64_le(p + off));
        off += 8;
        n *= dims[i];
    }
    if (raw.size() != off + 8 * n) throw std::runtime_error("tensor file: payload size mismatch");
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) {
        data[i] = std::bit_cast<double>(get_u64_le(p + off));
        off += 8;
    }
    return Tensor(std::move(dims), std::move(data));
}

}  // namespace mmc
