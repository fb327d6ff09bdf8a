#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mmc/tensor.hpp"

namespace testutil {

// Relative error with an absolute floor, for finite-difference comparisons.
inline double rel_err(double a, double b, double floor = 1e-2) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central finite differences of a scalar-valued function at every element of
// `param`, compared against the autograd gradient. Returns the worst relative
// error seen.
inline double fd_check(const std::function<mmc::Tensor()>& loss_fn, mmc::Tensor param,
                       double h = 1e-5) {
    using namespace mmc;
    Tensor loss = loss_fn();
    param.zero_grad();
    std::vector<Tensor> params = {param};
    std::vector<Tensor> grads = grad(loss, params);
    const Tensor& g = grads[0];

    double worst = 0.0;
    auto& data = param.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double keep = data[i];
        data[i] = keep + h;
        const double up = loss_fn().item();
        data[i] = keep - h;
        const double down = loss_fn().item();
        data[i] = keep;
        const double fd = (up - down) / (2.0 * h);
        worst = std::max(worst, rel_err(g.at(i), fd));
    }
    return worst;
}

// Scratch directory unique to the current test binary run.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("mmcond_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

struct CmdResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr
};

// Run a shell command, capture combined output.
inline CmdResult run_cmd(const std::string& cmd) {
    CmdResult r;
    std::string full = cmd + " 2>&1";
    FILE* pipe = popen(full.c_str(), "r");
    if (!pipe) return r;
    char buf[4096];
    while (std::size_t n = fread(buf, 1, sizeof(buf), pipe)) r.output.append(buf, n);
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

inline std::string read_file(const std::filesystem::path& p) {
    FILE* f = fopen(p.string().c_str(), "rb");
    if (!f) return {};
    std::string out;
    char buf[4096];
    while (std::size_t n = fread(buf, 1, sizeof(buf), f)) out.append(buf, n);
    fclose(f);
    return out;
}

}  // namespace testutil
