#include "mmc/token_layout.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

namespace mmc {

const char* token_kind_name(TokenKind k) {
    switch (k) {
        case TokenKind::TEXT: return "TEXT";
        case TokenKind::IMG_SEM: return "IMG_SEM";
        case TokenKind::IMG_VAE: return "IMG_VAE";
    }
    return "?";
}

std::vector<std::size_t> TokenStream::boundaries() const {
    std::vector<std::size_t> out;
    out.reserve(segments.size());
    for (const Segment& s : segments) out.push_back(s.start + s.count);
    return out;
}

void TokenStream::validate() const {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const Segment& s = segments[i];
        if (s.start != pos) throw std::invalid_argument("TokenStream: segment gap");
        if (s.count == 0) throw std::invalid_argument("TokenStream: empty segment");
        if (s.kind != TokenKind::TEXT && !s.subject_id)
            throw std::invalid_argument("TokenStream: image segment without subject");
        for (std::size_t j = s.start; j < s.start + s.count; ++j) {
            if (entries[j].kind != s.kind || entries[j].seq_pos != j)
                throw std::invalid_argument("TokenStream: entry/segment mismatch");
        }
        pos += s.count;
    }
    if (pos != entries.size()) throw std::invalid_argument("TokenStream: trailing entries");
}

static bool ends_with_sentence_punct(const std::string& s) {
    for (auto it = s.rbegin(); it != s.rend(); ++it) {
        if (std::isspace(static_cast<unsigned char>(*it))) continue;
        return *it == '.' || *it == '!' || *it == '?';
    }
    return false;
}

std::string build_template(const std::string& prompt, const std::vector<SubjectSpec>& subjects) {
    if (prompt.empty()) throw std::invalid_argument("build_template: empty prompt");
    if (subjects.empty()) return prompt;
    std::string out = prompt;
    if (!ends_with_sentence_punct(out)) out += ".";
    out += " <SEP>";
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        if (subjects[i].entity_word.empty())
            throw std::invalid_argument("build_template: empty entity word");
        out += " The " + subjects[i].entity_word + " looks like <image " +
               std::to_string(i + 1) + ">.";
    }
    return out;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> toks;
    std::size_t i = 0;
    const std::size_t n = text.size();
    auto is_word = [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '\'';
    };
    while (i < n) {
        char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        if (c == '<') {
            // atomic specials: <SEP>, <image N>
            std::size_t close = text.find('>', i);
            if (close != std::string::npos) {
                std::string inner = text.substr(i, close - i + 1);
                if (inner == "<SEP>" || (inner.rfind("<image ", 0) == 0)) {
                    toks.push_back(inner);
                    i = close + 1;
                    continue;
                }
            }
        }
        if (is_word(c)) {
            std::size_t j = i;
            while (j < n && is_word(text[j])) ++j;
            toks.push_back(text.substr(i, j - i));
            i = j;
        } else {
            toks.push_back(std::string(1, c));
            ++i;
        }
    }
    return toks;
}

// Connective tokens preceding subject i's sem block, for i >= 1:
// the previous sentence's "." plus "The <word...> looks like".
static std::vector<std::string> connective_tokens(const SubjectSpec& s) {
    std::vector<std::string> toks = {".", "The"};
    for (const std::string& w : tokenize(s.entity_word)) toks.push_back(w);
    toks.push_back("looks");
    toks.push_back("like");
    return toks;
}

TokenStream layout_tokens(std::size_t prompt_token_count,
                          const std::vector<SubjectSpec>& subjects) {
    if (prompt_token_count < 1) throw std::invalid_argument("layout_tokens: need >= 1 text token");
    TokenStream ts;
    auto push_segment = [&ts](TokenKind kind, std::optional<std::size_t> subject,
                              std::size_t count) {
        Segment seg{kind, subject, ts.entries.size(), count};
        for (std::size_t j = 0; j < count; ++j)
            ts.entries.push_back(TokenEntry{kind, subject, ts.entries.size()});
        ts.segments.push_back(seg);
    };

    push_segment(TokenKind::TEXT, std::nullopt, prompt_token_count);
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        const SubjectSpec& s = subjects[i];
        if (s.entity_word.empty())
            throw std::invalid_argument("layout_tokens: empty entity word");
        if (s.sem_w < 1 || s.sem_h < 1 || s.vae_w < 1 || s.vae_h < 1)
            throw std::invalid_argument("layout_tokens: grids must be >= 1x1");
        if (i > 0) push_segment(TokenKind::TEXT, std::nullopt, connective_tokens(s).size());
        push_segment(TokenKind::IMG_SEM, i, s.sem_w * s.sem_h);
    }
    for (std::size_t i = 0; i < subjects.size(); ++i)
        push_segment(TokenKind::IMG_VAE, i, subjects[i].vae_w * subjects[i].vae_h);
    ts.validate();
    return ts;
}

TemplateLayout layout_template(const std::string& prompt,
                               const std::vector<SubjectSpec>& subjects) {
    const std::string tmpl = build_template(prompt, subjects);
    std::vector<std::string> toks = tokenize(tmpl);

    // first TEXT segment = everything before <image 1> (whole prompt if none)
    std::size_t first_count = toks.size();
    for (std::size_t i = 0; i < toks.size(); ++i) {
        if (toks[i].rfind("<image ", 0) == 0) {
            first_count = i;
            break;
        }
    }

    TemplateLayout out;
    out.stream = layout_tokens(first_count, subjects);

    // align template token strings to stream entries
    std::size_t cursor = 0;
    for (const Segment& seg : out.stream.segments) {
        switch (seg.kind) {
            case TokenKind::TEXT:
                for (std::size_t j = 0; j < seg.count; ++j) out.token_text.push_back(toks[cursor++]);
                break;
            case TokenKind::IMG_SEM:
                ++cursor;  // the single <image i> template token expands to the grid
                for (std::size_t j = 0; j < seg.count; ++j)
                    out.token_text.push_back("<image " + std::to_string(*seg.subject_id + 1) + ">");
                break;
            case TokenKind::IMG_VAE:
                for (std::size_t j = 0; j < seg.count; ++j)
                    out.token_text.push_back("[image " + std::to_string(*seg.subject_id + 1) + "]");
                break;
        }
    }
    return out;
}

}  // namespace mmc
