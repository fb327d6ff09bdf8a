#include <regex>

#include "doctest.h"
#include "mmc/token_layout.hpp"

using namespace mmc;

namespace {

SubjectSpec subj(const std::string& word, std::size_t sem = 2, std::size_t vae = 2) {
    return SubjectSpec{word, sem, sem, vae, vae};
}

// round-trip parser used only by tests: recover subject words and image slots
std::vector<std::pair<std::string, int>> parse_template(const std::string& tmpl) {
    std::vector<std::pair<std::string, int>> out;
    std::regex ident(R"(The ([A-Za-z0-9_' -]+) looks like <image (\d+)>\.)");
    for (auto it = std::sregex_iterator(tmpl.begin(), tmpl.end(), ident);
         it != std::sregex_iterator(); ++it)
        out.emplace_back((*it)[1], std::stoi((*it)[2]));
    return out;
}

}  // namespace

TEST_CASE("template matches the two-subject example") {
    const std::string tmpl =
        build_template("A man is playing guitar", {subj("man"), subj("guitar")});
    CHECK(tmpl ==
          "A man is playing guitar. <SEP> The man looks like <image 1>. "
          "The guitar looks like <image 2>.");
}

TEST_CASE("zero subjects leaves the prompt unchanged") {
    CHECK(build_template("A man is playing guitar", {}) == "A man is playing guitar");
    CHECK(build_template("A man is playing guitar", {}).find("<SEP>") == std::string::npos);
}

TEST_CASE("three subjects get three numbered identity sentences") {
    const std::string tmpl =
        build_template("a scene.", {subj("fox"), subj("cube"), subj("bird")});
    auto parsed = parse_template(tmpl);
    REQUIRE(parsed.size() == 3);
    CHECK(parsed[0] == std::pair<std::string, int>{"fox", 1});
    CHECK(parsed[1] == std::pair<std::string, int>{"cube", 2});
    CHECK(parsed[2] == std::pair<std::string, int>{"bird", 3});
    // prompt already punctuated: no duplicate period
    CHECK(tmpl.rfind("a scene. <SEP>", 0) == 0);
}

TEST_CASE("empty prompt is rejected") {
    CHECK_THROWS_AS((void)build_template("", {subj("man")}), std::invalid_argument);
}

TEST_CASE("sep appears exactly once iff subjects exist") {
    for (std::size_t n = 0; n <= 3; ++n) {
        std::vector<SubjectSpec> subjects;
        for (std::size_t i = 0; i < n; ++i) subjects.push_back(subj("w" + std::to_string(i)));
        const std::string tmpl = build_template("hello world", subjects);
        std::size_t count = 0, pos = 0;
        while ((pos = tmpl.find("<SEP>", pos)) != std::string::npos) {
            ++count;
            pos += 5;
        }
        CHECK(count == (n >= 1 ? 1u : 0u));
    }
}

TEST_CASE("template round-trips through the tokenizer") {
    const std::string tmpl = build_template("a man naps", {subj("man"), subj("cat")});
    auto toks = tokenize(tmpl);
    const std::vector<std::string> expected = {
        "a", "man", "naps", ".", "<SEP>", "The", "man", "looks", "like", "<image 1>",
        ".", "The", "cat", "looks", "like", "<image 2>", "."};
    CHECK(toks == expected);
    auto parsed = parse_template(tmpl);
    REQUIRE(parsed.size() == 2);
    CHECK(parsed[0].first == "man");
    CHECK(parsed[1].first == "cat");
}

TEST_CASE("single-subject layout from spec counts") {
    // 5 prompt-side text tokens, sem 2x2, vae 2x2
    TokenStream ts = layout_tokens(5, {subj("man")});
    auto bounds = ts.boundaries();
    REQUIRE(bounds.size() == 3);
    CHECK(bounds[0] == 5);  // m1
    // IMG_SEM occupies 1-based positions 6..9
    for (std::size_t pos = 5; pos < 9; ++pos) {
        CHECK(ts.entries[pos].kind == TokenKind::IMG_SEM);
        CHECK(*ts.entries[pos].subject_id == 0);
    }
    CHECK(bounds[1] == 9);
    CHECK(ts.entries[9].kind == TokenKind::IMG_VAE);
    CHECK(ts.size() == 5 + 4 + 4);
}

TEST_CASE("zero-subject layout is a single text segment") {
    TokenStream ts = layout_tokens(7, {});
    CHECK(ts.segments.size() == 1);
    CHECK(ts.boundaries() == std::vector<std::size_t>{7});
    for (const auto& e : ts.entries) CHECK(e.kind == TokenKind::TEXT);
}

TEST_CASE("two-subject layout interleaves text and sem then appends vae") {
    TokenStream ts = layout_tokens(5, {subj("man"), subj("guitar")});
    std::vector<TokenKind> kinds;
    std::vector<std::optional<std::size_t>> owners;
    for (const auto& s : ts.segments) {
        kinds.push_back(s.kind);
        owners.push_back(s.subject_id);
    }
    CHECK(kinds == std::vector<TokenKind>{TokenKind::TEXT, TokenKind::IMG_SEM, TokenKind::TEXT,
                                          TokenKind::IMG_SEM, TokenKind::IMG_VAE,
                                          TokenKind::IMG_VAE});
    CHECK(owners[1] == 0);
    CHECK(owners[3] == 1);
    CHECK(owners[4] == 0);
    CHECK(owners[5] == 1);
}

TEST_CASE("token counts partition the stream exactly") {
    std::vector<SubjectSpec> subjects = {SubjectSpec{"fox", 2, 2, 3, 3},
                                         SubjectSpec{"cube", 3, 3, 2, 2}};
    TokenStream ts = layout_tokens(9, subjects);
    std::size_t text = 0, sem = 0, vae = 0;
    for (const auto& e : ts.entries) {
        if (e.kind == TokenKind::TEXT) ++text;
        if (e.kind == TokenKind::IMG_SEM) ++sem;
        if (e.kind == TokenKind::IMG_VAE) ++vae;
    }
    CHECK(sem == 2 * 2 + 3 * 3);
    CHECK(vae == 3 * 3 + 2 * 2);
    CHECK(ts.size() == text + sem + vae);

    // boundaries strictly increasing, last one ends the stream
    auto bounds = ts.boundaries();
    for (std::size_t i = 1; i < bounds.size(); ++i) CHECK(bounds[i] > bounds[i - 1]);
    CHECK(bounds.back() == ts.size());

    // every subject contributes exactly one sem and one vae segment
    for (std::size_t sid = 0; sid < subjects.size(); ++sid) {
        std::size_t sem_segs = 0, vae_segs = 0;
        for (const auto& s : ts.segments) {
            if (s.subject_id == sid && s.kind == TokenKind::IMG_SEM) ++sem_segs;
            if (s.subject_id == sid && s.kind == TokenKind::IMG_VAE) ++vae_segs;
        }
        CHECK(sem_segs == 1);
        CHECK(vae_segs == 1);
    }
}

TEST_CASE("layout_template aligns tokens with the stream") {
    auto lay = layout_template("a man naps", {subj("man"), subj("cat")});
    // first segment: a man naps . <SEP> The man looks like  -> 9 tokens
    CHECK(lay.stream.boundaries()[0] == 9);
    CHECK(lay.token_text.size() == lay.stream.size());
    CHECK(lay.token_text[0] == "a");
    CHECK(lay.token_text[4] == "<SEP>");
    CHECK(lay.token_text[9] == "<image 1>");
    // inter-subject text segment: . The cat looks like
    CHECK(lay.token_text[13] == ".");
    CHECK(lay.token_text[15] == "cat");
}

TEST_CASE("layout rejects degenerate inputs") {
    CHECK_THROWS_AS((void)layout_tokens(0, {}), std::invalid_argument);
    SubjectSpec bad = subj("x");
    bad.sem_w = 0;
    CHECK_THROWS_AS((void)layout_tokens(3, {bad}), std::invalid_argument);
    CHECK_THROWS_AS((void)layout_tokens(3, {SubjectSpec{"", 2, 2, 2, 2}}),
                    std::invalid_argument);
}
