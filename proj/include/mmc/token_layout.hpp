#pragma once

#include <optional>
#include <string>
#include <vector>

namespace mmc {

// One subject: its description word in the prompt, the grid of <image i>
// tokens it contributes to the text stream, and the grid of `image' tokens
// from the visual encoder.
struct SubjectSpec {
    std::string entity_word;
    std::size_t sem_w = 4, sem_h = 4;
    std::size_t vae_w = 4, vae_h = 4;
};

enum class TokenKind { TEXT, IMG_SEM, IMG_VAE };

const char* token_kind_name(TokenKind k);

struct TokenEntry {
    TokenKind kind = TokenKind::TEXT;
    std::optional<std::size_t> subject_id;  // set for IMG_SEM / IMG_VAE
    std::size_t seq_pos = 0;
};

struct Segment {
    TokenKind kind = TokenKind::TEXT;
    std::optional<std::size_t> subject_id;
    std::size_t start = 0;  // 0-based position of first token
    std::size_t count = 0;
};

// Ordered multimodal token sequence: alternating TEXT / IMG_SEM segments,
// then one IMG_VAE segment per subject. boundaries() holds the 1-based end
// position of each segment (m1, m2, ...).
struct TokenStream {
    std::vector<TokenEntry> entries;
    std::vector<Segment> segments;

    std::vector<std::size_t> boundaries() const;
    std::size_t size() const { return entries.size(); }
    void validate() const;
};

// "prompt <SEP> The <word_1> looks like <image 1>. The <word_2> looks like
// <image 2>. ..." - one identity sentence per subject, in input order. A
// prompt without trailing sentence punctuation gets a period before <SEP>.
// Zero subjects returns the prompt unchanged. Throws on an empty prompt.
std::string build_template(const std::string& prompt,
                           const std::vector<SubjectSpec>& subjects);

// Whitespace/punctuation tokenizer used across the toy stack. "<SEP>" and
// "<image N>" are atomic; other punctuation splits into single-char tokens.
std::vector<std::string> tokenize(const std::string& text);

// Geometric layout. The first TEXT segment has exactly prompt_token_count
// entries (the caller counts everything before <image 1>, separator and
// connective words included). For each later subject the TEXT segment is the
// tokenization of ". The <word> looks like"; the final sentence period is not
// materialized, so the stream ends with the last IMG_SEM segment before the
// appended IMG_VAE blocks.
TokenStream layout_tokens(std::size_t prompt_token_count,
                          const std::vector<SubjectSpec>& subjects);

// Convenience for real templates: tokenize build_template() output and lay it
// out. Returns the stream plus, for each entry, the template token string it
// stands for (IMG_SEM/IMG_VAE entries get "<image i>" / "[image i]").
struct TemplateLayout {
    TokenStream stream;
    std::vector<std::string> token_text;
};
TemplateLayout layout_template(const std::string& prompt,
                               const std::vector<SubjectSpec>& subjects);

}  // namespace mmc
