#pragma once

// Synthetic step-structured arithmetic corpus: generator, word-level
// tokenizer over the closed template vocabulary, encodings for the SFT and
// curriculum formats, and line-delimited dataset I/O.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace lst {

struct SpecialTokens {
    int start_latent = -1;
    int latent_placeholder = -1;
    int end_latent = -1;
    int think_open = -1;
    int think_close = -1;
    int answer_open = -1;
    int answer_close = -1;
    int boxed_open = -1;
    int brace_close = -1;
    int eos = -1;
    int pad = -1;
    int unk = -1;
};

class Tokenizer {
public:
    Tokenizer();

    int vocab_size() const { return static_cast<int>(pieces_.size()); }
    const SpecialTokens& specials() const { return specials_; }

    // Throws std::out_of_range on a piece outside the vocabulary; there is
    // no unknown-token fallback.
    int id(const std::string& piece) const;
    const std::string& piece(int id) const;

    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;

private:
    std::vector<std::string> pieces_;
    std::unordered_map<std::string, int> index_;
    SpecialTokens specials_;
};

struct TrainingExample {
    std::string question;
    std::vector<std::string> steps;
    std::string answer;  // decimal integer string
    std::string split;   // "train" or "eval"

    bool operator==(const TrainingExample&) const = default;
};

// Deterministic under seed. Each example is a chain of n_steps add/subtract
// operations over small integers; every intermediate stays in [1, 98].
std::vector<TrainingExample> generate_corpus(uint64_t seed, int n_examples,
                                             int n_steps,
                                             const std::string& split = "train");

enum class EncodeFormat { think_tags, latent_stage };

struct EncodedExample {
    std::vector<int> ids;         // latent steps appear as placeholder ids
    std::vector<bool> loss_mask;  // true exactly on response tokens
    int question_len = 0;
    int n_latents = 0;
    int latent_start = -1;  // index of the first placeholder, -1 if none
};

// think_tags: question <think> steps </think> <answer> \boxed{...} </answer>.
// latent_stage(k): question, latent block with 2k placeholders, the steps
// after the first k, then the answer block. Throws std::out_of_range when k
// exceeds the step count.
EncodedExample encode_example(const TrainingExample& ex, const Tokenizer& tok,
                              EncodeFormat format, int stage_k = 0);

// Token-wise removal variant: drops the first k * tokens_per_latent tokens of
// the concatenated step stream (truncating at the end of the steps) and
// inserts 2k placeholders.
EncodedExample encode_example_token_wise(const TrainingExample& ex,
                                         const Tokenizer& tok, int stage_k,
                                         int tokens_per_latent);

// One JSON object per line: question, steps, answer, split.
void write_dataset(const std::string& path,
                   const std::vector<TrainingExample>& examples);
std::vector<TrainingExample> read_dataset(const std::string& path);

// Digits of a non-negative integer as space-separated tokens ("47" -> "4 7").
std::string spell_number(int64_t v);

}  // namespace lst
