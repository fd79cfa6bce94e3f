#pragma once

// Decoder-only transformer with a dual-mode autoregressive generator:
// language mode decodes tokens, latent mode feeds the final hidden state
// back as the next input embedding between special delimiter tokens.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lst/corpus.hpp"
#include "lst/optimizer.hpp"
#include "lst/tensor.hpp"

namespace lst {

struct ModelConfig {
    int vocab_size = 0;
    int hidden_dim = 64;
    int n_layers = 2;
    int n_heads = 2;
    int max_context = 160;

    bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
    Tensor wq, wk, wv, wo;      // D x D
    Tensor ln1_g, ln1_b;        // 1 x D
    Tensor w1, w2;              // D x 4D, 4D x D
    Tensor ln2_g, ln2_b;        // 1 x D
};

struct ModelParams {
    ModelConfig config;
    Tensor tok_emb;   // V x D
    Tensor pos_emb;   // max_context x D, learned absolute positions
    std::vector<LayerParams> layers;
    Tensor final_g, final_b;  // 1 x D
    Tensor lm_head;           // D x V

    static ModelParams init(const ModelConfig& cfg, uint64_t seed);

    // Views sharing storage with this model; optimizer steps through these
    // mutate the model in place.
    std::vector<NamedTensor> named_params();
    ModelParams clone() const;  // deep copy
    void set_trainable(bool trainable);
};

struct HybridSequence {
    struct Element {
        int token = -1;
        Tensor latent;  // 1 x D when this element is a latent step
        bool is_latent() const { return latent.defined(); }
    };

    std::vector<Element> elements;
    size_t prompt_len = 0;
    // Log-prob of each decoded token under the sampling policy, aligned with
    // elements; NaN at prompt, latent and delimiter positions.
    std::vector<double> logprobs;

    void push_token(int id);
    void push_latent(Tensor h);
    int latent_count() const;
    size_t size() const { return elements.size(); }

    // Token ids with each latent step replaced by the placeholder id.
    std::vector<int> ids_with_placeholder(int placeholder_id) const;
    std::string render(const Tokenizer& tok) const;
    // Text of the elements after the prompt only; this is what the reward
    // functions score.
    std::string render_completion(const Tokenizer& tok) const;
};

HybridSequence sequence_from_tokens(const std::vector<int>& ids,
                                    size_t prompt_len = 0);

struct ForwardResult {
    Tensor hidden;  // t x D, post final norm
    Tensor logits;  // t x V
};

// Token elements embed via the embedding matrix; latent elements inject
// their stored vector directly (the placeholder embedding row is never
// consumed). Throws on sequences longer than max_context.
ForwardResult forward(const ModelParams& params, const HybridSequence& seq);

// Latent-free reference path operating directly on token ids; used to check
// that the hybrid machinery is extensionally a vanilla transformer.
ForwardResult forward_tokens(const ModelParams& params,
                             const std::vector<int>& ids);

struct GenerateOptions {
    enum class Mode { language, latent };
    Mode mode = Mode::language;
    int latent_steps = 0;  // C, latent mode only
    bool greedy = true;
    double temperature = 1.0;
    int max_new_tokens = 64;
    std::mt19937_64* rng = nullptr;  // required for sampling
    // Keep the latent chain on the active tape so gradients can flow
    // through it; decoded tokens are never recorded.
    bool build_graph = false;
};

// Latent mode appends <|start-latent|>, performs exactly C latent steps,
// appends <|end-latent|>, then decodes in language mode until <eos> or
// max_new_tokens. Language mode skips the latent block entirely.
HybridSequence generate(const ModelParams& params, const std::vector<int>& prompt,
                        const SpecialTokens& sp, const GenerateOptions& opts);

// Generated positions after the prompt; each latent step counts as one token.
int count_generated_tokens(const HybridSequence& seq);

// Delimited, contiguous latent block with exactly expected_latents steps and
// no latent elements elsewhere.
bool latent_block_valid(const HybridSequence& seq, const SpecialTokens& sp,
                        int expected_latents);

}  // namespace lst
