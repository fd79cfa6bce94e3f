#include "lst/model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace lst {

namespace {

Tensor randn(Shape shape, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(static_cast<size_t>(shape[0] * shape[1]));
    for (double& x : v) x = dist(rng);
    return Tensor::from_values(std::move(shape), std::move(v));
}

constexpr double kInitStd = 0.02;

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, uint64_t seed) {
    if (cfg.vocab_size <= 0) throw std::invalid_argument("model: vocab_size not set");
    if (cfg.hidden_dim % cfg.n_heads != 0) {
        throw std::invalid_argument("model: hidden_dim not divisible by n_heads");
    }
    std::mt19937_64 rng(seed);
    const int64_t d = cfg.hidden_dim, v = cfg.vocab_size;
    ModelParams p;
    p.config = cfg;
    p.tok_emb = randn({v, d}, kInitStd, rng);
    p.pos_emb = randn({cfg.max_context, d}, kInitStd, rng);
    for (int l = 0; l < cfg.n_layers; ++l) {
        LayerParams lp;
        lp.wq = randn({d, d}, kInitStd, rng);
        lp.wk = randn({d, d}, kInitStd, rng);
        lp.wv = randn({d, d}, kInitStd, rng);
        lp.wo = randn({d, d}, kInitStd, rng);
        lp.ln1_g = Tensor::full({1, d}, 1.0);
        lp.ln1_b = Tensor::zeros({1, d});
        lp.w1 = randn({d, 4 * d}, kInitStd, rng);
        lp.w2 = randn({4 * d, d}, kInitStd, rng);
        lp.ln2_g = Tensor::full({1, d}, 1.0);
        lp.ln2_b = Tensor::zeros({1, d});
        p.layers.push_back(std::move(lp));
    }
    p.final_g = Tensor::full({1, d}, 1.0);
    p.final_b = Tensor::zeros({1, d});
    p.lm_head = randn({d, v}, kInitStd, rng);
    p.set_trainable(true);
    return p;
}

std::vector<NamedTensor> ModelParams::named_params() {
    std::vector<NamedTensor> out;
    out.push_back({"tok_emb", tok_emb});
    out.push_back({"pos_emb", pos_emb});
    for (size_t l = 0; l < layers.size(); ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        LayerParams& lp = layers[l];
        out.push_back({pre + "wq", lp.wq});
        out.push_back({pre + "wk", lp.wk});
        out.push_back({pre + "wv", lp.wv});
        out.push_back({pre + "wo", lp.wo});
        out.push_back({pre + "ln1_g", lp.ln1_g});
        out.push_back({pre + "ln1_b", lp.ln1_b});
        out.push_back({pre + "w1", lp.w1});
        out.push_back({pre + "w2", lp.w2});
        out.push_back({pre + "ln2_g", lp.ln2_g});
        out.push_back({pre + "ln2_b", lp.ln2_b});
    }
    out.push_back({"final_g", final_g});
    out.push_back({"final_b", final_b});
    out.push_back({"lm_head", lm_head});
    return out;
}

ModelParams ModelParams::clone() const {
    ModelParams copy = *this;
    auto deep = [](Tensor& t) {
        const bool rg = t.requires_grad();
        t = t.detach();
        t.set_requires_grad(rg);
    };
    deep(copy.tok_emb);
    deep(copy.pos_emb);
    for (LayerParams& lp : copy.layers) {
        deep(lp.wq);
        deep(lp.wk);
        deep(lp.wv);
        deep(lp.wo);
        deep(lp.ln1_g);
        deep(lp.ln1_b);
        deep(lp.w1);
        deep(lp.w2);
        deep(lp.ln2_g);
        deep(lp.ln2_b);
    }
    deep(copy.final_g);
    deep(copy.final_b);
    deep(copy.lm_head);
    return copy;
}

void ModelParams::set_trainable(bool trainable) {
    for (NamedTensor& nt : named_params()) nt.tensor.set_requires_grad(trainable);
}

void HybridSequence::push_token(int id) {
    elements.push_back({id, Tensor()});
    logprobs.push_back(std::numeric_limits<double>::quiet_NaN());
}

void HybridSequence::push_latent(Tensor h) {
    elements.push_back({-1, std::move(h)});
    logprobs.push_back(std::numeric_limits<double>::quiet_NaN());
}

int HybridSequence::latent_count() const {
    int c = 0;
    for (const Element& e : elements) c += e.is_latent() ? 1 : 0;
    return c;
}

std::vector<int> HybridSequence::ids_with_placeholder(int placeholder_id) const {
    std::vector<int> ids;
    ids.reserve(elements.size());
    for (const Element& e : elements) {
        ids.push_back(e.is_latent() ? placeholder_id : e.token);
    }
    return ids;
}

std::string HybridSequence::render(const Tokenizer& tok) const {
    return tok.decode(ids_with_placeholder(tok.specials().latent_placeholder));
}

std::string HybridSequence::render_completion(const Tokenizer& tok) const {
    std::vector<int> ids = ids_with_placeholder(tok.specials().latent_placeholder);
    ids.erase(ids.begin(), ids.begin() + std::min(prompt_len, ids.size()));
    return tok.decode(ids);
}

HybridSequence sequence_from_tokens(const std::vector<int>& ids,
                                    size_t prompt_len) {
    HybridSequence seq;
    for (int id : ids) seq.push_token(id);
    seq.prompt_len = prompt_len;
    return seq;
}

namespace {

Tensor transformer_body(const ModelParams& p, Tensor x) {
    const int64_t d = p.config.hidden_dim;
    const int64_t heads = p.config.n_heads;
    const int64_t dh = d / heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (const LayerParams& lp : p.layers) {
        Tensor a = layer_norm(x, lp.ln1_g, lp.ln1_b);
        Tensor q = matmul(a, lp.wq);
        Tensor k = matmul(a, lp.wk);
        Tensor v = matmul(a, lp.wv);
        std::vector<Tensor> head_out;
        head_out.reserve(heads);
        for (int64_t h = 0; h < heads; ++h) {
            Tensor qh = slice_cols(q, h * dh, dh);
            Tensor kh = slice_cols(k, h * dh, dh);
            Tensor vh = slice_cols(v, h * dh, dh);
            Tensor scores = scale(matmul(qh, transpose(kh)), att_scale);
            Tensor probs = softmax_rows(causal_mask(scores));
            head_out.push_back(matmul(probs, vh));
        }
        x = add(x, matmul(concat_cols(head_out), lp.wo));
        Tensor m = layer_norm(x, lp.ln2_g, lp.ln2_b);
        x = add(x, matmul(silu(matmul(m, lp.w1)), lp.w2));
    }
    return layer_norm(x, p.final_g, p.final_b);
}

ForwardResult finish_forward(const ModelParams& p, Tensor x) {
    ForwardResult r;
    r.hidden = transformer_body(p, std::move(x));
    r.logits = matmul(r.hidden, p.lm_head);
    return r;
}

}  // namespace

ForwardResult forward(const ModelParams& params, const HybridSequence& seq) {
    const int64_t t = static_cast<int64_t>(seq.elements.size());
    if (t == 0) throw std::invalid_argument("forward: empty sequence");
    if (t > params.config.max_context) {
        throw std::length_error("forward: sequence of length " + std::to_string(t) +
                                " exceeds max_context " +
                                std::to_string(params.config.max_context));
    }
    // Assemble input embeddings: token runs via the embedding matrix, latent
    // elements injected directly.
    Tensor x;
    std::vector<int> run;
    auto flush_run = [&] {
        if (run.empty()) return;
        Tensor e = embedding_lookup(params.tok_emb, run);
        x = x.defined() ? concat_rows(x, e) : e;
        run.clear();
    };
    for (const HybridSequence::Element& e : seq.elements) {
        if (e.is_latent()) {
            flush_run();
            x = x.defined() ? concat_rows(x, e.latent) : e.latent;
        } else {
            run.push_back(e.token);
        }
    }
    flush_run();
    x = add(x, slice_rows(params.pos_emb, 0, t));
    return finish_forward(params, std::move(x));
}

ForwardResult forward_tokens(const ModelParams& params,
                             const std::vector<int>& ids) {
    const int64_t t = static_cast<int64_t>(ids.size());
    if (t == 0) throw std::invalid_argument("forward_tokens: empty sequence");
    if (t > params.config.max_context) {
        throw std::length_error("forward_tokens: sequence exceeds max_context");
    }
    Tensor x = add(embedding_lookup(params.tok_emb, ids),
                   slice_rows(params.pos_emb, 0, t));
    return finish_forward(params, std::move(x));
}

namespace {

// Log-probabilities of the last row under softmax(logits / tau).
std::vector<double> last_row_log_probs(const Tensor& logits, double tau) {
    const int64_t v = logits.cols();
    const int64_t r = logits.rows() - 1;
    std::vector<double> lp(v);
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < v; ++j) {
        lp[j] = logits.at(r, j) / tau;
        mx = std::max(mx, lp[j]);
    }
    double z = 0.0;
    for (int64_t j = 0; j < v; ++j) z += std::exp(lp[j] - mx);
    const double lse = mx + std::log(z);
    for (int64_t j = 0; j < v; ++j) lp[j] -= lse;
    return lp;
}

int pick_token(const std::vector<double>& log_probs, bool greedy,
               std::mt19937_64* rng) {
    if (greedy) {
        int best = 0;
        for (size_t j = 1; j < log_probs.size(); ++j) {
            if (log_probs[j] > log_probs[best]) best = static_cast<int>(j);
        }
        return best;
    }
    if (!rng) throw std::invalid_argument("generate: sampling requires an rng");
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(*rng);
    double acc = 0.0;
    for (size_t j = 0; j < log_probs.size(); ++j) {
        acc += std::exp(log_probs[j]);
        if (u < acc) return static_cast<int>(j);
    }
    return static_cast<int>(log_probs.size()) - 1;
}

}  // namespace

HybridSequence generate(const ModelParams& params, const std::vector<int>& prompt,
                        const SpecialTokens& sp, const GenerateOptions& opts) {
    if (prompt.empty()) throw std::invalid_argument("generate: empty prompt");
    if (opts.mode == GenerateOptions::Mode::latent && opts.latent_steps < 0) {
        throw std::invalid_argument("generate: negative latent step count");
    }
    HybridSequence seq;
    for (int id : prompt) seq.push_token(id);
    seq.prompt_len = prompt.size();

    if (opts.mode == GenerateOptions::Mode::latent) {
        seq.push_token(sp.start_latent);
        for (int c = 0; c < opts.latent_steps; ++c) {
            Tensor h;
            if (opts.build_graph) {
                ForwardResult r = forward(params, seq);
                h = slice_rows(r.hidden, r.hidden.rows() - 1, 1);
            } else {
                NoGradScope ng;
                ForwardResult r = forward(params, seq);
                h = slice_rows(r.hidden, r.hidden.rows() - 1, 1);
            }
            seq.push_latent(std::move(h));
        }
        seq.push_token(sp.end_latent);
    }

    const double tau = opts.greedy ? 1.0 : opts.temperature;
    for (int n = 0; n < opts.max_new_tokens; ++n) {
        if (static_cast<int>(seq.size()) >= params.config.max_context) break;
        std::vector<double> lp;
        {
            NoGradScope ng;
            ForwardResult r = forward(params, seq);
            lp = last_row_log_probs(r.logits, tau);
        }
        const int id = pick_token(lp, opts.greedy, opts.rng);
        seq.push_token(id);
        seq.logprobs.back() = lp[id];
        if (id == sp.eos) break;
    }
    return seq;
}

int count_generated_tokens(const HybridSequence& seq) {
    return static_cast<int>(seq.elements.size() - seq.prompt_len);
}

bool latent_block_valid(const HybridSequence& seq, const SpecialTokens& sp,
                        int expected_latents) {
    const size_t t = seq.elements.size();
    size_t i = seq.prompt_len;
    if (i >= t || seq.elements[i].is_latent() ||
        seq.elements[i].token != sp.start_latent) {
        return false;
    }
    ++i;
    int latents = 0;
    while (i < t && seq.elements[i].is_latent()) {
        ++latents;
        ++i;
    }
    if (latents != expected_latents) return false;
    if (i >= t || seq.elements[i].token != sp.end_latent) return false;
    // No latent elements outside the block.
    return seq.latent_count() == latents;
}

}  // namespace lst
