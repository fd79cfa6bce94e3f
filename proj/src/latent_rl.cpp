#include "lst/latent_rl.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lst/checkpoint.hpp"

namespace lst {

ValueHead ValueHead::init(int dim, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 0.02);
    std::vector<double> wv(static_cast<size_t>(dim));
    for (double& v : wv) v = dist(rng);
    ValueHead head;
    head.w = Tensor::from_values({dim, 1}, std::move(wv), true);
    head.b = Tensor::zeros({1, 1}, true);
    return head;
}

std::vector<NamedTensor> ValueHead::named_params() {
    return {{"value_w", w}, {"value_b", b}};
}

ValueHead ValueHead::clone() const {
    ValueHead c;
    c.w = w.detach();
    c.w.set_requires_grad(w.requires_grad());
    c.b = b.detach();
    c.b.set_requires_grad(b.requires_grad());
    return c;
}

Tensor ValueHead::score(const Tensor& latents) const {
    // The 1x1 bias row-broadcasts over the batch column.
    return sigmoid(add(matmul(latents, w), b));
}

namespace {

// Head score with the head parameters entering as constants (used by the
// policy update so the head stays bitwise frozen).
Tensor frozen_score(const ValueHead& head, const Tensor& latents) {
    return sigmoid(add(matmul(latents, head.w.detach()), head.b.detach()));
}

double f1_at_half(const std::vector<double>& scores,
                  const std::vector<double>& labels) {
    double tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= 0.5;
        const bool pos = labels[i] >= 0.5;
        if (pred && pos) ++tp;
        else if (pred && !pos) ++fp;
        else if (!pred && pos) ++fn;
    }
    if (tp == 0) return 0.0;
    return 2 * tp / (2 * tp + fp + fn);
}

// Mann-Whitney ROC-AUC with tie correction.
double roc_auc(const std::vector<double>& scores,
               const std::vector<double>& labels) {
    std::vector<size_t> order(scores.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(scores.size());
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() &&
               scores[order[j + 1]] == scores[order[i]]) {
            ++j;
        }
        const double mean_rank = (static_cast<double>(i + 1) + (j + 1)) / 2.0;
        for (size_t k = i; k <= j; ++k) rank[order[k]] = mean_rank;
        i = j + 1;
    }
    double pos = 0, rank_sum = 0;
    for (size_t k = 0; k < labels.size(); ++k) {
        if (labels[k] >= 0.5) {
            ++pos;
            rank_sum += rank[k];
        }
    }
    const double neg = static_cast<double>(labels.size()) - pos;
    if (pos == 0 || neg == 0) {
        throw std::runtime_error(
            "value head: reward data contains a single class");
    }
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

}  // namespace

std::vector<ValueTrainingPair> collect_value_data(
    const ModelParams& params, const std::vector<TrainingExample>& questions,
    const Tokenizer& tok, const LatentRlConfig& cfg, std::mt19937_64& rng) {
    GenerateOptions opts;
    opts.mode = GenerateOptions::Mode::latent;
    opts.latent_steps = cfg.latent_steps;
    opts.greedy = cfg.temperature <= 0.0;
    opts.temperature = cfg.temperature;
    opts.max_new_tokens = cfg.max_completion_len;
    opts.rng = &rng;

    std::vector<ValueTrainingPair> pairs;
    for (const TrainingExample& q : questions) {
        const std::vector<int> prompt = tok.encode(q.question);
        for (int g = 0; g < cfg.rollouts_per_question; ++g) {
            HybridSequence seq = generate(params, prompt, tok.specials(), opts);
            const double reward =
                accuracy_reward(seq.render_completion(tok), q.answer);
            for (const HybridSequence::Element& e : seq.elements) {
                if (e.is_latent()) pairs.push_back({e.latent.values(), reward});
            }
        }
    }
    return pairs;
}

ValueHeadMetrics evaluate_value_head(const ValueHead& head,
                                     const std::vector<ValueTrainingPair>& pairs) {
    if (pairs.empty()) throw std::invalid_argument("value head: no pairs");
    const int64_t n = static_cast<int64_t>(pairs.size());
    const int64_t d = static_cast<int64_t>(pairs[0].embedding.size());
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(n * d));
    std::vector<double> labels;
    for (const ValueTrainingPair& p : pairs) {
        flat.insert(flat.end(), p.embedding.begin(), p.embedding.end());
        labels.push_back(p.reward);
    }
    NoGradScope ng;
    Tensor x = Tensor::from_values({n, d}, std::move(flat));
    Tensor probs = head.score(x);
    ValueHeadMetrics m;
    m.bce = binary_cross_entropy(probs, labels).item();
    m.f1 = f1_at_half(probs.values(), labels);
    m.roc_auc = roc_auc(probs.values(), labels);
    return m;
}

ValueHeadMetrics train_value_head(ValueHead& head,
                                  const std::vector<ValueTrainingPair>& pairs,
                                  const LatentRlConfig& cfg) {
    if (pairs.empty()) throw std::invalid_argument("value head: no pairs");
    bool has_pos = false, has_neg = false;
    for (const ValueTrainingPair& p : pairs) {
        (p.reward >= 0.5 ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) {
        throw std::runtime_error(
            "value head: reward data contains a single class");
    }
    const int64_t n = static_cast<int64_t>(pairs.size());
    const int64_t d = static_cast<int64_t>(pairs[0].embedding.size());
    if (d != head.w.rows()) {
        throw std::invalid_argument("value head: embedding dim mismatch");
    }
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(n * d));
    std::vector<double> labels;
    for (const ValueTrainingPair& p : pairs) {
        if (static_cast<int64_t>(p.embedding.size()) != d) {
            throw std::invalid_argument("value head: ragged embeddings");
        }
        flat.insert(flat.end(), p.embedding.begin(), p.embedding.end());
        labels.push_back(p.reward);
    }
    Tensor x = Tensor::from_values({n, d}, std::move(flat));

    AdamW opt(AdamW::Config{cfg.value_lr, 0.9, 0.999, 1e-8, 0.0});
    auto named = head.named_params();
    for (int epoch = 0; epoch < cfg.value_epochs; ++epoch) {
        Tape tape;
        Tensor loss = binary_cross_entropy(head.score(x), labels);
        tape.backward(loss);
        opt.step(named);
        opt.zero_grad(named);
    }
    return evaluate_value_head(head, pairs);
}

LatentRlStepMetrics latent_rl_step(ModelParams& params, ValueHead& head,
                                   const std::vector<TrainingExample>& questions,
                                   const Tokenizer& tok,
                                   const LatentRlConfig& cfg,
                                   Optimizer& optimizer, double grad_clip) {
    if (questions.empty()) throw std::invalid_argument("latent_rl_step: no questions");
    const SpecialTokens& sp = tok.specials();
    LatentRlStepMetrics metrics;
    Tape tape;
    Tensor score_sum;
    double raw_score_sum = 0.0;
    int n_latents = 0;
    std::vector<HybridSequence> chains;
    std::vector<std::vector<double>> latent_values;  // for the head refit

    for (const TrainingExample& q : questions) {
        HybridSequence seq;
        for (int id : tok.encode(q.question)) seq.push_token(id);
        seq.prompt_len = seq.size();
        seq.push_token(sp.start_latent);
        std::vector<Tensor> latents;
        for (int c = 0; c < cfg.latent_steps; ++c) {
            ForwardResult r = forward(params, seq);
            Tensor h = slice_rows(r.hidden, r.hidden.rows() - 1, 1);
            latents.push_back(h);
            seq.push_latent(std::move(h));
        }
        seq.push_token(sp.end_latent);
        for (const Tensor& h : latents) {
            Tensor rho = frozen_score(head, h);
            raw_score_sum += rho.item();
            Tensor s = sum_all(cfg.log_score ? log_(rho) : rho);
            score_sum = score_sum.defined() ? add(score_sum, s) : s;
            latent_values.push_back(h.values());
        }
        n_latents += cfg.latent_steps;
        chains.push_back(std::move(seq));
    }

    // L_LAT = -mean over latent positions of the head's score.
    Tensor loss = scale(score_sum, -1.0 / n_latents);
    const double loss_value = loss.item();
    if (!std::isfinite(loss_value)) {
        throw std::runtime_error("latent_rl_step: loss is not finite");
    }
    tape.backward(loss);
    auto named = params.named_params();
    clip_grad_norm(named, grad_clip);
    optimizer.step(named);
    optimizer.zero_grad(named);

    // Observability: decode greedily after each (pre-update) latent chain and
    // compare the realized rewards with what the head promised.
    std::vector<double> realized(questions.size(), 0.0);
    {
        NoGradScope ng;
        for (size_t qi = 0; qi < questions.size(); ++qi) {
            HybridSequence& seq = chains[qi];
            for (int t = 0; t < cfg.max_completion_len; ++t) {
                if (seq.size() >= static_cast<size_t>(params.config.max_context)) break;
                ForwardResult r = forward(params, seq);
                Tensor last = slice_rows(r.logits, r.logits.rows() - 1, 1);
                const std::vector<double>& v = last.values();
                int best = 0;
                for (size_t j = 1; j < v.size(); ++j) {
                    if (v[j] > v[best]) best = static_cast<int>(j);
                }
                seq.push_token(best);
                if (best == sp.eos) break;
            }
            const RewardBreakdown rb =
                score_latent(seq.render_completion(tok), questions[qi].answer);
            realized[qi] = rb.accuracy;
            metrics.accuracy_reward += rb.accuracy;
            metrics.format_reward += rb.format;
        }
        metrics.accuracy_reward /= static_cast<double>(questions.size());
        metrics.format_reward /= static_cast<double>(questions.size());
    }

    // Head BCE on this batch's (latent, realized accuracy) pairs; one refit
    // step in alternating mode (the policy tensors never enter this graph).
    std::vector<ValueTrainingPair> batch_pairs;
    for (size_t qi = 0; qi < questions.size(); ++qi) {
        for (int c = 0; c < cfg.latent_steps; ++c) {
            batch_pairs.push_back(
                {latent_values[qi * cfg.latent_steps + c], realized[qi]});
        }
    }
    {
        const int64_t n = static_cast<int64_t>(batch_pairs.size());
        const int64_t d = head.w.rows();
        std::vector<double> flat;
        std::vector<double> labels;
        for (const ValueTrainingPair& p : batch_pairs) {
            flat.insert(flat.end(), p.embedding.begin(), p.embedding.end());
            labels.push_back(p.reward);
        }
        Tensor x = Tensor::from_values({n, d}, std::move(flat));
        if (cfg.value_head_mode == ValueHeadMode::alternating) {
            Tape head_tape;
            Tensor bce = binary_cross_entropy(head.score(x), labels);
            metrics.head_bce = bce.item();
            head_tape.backward(bce);
            Sgd head_opt(cfg.value_lr);
            auto head_named = head.named_params();
            head_opt.step(head_named);
            head_opt.zero_grad(head_named);
        } else {
            NoGradScope ng;
            metrics.head_bce = binary_cross_entropy(head.score(x), labels).item();
        }
    }

    metrics.policy_loss = loss_value;
    metrics.mean_head_score = raw_score_sum / n_latents;
    metrics.head_true_gap = metrics.mean_head_score - metrics.accuracy_reward;
    return metrics;
}

void save_value_head(const std::string& path, ModelParams& params,
                     ValueHead& head) {
    save_model(path, params, head.named_params());
}

ValueHead load_value_head(const std::string& path) {
    Checkpoint ckpt = read_checkpoint(path);
    const CheckpointTensor* w = ckpt.find("value_w");
    const CheckpointTensor* b = ckpt.find("value_b");
    if (!w || !b) {
        throw std::runtime_error("checkpoint: missing value head tensors in " +
                                 path);
    }
    ValueHead head;
    head.w = Tensor::from_values(w->shape, w->values, true);
    head.b = Tensor::from_values(b->shape, b->values, true);
    return head;
}

}  // namespace lst
