#include "lst/grpo.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace lst {

namespace {

// Decoded (language-mode) token ids of a generated sequence, in order.
std::vector<int> completion_tokens(const HybridSequence& seq) {
    std::vector<int> out;
    for (size_t i = 0; i < seq.elements.size(); ++i) {
        if (!std::isnan(seq.logprobs[i])) out.push_back(seq.elements[i].token);
    }
    return out;
}

}  // namespace

std::vector<RolloutRecord> rollout_group(const ModelParams& params,
                                         const TrainingExample& question,
                                         int question_id, const Tokenizer& tok,
                                         const GrpoConfig& cfg,
                                         std::mt19937_64& rng) {
    if (cfg.group_size < 2) throw std::invalid_argument("grpo: group_size < 2");
    const std::vector<int> prompt = tok.encode(question.question);
    GenerateOptions opts;
    opts.mode = cfg.mode;
    opts.latent_steps = cfg.latent_steps;
    opts.greedy = cfg.temperature <= 0.0;
    opts.temperature = cfg.temperature;
    opts.max_new_tokens = cfg.max_completion_len;
    opts.rng = &rng;

    std::vector<RolloutRecord> records;
    for (int g = 0; g < cfg.group_size; ++g) {
        RolloutRecord rec;
        rec.question_id = question_id;
        rec.group_id = g;
        rec.prompt = prompt;
        rec.seq = generate(params, prompt, tok.specials(), opts);
        rec.text = rec.seq.render_completion(tok);
        for (double lp : rec.seq.logprobs) {
            if (!std::isnan(lp)) rec.old_logprobs.push_back(lp);
        }
        rec.reward = cfg.mode == GenerateOptions::Mode::latent
                         ? score_latent(rec.text, question.answer)
                         : score_language(rec.text, question.answer);
        records.push_back(std::move(rec));
    }
    return records;
}

std::vector<double> compute_advantages(const std::vector<double>& rewards,
                                       double advantage_eps) {
    if (rewards.size() < 2) throw std::invalid_argument("grpo: group of size < 2");
    const double n = static_cast<double>(rewards.size());
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    const double stddev = std::sqrt(var / n);
    std::vector<double> adv(rewards.size());
    for (size_t i = 0; i < rewards.size(); ++i) {
        adv[i] = (rewards[i] - mean) / (stddev + advantage_eps);
    }
    return adv;
}

Tensor record_policy_loss(const Tensor& logits, int first_completion_row,
                          const std::vector<int>& completion,
                          const std::vector<double>& old_logprobs,
                          double advantage, double tau, double clip_epsilon,
                          int* clipped_count) {
    const size_t m = completion.size();
    if (old_logprobs.size() != m) {
        throw std::invalid_argument("grpo: completion/logprob length mismatch");
    }
    std::vector<int64_t> rows(m), cols(m);
    for (size_t j = 0; j < m; ++j) {
        rows[j] = first_completion_row - 1 + static_cast<int64_t>(j);
        cols[j] = completion[j];
    }
    Tensor lsm = log_softmax_rows(scale(logits, 1.0 / tau));
    Tensor new_lp = gather2d(lsm, rows, cols);
    Tensor old_lp = Tensor::from_values({static_cast<int64_t>(m), 1},
                                        std::vector<double>(old_logprobs));
    Tensor ratio = exp_(sub(new_lp, old_lp));
    if (clipped_count) {
        for (double r : ratio.values()) {
            if (r < 1.0 - clip_epsilon || r > 1.0 + clip_epsilon) ++*clipped_count;
        }
    }
    Tensor unclipped = scale(ratio, advantage);
    Tensor clipped =
        scale(clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon), advantage);
    // Negated clipped surrogate, summed over this record's tokens.
    return scale(sum_all(minimum(unclipped, clipped)), -1.0);
}

GrpoStepMetrics grpo_step(ModelParams& params, const ModelParams& reference,
                          const std::vector<RolloutRecord>& records,
                          const Tokenizer& tok, const GrpoConfig& cfg,
                          Optimizer& optimizer, double grad_clip) {
    if (records.empty()) throw std::invalid_argument("grpo_step: no records");
    const SpecialTokens& sp = tok.specials();
    const double tau = cfg.temperature <= 0.0 ? 1.0 : cfg.temperature;

    std::vector<double> rewards;
    for (const RolloutRecord& r : records) rewards.push_back(r.reward.total);
    const std::vector<double> advantages =
        compute_advantages(rewards, cfg.advantage_eps);

    GrpoStepMetrics metrics;
    Tape tape;
    Tensor policy_sum, kl_sum;
    int total_tokens = 0;
    int clipped = 0;
    double kl_value_sum = 0.0;

    for (size_t ri = 0; ri < records.size(); ++ri) {
        const RolloutRecord& rec = records[ri];
        const std::vector<int> completion = completion_tokens(rec.seq);
        if (completion.empty()) continue;

        // Rebuild the sequence in the training graph; latent-mode latents are
        // regenerated so gradients flow through the chain while latent
        // positions contribute no loss terms.
        HybridSequence seq;
        for (int id : rec.prompt) seq.push_token(id);
        seq.prompt_len = rec.prompt.size();
        if (cfg.mode == GenerateOptions::Mode::latent) {
            seq.push_token(sp.start_latent);
            for (int c = 0; c < cfg.latent_steps; ++c) {
                ForwardResult r = forward(params, seq);
                seq.push_latent(slice_rows(r.hidden, r.hidden.rows() - 1, 1));
            }
            seq.push_token(sp.end_latent);
        }
        const int first_completion_row = static_cast<int>(seq.size());
        for (int id : completion) seq.push_token(id);

        ForwardResult fwd = forward(params, seq);
        Tensor rec_loss =
            record_policy_loss(fwd.logits, first_completion_row, completion,
                               rec.old_logprobs, advantages[ri], tau,
                               cfg.clip_epsilon, &clipped);
        policy_sum = policy_sum.defined() ? add(policy_sum, rec_loss) : rec_loss;

        if (cfg.kl_coeff != 0.0 || true) {  // KL is always reported
            Tensor new_rows = slice_rows(fwd.logits, first_completion_row - 1,
                                         static_cast<int64_t>(completion.size()));
            Tensor ref_rows;
            {
                NoGradScope ng;
                ForwardResult ref_fwd = forward(reference, seq);
                ref_rows = slice_rows(ref_fwd.logits, first_completion_row - 1,
                                      static_cast<int64_t>(completion.size()));
            }
            Tensor kl_vec = categorical_kl(scale(new_rows, 1.0 / tau),
                                           scale(ref_rows.detach(), 1.0 / tau));
            for (double k : kl_vec.values()) kl_value_sum += k;
            if (cfg.kl_coeff != 0.0) {
                Tensor k = sum_all(kl_vec);
                kl_sum = kl_sum.defined() ? add(kl_sum, k) : k;
            }
        }
        total_tokens += static_cast<int>(completion.size());
    }

    if (total_tokens == 0 || !policy_sum.defined()) {
        throw std::runtime_error("grpo_step: no decoded tokens in batch");
    }
    Tensor loss = scale(policy_sum, 1.0 / total_tokens);
    if (kl_sum.defined()) {
        loss = add(loss, scale(kl_sum, cfg.kl_coeff / total_tokens));
    }
    const double loss_value = loss.item();
    if (!std::isfinite(loss_value)) {
        throw std::runtime_error("grpo_step: loss is not finite");
    }
    tape.backward(loss);
    auto named = params.named_params();
    clip_grad_norm(named, grad_clip);
    optimizer.step(named);
    optimizer.zero_grad(named);

    for (size_t i = 0; i < records.size(); ++i) {
        metrics.mean_reward += records[i].reward.total;
        metrics.mean_accuracy_reward += records[i].reward.accuracy;
        metrics.mean_format_reward += records[i].reward.format;
        metrics.mean_advantage += advantages[i];
    }
    const double nr = static_cast<double>(records.size());
    metrics.mean_reward /= nr;
    metrics.mean_accuracy_reward /= nr;
    metrics.mean_format_reward /= nr;
    metrics.mean_advantage /= nr;
    metrics.clip_fraction = static_cast<double>(clipped) / total_tokens;
    metrics.kl = kl_value_sum / total_tokens;
    metrics.loss = loss_value;
    return metrics;
}

void write_rollout_dump(const std::string& path,
                        const std::vector<RolloutRecord>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("rollout dump: cannot open " + path);
    for (const RolloutRecord& r : records) {
        nlohmann::json j;
        j["question_id"] = r.question_id;
        j["group_id"] = r.group_id;
        j["text"] = r.text;
        j["accuracy_reward"] = r.reward.accuracy;
        j["format_reward"] = r.reward.format;
        j["total_reward"] = r.reward.total;
        j["old_logprobs"] = r.old_logprobs;
        out << j.dump() << '\n';
    }
}

}  // namespace lst
