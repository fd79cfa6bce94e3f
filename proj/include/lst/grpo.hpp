#pragma once

// Group-relative policy optimization with a clipped surrogate, group
// mean/std advantage normalization and an optional KL penalty against a
// frozen reference policy. Latent positions carry no loss terms.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lst/model.hpp"
#include "lst/optimizer.hpp"
#include "lst/rewards.hpp"

namespace lst {

struct GrpoConfig {
    int group_size = 8;
    double temperature = 0.7;
    double kl_coeff = 0.0;  // 0.64 for latent-mode runs
    double clip_epsilon = 0.2;
    double advantage_eps = 1e-4;
    int max_completion_len = 64;
    GenerateOptions::Mode mode = GenerateOptions::Mode::language;
    int latent_steps = 6;  // latent mode only
};

struct RolloutRecord {
    int question_id = 0;
    int group_id = 0;
    HybridSequence seq;
    std::string text;
    std::vector<int> prompt;
    std::vector<double> old_logprobs;  // one per decoded token
    RewardBreakdown reward;
};

std::vector<RolloutRecord> rollout_group(const ModelParams& params,
                                         const TrainingExample& question,
                                         int question_id, const Tokenizer& tok,
                                         const GrpoConfig& cfg,
                                         std::mt19937_64& rng);

// (r_i - mean) / (std + advantage_eps), population std.
std::vector<double> compute_advantages(const std::vector<double>& rewards,
                                       double advantage_eps);

struct GrpoStepMetrics {
    double mean_reward = 0.0;
    double mean_accuracy_reward = 0.0;
    double mean_format_reward = 0.0;
    double mean_advantage = 0.0;
    double clip_fraction = 0.0;
    double kl = 0.0;
    double loss = 0.0;
};

// Negated clipped surrogate for one record, summed over its decoded tokens,
// given precomputed logits. The loss reads only the rows immediately
// preceding each decoded token, which is what makes latent positions inert;
// exposed so that property can be checked by logit substitution.
Tensor record_policy_loss(const Tensor& logits, int first_completion_row,
                          const std::vector<int>& completion,
                          const std::vector<double>& old_logprobs,
                          double advantage, double tau, double clip_epsilon,
                          int* clipped_count = nullptr);

// One optimizer step on a set of rollout records. Current-policy log-probs
// are recomputed in the training graph (latent-mode latents regenerated so
// gradients flow through the chain); the per-token clipped surrogate plus
// kl_coeff * KL(current || reference) is averaged over all decoded tokens.
GrpoStepMetrics grpo_step(ModelParams& params, const ModelParams& reference,
                          const std::vector<RolloutRecord>& records,
                          const Tokenizer& tok, const GrpoConfig& cfg,
                          Optimizer& optimizer, double grad_clip = 1.0);

void write_rollout_dump(const std::string& path,
                        const std::vector<RolloutRecord>& records);

}  // namespace lst
