#pragma once

// Two-phase latent-space RL. Phase 1 fits a linear-sigmoid value head on
// (latent embedding, accuracy reward) pairs with the policy frozen; phase 2
// updates the policy to maximize the head's score at latent positions with
// the head frozen. The gap between head score and realized reward is
// tracked as a reward-hacking signal.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lst/model.hpp"
#include "lst/optimizer.hpp"
#include "lst/rewards.hpp"

namespace lst {

struct ValueHead {
    Tensor w;  // D x 1
    Tensor b;  // 1 x 1

    static ValueHead init(int dim, uint64_t seed);

    std::vector<NamedTensor> named_params();
    ValueHead clone() const;

    // sigmoid(latents . w + b) for a batch of N latent rows -> N x 1.
    Tensor score(const Tensor& latents) const;
};

struct ValueTrainingPair {
    std::vector<double> embedding;
    double reward = 0.0;  // accuracy reward, 0 or 1
};

enum class ValueHeadMode { frozen, alternating };

struct LatentRlConfig {
    int latent_steps = 6;
    int rollouts_per_question = 4;  // phase-1 data collection
    double temperature = 0.7;
    int max_completion_len = 64;
    int value_epochs = 50;
    double value_lr = 1e-2;
    ValueHeadMode value_head_mode = ValueHeadMode::frozen;
    bool log_score = false;  // policy loss -log(score) instead of -score
    uint64_t seed = 0;
};

// Samples latent-mode rollouts for each question and pairs every latent
// embedding with the rollout's accuracy reward. The policy stays frozen.
std::vector<ValueTrainingPair> collect_value_data(
    const ModelParams& params, const std::vector<TrainingExample>& questions,
    const Tokenizer& tok, const LatentRlConfig& cfg, std::mt19937_64& rng);

struct ValueHeadMetrics {
    double bce = 0.0;
    double f1 = 0.0;       // at threshold 0.5
    double roc_auc = 0.0;  // rank-based
};

// Fits the head by full-batch BCE; throws if the pairs contain a single
// reward class (the head would learn a constant and ROC-AUC is undefined).
ValueHeadMetrics train_value_head(ValueHead& head,
                                  const std::vector<ValueTrainingPair>& pairs,
                                  const LatentRlConfig& cfg);

ValueHeadMetrics evaluate_value_head(const ValueHead& head,
                                     const std::vector<ValueTrainingPair>& pairs);

struct LatentRlStepMetrics {
    double policy_loss = 0.0;      // mean over latent positions of -score
    double mean_head_score = 0.0;  // head's value of the produced latents
    double head_bce = 0.0;         // head BCE on (latent, realized reward)
    double accuracy_reward = 0.0;  // greedy decode after the latent block
    double format_reward = 0.0;    // latent-mode format reward of the decode
    double head_true_gap = 0.0;    // mean_head_score - accuracy_reward
};

// One phase-2 policy update over a batch of questions: greedy latent chains
// built in the training graph, policy loss from the head's scores. During
// the policy update the head enters the graph as constants, so its
// parameters are bitwise unchanged and gradients flow only into the policy.
// In alternating mode the head is then refit with one BCE step on this
// batch's (latent, realized accuracy reward) pairs with the policy frozen;
// in frozen mode that BCE is merely reported.
LatentRlStepMetrics latent_rl_step(ModelParams& params, ValueHead& head,
                                   const std::vector<TrainingExample>& questions,
                                   const Tokenizer& tok,
                                   const LatentRlConfig& cfg,
                                   Optimizer& optimizer, double grad_clip = 1.0);

// Value-head checkpointing rides on the model format as extra tensors.
void save_value_head(const std::string& path, ModelParams& params,
                     ValueHead& head);
ValueHead load_value_head(const std::string& path);

}  // namespace lst
