#pragma once

// Standard SFT on response tokens and the multi-stage curriculum that
// progressively replaces language reasoning steps with latent steps.

#include <cstdint>
#include <string>
#include <vector>

#include "lst/corpus.hpp"
#include "lst/model.hpp"
#include "lst/tensor.hpp"

namespace lst {

struct SftConfig {
    int epochs = 1;
    int batch_size = 16;
    double lr = 1e-3;
    double weight_decay = 0.01;
    double grad_clip = 1.0;
    double lr_gamma = 0.8;
    int lr_step_size = 200;
    uint64_t seed = 0;
    int max_examples = 0;  // 0 = use the full corpus
};

enum class RemovalMode { step_wise, token_wise };

struct CurriculumSchedule {
    int n_stages = 3;
    int latents_per_removed_step = 2;  // fixed by the curriculum design
    int epochs_per_stage = 1;
    int final_stage_extra_epochs = 0;
    RemovalMode removal_mode = RemovalMode::step_wise;
    int tokens_per_latent = 12;  // token_wise only
    bool reset_optimizer_per_stage = true;
    int max_examples_per_stage = 0;        // 0 = all
    std::string stage_checkpoint_dir;      // empty = no per-stage checkpoints
};

struct LossTracePoint {
    int64_t step = 0;
    int stage = 0;
    double loss = 0.0;
};

struct TrainResult {
    std::vector<LossTracePoint> trace;
    int skipped_examples = 0;
};

// Next-token loss on one encoded example: logits at position i are scored
// against the token at i+1, restricted to positions whose successor is a
// response token. Latent placeholders in enc.ids are replaced by latent
// embeddings generated autoregressively; with build_latents the generation
// stays on the active tape so gradients flow through the chain.
Tensor example_loss(const ModelParams& params, const EncodedExample& enc,
                    const SpecialTokens& sp, bool build_latents = true);

// Same loss evaluated on a caller-provided hybrid sequence (used by tests
// that need to manipulate the latent inputs).
Tensor sequence_loss(const ModelParams& params, const HybridSequence& seq,
                     const std::vector<int>& target_ids,
                     const std::vector<bool>& loss_mask);

// Builds the training-time hybrid sequence for an encoding, generating
// latent embeddings autoregressively in place of the placeholders.
HybridSequence build_training_sequence(const ModelParams& params,
                                       const EncodedExample& enc,
                                       const SpecialTokens& sp,
                                       bool build_latents = true);

TrainResult train_sft(ModelParams& params,
                      const std::vector<TrainingExample>& corpus,
                      const Tokenizer& tok, const SftConfig& cfg);

// Stages k = 1..n_stages; n_stages == 0 degenerates to train_sft. Examples
// with fewer steps than the stage index are skipped and counted.
TrainResult train_coconut(ModelParams& params,
                          const std::vector<TrainingExample>& corpus,
                          const Tokenizer& tok, const SftConfig& cfg,
                          const CurriculumSchedule& schedule);

void write_loss_trace(const std::string& path,
                      const std::vector<LossTracePoint>& trace);

}  // namespace lst
