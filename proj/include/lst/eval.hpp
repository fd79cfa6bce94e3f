#pragma once

// Held-out evaluation: unbiased pass@k from n samples per question, token
// counts, format compliance, and a sweep over the number of latent steps.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lst/model.hpp"
#include "lst/rewards.hpp"

namespace lst {

// 1 - C(n-c, k) / C(n, k): probability that at least one of k draws from
// n samples (c of them correct) is correct. Requires 0 <= c <= n, k <= n.
double pass_at_k(int n, int c, int k);

struct EvalConfig {
    GenerateOptions::Mode mode = GenerateOptions::Mode::language;
    int latent_steps = 6;
    int samples_per_question = 4;  // n
    double temperature = 0.7;      // sampled draws; 0 = all greedy
    int max_new_tokens = 64;
    uint64_t seed = 0;
    int max_questions = 0;  // 0 = all
};

struct QuestionRecord {
    int question_id = 0;
    int n_samples = 0;
    int n_correct = 0;
    double avg_tokens = 0.0;
    double avg_format = 0.0;
    std::string first_sample;
};

struct EvalReport {
    double pass_at_1 = 0.0;
    double pass_at_4 = 0.0;
    double avg_tokens = 0.0;
    double format_compliance = 0.0;  // fraction of samples with format >= 0.5
    std::vector<QuestionRecord> questions;
};

EvalReport evaluate(const ModelParams& params,
                    const std::vector<TrainingExample>& questions,
                    const Tokenizer& tok, const EvalConfig& cfg);

struct SweepEntry {
    int latent_steps = 0;
    bool ok = false;
    std::string error;  // set when this step count fails (context overflow)
    EvalReport report;
};

// Evaluates the same questions at each latent step count; a failure at one
// count is recorded in its entry instead of aborting the sweep.
std::vector<SweepEntry> latent_step_sweep(
    const ModelParams& params, const std::vector<TrainingExample>& questions,
    const Tokenizer& tok, EvalConfig cfg, const std::vector<int>& step_counts);

void write_eval_report(const std::string& path, const EvalReport& report);
void write_sweep_csv(const std::string& path,
                     const std::vector<SweepEntry>& entries);

}  // namespace lst
