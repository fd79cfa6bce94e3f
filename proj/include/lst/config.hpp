#pragma once

// Run configuration: one JSON file drives every subcommand. Parsing is
// strict — unknown keys anywhere are rejected so a typo cannot silently
// fall back to a default.

#include <cstdint>
#include <string>

#include "lst/eval.hpp"
#include "lst/grpo.hpp"
#include "lst/latent_rl.hpp"
#include "lst/model.hpp"
#include "lst/sft.hpp"

namespace lst {

// Configuration and usage problems; the CLI maps these to exit code 1 and
// everything else (training/runtime failures) to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CorpusConfig {
    int n_train = 2000;
    int n_eval = 200;
    int n_steps = 3;
};

struct GrpoRunConfig {
    GrpoConfig step;
    int steps = 20;
    int questions_per_step = 2;
    double lr = 1e-5;
    double grad_clip = 1.0;
};

struct LatentRlRunConfig {
    LatentRlConfig step;
    int phase1_questions = 32;
    int steps = 20;
    int questions_per_step = 4;
    double lr = 1e-5;
    double grad_clip = 1.0;
};

struct PathsConfig {
    std::string train_dataset = "data/train.jsonl";
    std::string eval_dataset = "data/eval.jsonl";
    std::string checkpoint_dir = "runs";
    std::string metrics_dir = "runs";
};

struct RunConfig {
    uint64_t seed = 0;
    ModelConfig model;  // vocab_size filled from the tokenizer
    CorpusConfig corpus;
    SftConfig sft;
    CurriculumSchedule coconut;
    GrpoRunConfig grpo;
    LatentRlRunConfig latentrl;
    EvalConfig eval;
    PathsConfig paths;
};

// Both throw ConfigError on malformed JSON, unknown keys or bad values.
RunConfig parse_run_config(const std::string& json_text, int vocab_size);
RunConfig load_run_config(const std::string& path, int vocab_size);

}  // namespace lst
