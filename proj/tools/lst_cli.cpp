// Command-line workbench: data generation, the three trainers, evaluation
// and the latent-step sweep, all driven by one JSON config.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "lst/checkpoint.hpp"
#include "lst/config.hpp"
#include "lst/corpus.hpp"
#include "lst/eval.hpp"
#include "lst/grpo.hpp"
#include "lst/latent_rl.hpp"
#include "lst/model.hpp"
#include "lst/sft.hpp"

namespace fs = std::filesystem;
using namespace lst;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string checkpoint;  // input checkpoint override
    std::string out;         // output path override
    int64_t seed_override = -1;
};

RunConfig load_config(const CommonArgs& args, const Tokenizer& tok) {
    if (args.config_path.empty()) throw ConfigError("missing --config");
    RunConfig cfg = load_run_config(args.config_path, tok.vocab_size());
    if (args.seed_override >= 0) {
        cfg.seed = static_cast<uint64_t>(args.seed_override);
        cfg.sft.seed = cfg.seed;
        cfg.latentrl.step.seed = cfg.seed;
        cfg.eval.seed = cfg.seed;
    }
    return cfg;
}

void ensure_parent_dir(const std::string& path) {
    const fs::path p = fs::path(path).parent_path();
    if (!p.empty()) fs::create_directories(p);
}

ModelParams load_input_checkpoint(const std::string& path,
                                  const ModelConfig& expected) {
    if (!fs::exists(path)) {
        throw ConfigError("checkpoint not found: " + path);
    }
    ModelParams params = load_model(path);
    if (params.config != expected) {
        throw ConfigError("checkpoint architecture conflicts with config: " + path);
    }
    return params;
}

std::vector<TrainingExample> load_dataset_checked(const std::string& path) {
    if (!fs::exists(path)) {
        throw ConfigError("dataset not found: " + path + " (run gen-data first)");
    }
    return read_dataset(path);
}

int cmd_gen_data(const CommonArgs& args) {
    Tokenizer tok;
    RunConfig cfg = load_config(args, tok);
    std::string train_path = cfg.paths.train_dataset;
    std::string eval_path = cfg.paths.eval_dataset;
    if (!args.out.empty()) {
        train_path = (fs::path(args.out) / "train.jsonl").string();
        eval_path = (fs::path(args.out) / "eval.jsonl").string();
    }
    ensure_parent_dir(train_path);
    ensure_parent_dir(eval_path);
    write_dataset(train_path, generate_corpus(cfg.seed, cfg.corpus.n_train,
                                              cfg.corpus.n_steps, "train"));
    write_dataset(eval_path, generate_corpus(cfg.seed + 1, cfg.corpus.n_eval,
                                             cfg.corpus.n_steps, "eval"));
    std::cout << "wrote " << cfg.corpus.n_train << " train examples to "
              << train_path << "\n";
    std::cout << "wrote " << cfg.corpus.n_eval << " eval examples to "
              << eval_path << "\n";
    return 0;
}

int cmd_train_sft(const CommonArgs& args) {
    Tokenizer tok;
    RunConfig cfg = load_config(args, tok);
    const auto corpus = load_dataset_checked(cfg.paths.train_dataset);
    ModelParams params;
    if (!args.checkpoint.empty()) {
        params = load_input_checkpoint(args.checkpoint, cfg.model);
    } else {
        params = ModelParams::init(cfg.model, cfg.seed);
    }
    TrainResult result = train_sft(params, corpus, tok, cfg.sft);
    const std::string out = args.out.empty()
                                ? (fs::path(cfg.paths.checkpoint_dir) / "sft.ckpt").string()
                                : args.out;
    ensure_parent_dir(out);
    save_model(out, params);
    fs::create_directories(cfg.paths.metrics_dir);
    write_loss_trace((fs::path(cfg.paths.metrics_dir) / "sft_loss.csv").string(),
                     result.trace);
    std::cout << "sft: " << result.trace.size() << " steps, final loss "
              << (result.trace.empty() ? 0.0 : result.trace.back().loss)
              << ", checkpoint " << out << "\n";
    return 0;
}

int cmd_train_coconut(const CommonArgs& args) {
    Tokenizer tok;
    RunConfig cfg = load_config(args, tok);
    const auto corpus = load_dataset_checked(cfg.paths.train_dataset);
    const std::string in =
        args.checkpoint.empty()
            ? (fs::path(cfg.paths.checkpoint_dir) / "sft.ckpt").string()
            : args.checkpoint;
    ModelParams params = load_input_checkpoint(in, cfg.model);
    fs::create_directories(cfg.paths.checkpoint_dir);
    cfg.coconut.stage_checkpoint_dir = cfg.paths.checkpoint_dir;
    TrainResult result = train_coconut(params, corpus, tok, cfg.sft, cfg.coconut);
    const std::string out =
        args.out.empty()
            ? (fs::path(cfg.paths.checkpoint_dir) / "coconut.ckpt").string()
            : args.out;
    ensure_parent_dir(out);
    save_model(out, params);
    fs::create_directories(cfg.paths.metrics_dir);
    write_loss_trace(
        (fs::path(cfg.paths.metrics_dir) / "coconut_loss.csv").string(),
        result.trace);
    std::cout << "coconut: " << result.trace.size() << " steps ("
              << result.skipped_examples << " skipped), final loss "
              << (result.trace.empty() ? 0.0 : result.trace.back().loss)
              << ", checkpoint " << out << "\n";
    return 0;
}

int cmd_train_grpo(const CommonArgs& args) {
    Tokenizer tok;
    RunConfig cfg = load_config(args, tok);
    const auto corpus = load_dataset_checked(cfg.paths.train_dataset);
    const std::string in =
        args.checkpoint.empty()
            ? (fs::path(cfg.paths.checkpoint_dir) / "coconut.ckpt").string()
            : args.checkpoint;
    ModelParams params = load_input_checkpoint(in, cfg.model);
    ModelParams reference = params.clone();
    reference.set_trainable(false);

    std::mt19937_64 rng(cfg.seed);
    AdamW optimizer(AdamW::Config{cfg.grpo.lr, 0.9, 0.999, 1e-8, 0.0});
    fs::create_directories(cfg.paths.metrics_dir);
    std::ofstream csv((fs::path(cfg.paths.metrics_dir) / "grpo_metrics.csv").string());
    csv << "step,mean_reward,mean_accuracy_reward,mean_format_reward,kl,"
           "clip_fraction\n";
    std::vector<RolloutRecord> dump;
    size_t qi = 0;
    for (int step = 0; step < cfg.grpo.steps; ++step) {
        GrpoStepMetrics agg;
        for (int q = 0; q < cfg.grpo.questions_per_step; ++q) {
            const TrainingExample& question = corpus[qi % corpus.size()];
            auto records = rollout_group(params, question, static_cast<int>(qi),
                                         tok, cfg.grpo.step, rng);
            GrpoStepMetrics m;
            try {
                m = grpo_step(params, reference, records, tok, cfg.grpo.step,
                              optimizer, cfg.grpo.grad_clip);
            } catch (const std::runtime_error&) {
                // A group with no decoded tokens carries no training signal.
            }
            agg.mean_reward += m.mean_reward;
            agg.mean_accuracy_reward += m.mean_accuracy_reward;
            agg.mean_format_reward += m.mean_format_reward;
            agg.kl += m.kl;
            agg.clip_fraction += m.clip_fraction;
            for (auto& r : records) dump.push_back(std::move(r));
            ++qi;
        }
        const double nq = cfg.grpo.questions_per_step;
        csv << step << ',' << agg.mean_reward / nq << ','
            << agg.mean_accuracy_reward / nq << ','
            << agg.mean_format_reward / nq << ',' << agg.kl / nq << ','
            << agg.clip_fraction / nq << '\n';
        std::cout << "grpo step " << step << ": mean reward "
                  << agg.mean_reward / nq << "\n";
    }
    write_rollout_dump(
        (fs::path(cfg.paths.metrics_dir) / "grpo_rollouts.jsonl").string(), dump);
    const std::string out =
        args.out.empty()
            ? (fs::path(cfg.paths.checkpoint_dir) / "grpo.ckpt").string()
            : args.out;
    ensure_parent_dir(out);
    save_model(out, params);
    std::cout << "grpo: checkpoint " << out << "\n";
    return 0;
}

int cmd_train_latent_rl(const CommonArgs& args) {
    Tokenizer tok;
    RunConfig cfg = load_config(args, tok);
    const auto corpus = load_dataset_checked(cfg.paths.train_dataset);
    const std::string in =
        args.checkpoint.empty()
            ? (fs::path(cfg.paths.checkpoint_dir) / "coconut.ckpt").string()
            : args.checkpoint;
    ModelParams params = load_input_checkpoint(in, cfg.model);

    std::mt19937_64 rng(cfg.seed);
    fs::create_directories(cfg.paths.metrics_dir);

    // Phase 1: fit the value head on sampled rollouts with the policy frozen.
    std::vector<TrainingExample> phase1(
        corpus.begin(),
        corpus.begin() + std::min(corpus.size(),
                                  static_cast<size_t>(cfg.latentrl.phase1_questions)));
    auto pairs = collect_value_data(params, phase1, tok, cfg.latentrl.step, rng);
    {
        std::ofstream pair_dump(
            (fs::path(cfg.paths.metrics_dir) / "value_pairs.jsonl").string());
        for (const ValueTrainingPair& p : pairs) {
            nlohmann::json j;
            j["reward"] = p.reward;
            j["embedding"] = p.embedding;
            pair_dump << j.dump() << '\n';
        }
    }
    ValueHead head = ValueHead::init(cfg.model.hidden_dim, cfg.seed + 17);
    ValueHeadMetrics vm = train_value_head(head, pairs, cfg.latentrl.step);
    std::cout << "value head: bce " << vm.bce << ", f1 " << vm.f1 << ", roc-auc "
              << vm.roc_auc << " on " << pairs.size() << " pairs\n";

    // Phase 2: policy updates against the (frozen or alternating) head.
    AdamW optimizer(AdamW::Config{cfg.latentrl.lr, 0.9, 0.999, 1e-8, 0.0});
    std::ofstream csv(
        (fs::path(cfg.paths.metrics_dir) / "latentrl_metrics.csv").string());
    csv << "step,policy_loss,head_bce,accuracy_reward,format_reward,"
           "head_true_gap\n";
    size_t qi = 0;
    for (int step = 0; step < cfg.latentrl.steps; ++step) {
        std::vector<TrainingExample> batch;
        for (int q = 0; q < cfg.latentrl.questions_per_step; ++q) {
            batch.push_back(corpus[qi++ % corpus.size()]);
        }
        LatentRlStepMetrics m = latent_rl_step(params, head, batch, tok,
                                               cfg.latentrl.step, optimizer,
                                               cfg.latentrl.grad_clip);
        csv << step << ',' << m.policy_loss << ',' << m.head_bce << ','
            << m.accuracy_reward << ',' << m.format_reward << ','
            << m.head_true_gap << '\n';
        std::cout << "latent-rl step " << step << ": policy loss "
                  << m.policy_loss << ", head/true gap " << m.head_true_gap
                  << "\n";
    }
    const std::string out =
        args.out.empty()
            ? (fs::path(cfg.paths.checkpoint_dir) / "latent_rl.ckpt").string()
            : args.out;
    ensure_parent_dir(out);
    save_value_head(out, params, head);
    std::cout << "latent-rl: checkpoint " << out << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& mode_flag,
             int latent_steps_flag) {
    Tokenizer tok;
    RunConfig cfg = load_config(args, tok);
    if (args.checkpoint.empty()) throw ConfigError("eval: missing --checkpoint");
    ModelParams params = load_input_checkpoint(args.checkpoint, cfg.model);
    if (!mode_flag.empty()) {
        if (mode_flag == "language") {
            cfg.eval.mode = GenerateOptions::Mode::language;
        } else if (mode_flag == "latent") {
            cfg.eval.mode = GenerateOptions::Mode::latent;
        } else {
            throw ConfigError("eval: --mode must be 'language' or 'latent'");
        }
    }
    if (latent_steps_flag >= 0) cfg.eval.latent_steps = latent_steps_flag;
    const auto questions = load_dataset_checked(cfg.paths.eval_dataset);
    EvalReport report = evaluate(params, questions, tok, cfg.eval);
    fs::create_directories(cfg.paths.metrics_dir);
    const std::string out =
        args.out.empty()
            ? (fs::path(cfg.paths.metrics_dir) / "eval_report.json").string()
            : args.out;
    ensure_parent_dir(out);
    write_eval_report(out, report);
    std::cout << "pass@1 " << report.pass_at_1 << "  pass@4 " << report.pass_at_4
              << "  avg_tokens " << report.avg_tokens << "  format_compliance "
              << report.format_compliance << "\n";
    std::cout << "report " << out << "\n";
    return 0;
}

int cmd_sweep(const CommonArgs& args, const std::string& values) {
    Tokenizer tok;
    RunConfig cfg = load_config(args, tok);
    if (args.checkpoint.empty()) throw ConfigError("sweep: missing --checkpoint");
    ModelParams params = load_input_checkpoint(args.checkpoint, cfg.model);
    std::vector<int> counts;
    {
        std::stringstream ss(values);
        std::string item;
        while (std::getline(ss, item, ',')) {
            try {
                counts.push_back(std::stoi(item));
            } catch (const std::exception&) {
                throw ConfigError("sweep: bad --values entry '" + item + "'");
            }
        }
    }
    if (counts.empty()) throw ConfigError("sweep: empty --values");
    const auto questions = load_dataset_checked(cfg.paths.eval_dataset);
    auto entries = latent_step_sweep(params, questions, tok, cfg.eval, counts);
    fs::create_directories(cfg.paths.metrics_dir);
    const std::string out =
        args.out.empty()
            ? (fs::path(cfg.paths.metrics_dir) / "latent_step_sweep.csv").string()
            : args.out;
    ensure_parent_dir(out);
    write_sweep_csv(out, entries);
    for (const SweepEntry& e : entries) {
        std::cout << "C=" << e.latent_steps << ": ";
        if (e.ok) {
            std::cout << "pass@1 " << e.report.pass_at_1 << "  pass@4 "
                      << e.report.pass_at_4 << "  avg_tokens "
                      << e.report.avg_tokens << "\n";
        } else {
            std::cout << "error: " << e.error << "\n";
        }
    }
    std::cout << "sweep " << out << "\n";
    return 0;
}

int cmd_reward_check(const std::string& fixtures) {
    const int failures = run_reward_fixtures(fixtures, std::cout);
    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latent-space thinking workbench"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string eval_mode;
    int eval_latent_steps = -1;
    std::string sweep_values = "2,4,6,16,64";
    std::string fixtures_path = "data/reward_fixtures.jsonl";

    auto add_common = [&](CLI::App* sub, bool needs_config = true) {
        auto* opt = sub->add_option("--config", args.config_path, "run config JSON");
        if (needs_config) opt->required();
        sub->add_option("--checkpoint", args.checkpoint, "input checkpoint");
        sub->add_option("--out", args.out, "output path override");
        sub->add_option("--seed", args.seed_override, "seed override");
    };

    auto* gen = app.add_subcommand("gen-data", "generate train/eval datasets");
    add_common(gen);
    auto* sft = app.add_subcommand("train-sft", "supervised fine-tuning");
    add_common(sft);
    auto* coco = app.add_subcommand("train-coconut", "multi-stage latent curriculum");
    add_common(coco);
    auto* grpo = app.add_subcommand("train-grpo", "group-relative policy optimization");
    add_common(grpo);
    auto* lrl = app.add_subcommand("train-latent-rl", "two-phase latent RL");
    add_common(lrl);
    auto* ev = app.add_subcommand("eval", "held-out evaluation");
    add_common(ev);
    ev->add_option("--mode", eval_mode, "language or latent");
    ev->add_option("--latent-steps", eval_latent_steps, "latent step count");
    auto* sweep = app.add_subcommand("sweep-latent-steps", "latent step sweep");
    add_common(sweep);
    sweep->add_option("--values", sweep_values, "comma-separated step counts");
    auto* rc = app.add_subcommand("reward-check", "reward fixture suite");
    rc->add_option("--fixtures", fixtures_path, "fixture file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(args);
        if (sft->parsed()) return cmd_train_sft(args);
        if (coco->parsed()) return cmd_train_coconut(args);
        if (grpo->parsed()) return cmd_train_grpo(args);
        if (lrl->parsed()) return cmd_train_latent_rl(args);
        if (ev->parsed()) return cmd_eval(args, eval_mode, eval_latent_steps);
        if (sweep->parsed()) return cmd_sweep(args, sweep_values);
        if (rc->parsed()) return cmd_reward_check(fixtures_path);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
