#include "lst/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace lst {

namespace {

using nlohmann::json;

// Wraps a JSON object and tracks which keys were consumed so leftovers can
// be reported as errors.
class Section {
public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) {
            throw ConfigError("config: section '" + name_ + "' must be an object");
        }
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    template <typename T>
    void get(const std::string& key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config: bad value for '" + name_ + "." + key + "'");
        }
    }

    const json& raw(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    void finish() {
        for (const auto& item : j_.items()) {
            if (!seen_.count(item.key())) {
                throw ConfigError("config: unknown key '" + name_ + "." +
                                  item.key() + "'");
            }
        }
    }

private:
    const json& j_;
    std::string name_;
    std::set<std::string> seen_;
};

GenerateOptions::Mode parse_mode(const std::string& s, const std::string& where) {
    if (s == "language") return GenerateOptions::Mode::language;
    if (s == "latent") return GenerateOptions::Mode::latent;
    throw ConfigError("config: " + where + " must be 'language' or 'latent'");
}

void parse_model(Section sec, ModelConfig& m) {
    sec.get("hidden_dim", m.hidden_dim);
    sec.get("n_layers", m.n_layers);
    sec.get("n_heads", m.n_heads);
    sec.get("max_context", m.max_context);
    sec.finish();
}

void parse_corpus(Section sec, CorpusConfig& c) {
    sec.get("n_train", c.n_train);
    sec.get("n_eval", c.n_eval);
    sec.get("n_steps", c.n_steps);
    sec.finish();
}

void parse_sft(Section sec, SftConfig& s) {
    sec.get("epochs", s.epochs);
    sec.get("batch_size", s.batch_size);
    sec.get("lr", s.lr);
    sec.get("weight_decay", s.weight_decay);
    sec.get("grad_clip", s.grad_clip);
    sec.get("lr_gamma", s.lr_gamma);
    sec.get("lr_step_size", s.lr_step_size);
    sec.get("max_examples", s.max_examples);
    sec.finish();
}

void parse_coconut(Section sec, CurriculumSchedule& c) {
    sec.get("n_stages", c.n_stages);
    sec.get("epochs_per_stage", c.epochs_per_stage);
    sec.get("final_stage_extra_epochs", c.final_stage_extra_epochs);
    if (sec.has("removal_mode")) {
        const std::string mode = sec.raw("removal_mode").get<std::string>();
        if (mode == "step_wise") {
            c.removal_mode = RemovalMode::step_wise;
        } else if (mode == "token_wise") {
            c.removal_mode = RemovalMode::token_wise;
        } else {
            throw ConfigError(
                "config: coconut.removal_mode must be 'step_wise' or 'token_wise'");
        }
    }
    sec.get("tokens_per_latent", c.tokens_per_latent);
    sec.get("reset_optimizer_per_stage", c.reset_optimizer_per_stage);
    sec.get("max_examples_per_stage", c.max_examples_per_stage);
    sec.finish();
}

void parse_grpo(Section sec, GrpoRunConfig& g) {
    sec.get("group_size", g.step.group_size);
    sec.get("temperature", g.step.temperature);
    sec.get("kl_coeff", g.step.kl_coeff);
    sec.get("clip_epsilon", g.step.clip_epsilon);
    sec.get("advantage_eps", g.step.advantage_eps);
    sec.get("max_completion_len", g.step.max_completion_len);
    if (sec.has("mode")) {
        g.step.mode =
            parse_mode(sec.raw("mode").get<std::string>(), "grpo.mode");
    }
    sec.get("latent_steps", g.step.latent_steps);
    sec.get("steps", g.steps);
    sec.get("questions_per_step", g.questions_per_step);
    sec.get("lr", g.lr);
    sec.get("grad_clip", g.grad_clip);
    sec.finish();
}

void parse_latentrl(Section sec, LatentRlRunConfig& l) {
    sec.get("latent_steps", l.step.latent_steps);
    sec.get("rollouts_per_question", l.step.rollouts_per_question);
    sec.get("temperature", l.step.temperature);
    sec.get("max_completion_len", l.step.max_completion_len);
    sec.get("value_epochs", l.step.value_epochs);
    sec.get("value_lr", l.step.value_lr);
    if (sec.has("value_head_mode")) {
        const std::string mode = sec.raw("value_head_mode").get<std::string>();
        if (mode == "frozen") {
            l.step.value_head_mode = ValueHeadMode::frozen;
        } else if (mode == "alternating") {
            l.step.value_head_mode = ValueHeadMode::alternating;
        } else {
            throw ConfigError(
                "config: latentrl.value_head_mode must be 'frozen' or "
                "'alternating'");
        }
    }
    sec.get("log_score", l.step.log_score);
    sec.get("phase1_questions", l.phase1_questions);
    sec.get("steps", l.steps);
    sec.get("questions_per_step", l.questions_per_step);
    sec.get("lr", l.lr);
    sec.get("grad_clip", l.grad_clip);
    sec.finish();
}

void parse_eval(Section sec, EvalConfig& e) {
    if (sec.has("mode")) {
        e.mode = parse_mode(sec.raw("mode").get<std::string>(), "eval.mode");
    }
    sec.get("latent_steps", e.latent_steps);
    sec.get("samples_per_question", e.samples_per_question);
    sec.get("temperature", e.temperature);
    sec.get("max_new_tokens", e.max_new_tokens);
    sec.get("max_questions", e.max_questions);
    sec.finish();
}

void parse_paths(Section sec, PathsConfig& p) {
    sec.get("train_dataset", p.train_dataset);
    sec.get("eval_dataset", p.eval_dataset);
    sec.get("checkpoint_dir", p.checkpoint_dir);
    sec.get("metrics_dir", p.metrics_dir);
    sec.finish();
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text, int vocab_size) {
    json j = json::parse(json_text, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config: malformed JSON");
    RunConfig cfg;
    Section root(j, "");
    root.get("seed", cfg.seed);
    if (root.has("model")) parse_model({root.raw("model"), "model"}, cfg.model);
    if (root.has("corpus")) parse_corpus({root.raw("corpus"), "corpus"}, cfg.corpus);
    if (root.has("sft")) parse_sft({root.raw("sft"), "sft"}, cfg.sft);
    if (root.has("coconut")) {
        parse_coconut({root.raw("coconut"), "coconut"}, cfg.coconut);
    }
    if (root.has("grpo")) parse_grpo({root.raw("grpo"), "grpo"}, cfg.grpo);
    if (root.has("latentrl")) {
        parse_latentrl({root.raw("latentrl"), "latentrl"}, cfg.latentrl);
    }
    if (root.has("eval")) parse_eval({root.raw("eval"), "eval"}, cfg.eval);
    if (root.has("paths")) parse_paths({root.raw("paths"), "paths"}, cfg.paths);
    root.finish();

    cfg.model.vocab_size = vocab_size;
    cfg.sft.seed = cfg.seed;
    cfg.latentrl.step.seed = cfg.seed;
    cfg.eval.seed = cfg.seed;
    return cfg;
}

RunConfig load_run_config(const std::string& path, int vocab_size) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), vocab_size);
}

}  // namespace lst
