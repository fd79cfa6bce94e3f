#include "lst/eval.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace lst {

double pass_at_k(int n, int c, int k) {
    if (n <= 0 || c < 0 || c > n || k <= 0 || k > n) {
        throw std::invalid_argument("pass_at_k: need 0 <= c <= n and 0 < k <= n");
    }
    // C(n-c, k) / C(n, k) as a telescoping product; zero when k > n - c.
    if (k > n - c) return 1.0;
    double ratio = 1.0;
    for (int i = 0; i < k; ++i) {
        ratio *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
    }
    return 1.0 - ratio;
}

EvalReport evaluate(const ModelParams& params,
                    const std::vector<TrainingExample>& questions,
                    const Tokenizer& tok, const EvalConfig& cfg) {
    if (cfg.samples_per_question < 1) {
        throw std::invalid_argument("evaluate: samples_per_question < 1");
    }
    const bool latent = cfg.mode == GenerateOptions::Mode::latent;
    std::mt19937_64 rng(cfg.seed);
    GenerateOptions opts;
    opts.mode = cfg.mode;
    opts.latent_steps = cfg.latent_steps;
    opts.max_new_tokens = cfg.max_new_tokens;
    opts.rng = &rng;

    size_t n_questions = questions.size();
    if (cfg.max_questions > 0) {
        n_questions = std::min(n_questions, static_cast<size_t>(cfg.max_questions));
    }

    EvalReport report;
    double pass1_sum = 0.0, pass4_sum = 0.0, token_sum = 0.0, format_sum = 0.0;
    int total_samples = 0;
    for (size_t qi = 0; qi < n_questions; ++qi) {
        const TrainingExample& q = questions[qi];
        const std::vector<int> prompt = tok.encode(q.question);
        QuestionRecord rec;
        rec.question_id = static_cast<int>(qi);
        rec.n_samples = cfg.samples_per_question;
        for (int s = 0; s < cfg.samples_per_question; ++s) {
            // First sample greedy, the rest at the sampling temperature.
            opts.greedy = s == 0 || cfg.temperature <= 0.0;
            opts.temperature = cfg.temperature;
            // A generation failure counts as an incorrect attempt rather
            // than aborting the run.
            try {
                HybridSequence seq = generate(params, prompt, tok.specials(), opts);
                const std::string text = seq.render_completion(tok);
                const RewardBreakdown rb = latent ? score_latent(text, q.answer)
                                                  : score_language(text, q.answer);
                if (rb.accuracy >= 1.0) ++rec.n_correct;
                rec.avg_tokens += count_generated_tokens(seq);
                rec.avg_format += rb.format;
                if (rb.format >= 0.5) format_sum += 1.0;
                if (s == 0) rec.first_sample = text;
            } catch (const std::exception& e) {
                if (s == 0) rec.first_sample = std::string("<error: ") + e.what() + ">";
            }
            ++total_samples;
        }
        rec.avg_tokens /= cfg.samples_per_question;
        rec.avg_format /= cfg.samples_per_question;
        pass1_sum += pass_at_k(rec.n_samples, rec.n_correct, 1);
        pass4_sum += pass_at_k(rec.n_samples, rec.n_correct,
                               std::min(4, rec.n_samples));
        token_sum += rec.avg_tokens;
        report.questions.push_back(std::move(rec));
    }
    if (report.questions.empty()) {
        throw std::invalid_argument("evaluate: no questions");
    }
    const double nq = static_cast<double>(report.questions.size());
    report.pass_at_1 = pass1_sum / nq;
    report.pass_at_4 = pass4_sum / nq;
    report.avg_tokens = token_sum / nq;
    report.format_compliance = format_sum / total_samples;
    return report;
}

std::vector<SweepEntry> latent_step_sweep(
    const ModelParams& params, const std::vector<TrainingExample>& questions,
    const Tokenizer& tok, EvalConfig cfg, const std::vector<int>& step_counts) {
    cfg.mode = GenerateOptions::Mode::latent;
    size_t longest_prompt = 0;
    for (const TrainingExample& q : questions) {
        longest_prompt = std::max(longest_prompt, tok.encode(q.question).size());
    }
    std::vector<SweepEntry> entries;
    for (int c : step_counts) {
        SweepEntry entry;
        entry.latent_steps = c;
        cfg.latent_steps = c;
        // Prompt + delimiters + latent block + at least one decoded token.
        if (longest_prompt + static_cast<size_t>(c) + 3 >
            static_cast<size_t>(params.config.max_context)) {
            entry.error = "latent step count exceeds the context budget";
            entries.push_back(std::move(entry));
            continue;
        }
        try {
            entry.report = evaluate(params, questions, tok, cfg);
            entry.ok = true;
        } catch (const std::exception& e) {
            entry.error = e.what();
        }
        entries.push_back(std::move(entry));
    }
    return entries;
}

void write_eval_report(const std::string& path, const EvalReport& report) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("eval report: cannot open " + path);
    nlohmann::json j;
    j["pass_at_1"] = report.pass_at_1;
    j["pass_at_4"] = report.pass_at_4;
    j["avg_tokens"] = report.avg_tokens;
    j["format_compliance"] = report.format_compliance;
    j["questions"] = nlohmann::json::array();
    for (const QuestionRecord& q : report.questions) {
        j["questions"].push_back({{"question_id", q.question_id},
                                  {"n_samples", q.n_samples},
                                  {"n_correct", q.n_correct},
                                  {"avg_tokens", q.avg_tokens},
                                  {"avg_format", q.avg_format},
                                  {"first_sample", q.first_sample}});
    }
    out << j.dump(2) << '\n';
}

void write_sweep_csv(const std::string& path,
                     const std::vector<SweepEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("sweep csv: cannot open " + path);
    out << "latent_steps,pass_at_1,pass_at_4,avg_tokens,format_compliance,error\n";
    for (const SweepEntry& e : entries) {
        out << e.latent_steps << ',';
        if (e.ok) {
            out << e.report.pass_at_1 << ',' << e.report.pass_at_4 << ','
                << e.report.avg_tokens << ',' << e.report.format_compliance
                << ',';
        } else {
            out << ",,,,\"" << e.error << '"';
        }
        out << '\n';
    }
}

}  // namespace lst
