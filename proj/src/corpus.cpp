#include "lst/corpus.hpp"

#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace lst {

namespace {

const char* kVocab[] = {
    "<pad>", "<unk>", "<eos>", "<|start-latent|>", "<|latent|>",
    "<|end-latent|>", "<think>", "</think>", "<answer>", "</answer>",
    "\\boxed{", "}",
    "you", "start", "with", "then", "add", "subtract", "what", "is", "the",
    "final", "value", "?", ".", "plus", "minus", "equals",
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
};

}  // namespace

Tokenizer::Tokenizer() {
    for (const char* p : kVocab) {
        index_.emplace(p, static_cast<int>(pieces_.size()));
        pieces_.emplace_back(p);
    }
    specials_.pad = id("<pad>");
    specials_.unk = id("<unk>");
    specials_.eos = id("<eos>");
    specials_.start_latent = id("<|start-latent|>");
    specials_.latent_placeholder = id("<|latent|>");
    specials_.end_latent = id("<|end-latent|>");
    specials_.think_open = id("<think>");
    specials_.think_close = id("</think>");
    specials_.answer_open = id("<answer>");
    specials_.answer_close = id("</answer>");
    specials_.boxed_open = id("\\boxed{");
    specials_.brace_close = id("}");
}

int Tokenizer::id(const std::string& piece) const {
    auto it = index_.find(piece);
    if (it == index_.end()) {
        throw std::out_of_range("tokenizer: unknown piece '" + piece + "'");
    }
    return it->second;
}

const std::string& Tokenizer::piece(int tid) const {
    if (tid < 0 || tid >= vocab_size()) {
        throw std::out_of_range("tokenizer: id out of range");
    }
    return pieces_[tid];
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
    std::vector<int> out;
    std::istringstream ss(text);
    std::string piece;
    while (ss >> piece) out.push_back(id(piece));
    return out;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += piece(ids[i]);
    }
    return out;
}

std::string spell_number(int64_t v) {
    std::string digits = std::to_string(v);
    std::string out;
    for (size_t i = 0; i < digits.size(); ++i) {
        if (i) out += ' ';
        out += digits[i];
    }
    return out;
}

std::vector<TrainingExample> generate_corpus(uint64_t seed, int n_examples,
                                             int n_steps,
                                             const std::string& split) {
    if (n_steps < 1) throw std::invalid_argument("generate_corpus: n_steps < 1");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> start_dist(10, 89);
    std::uniform_int_distribution<int> delta_dist(2, 9);
    std::uniform_int_distribution<int> op_dist(0, 1);

    std::vector<TrainingExample> out;
    out.reserve(n_examples);
    for (int e = 0; e < n_examples; ++e) {
        TrainingExample ex;
        ex.split = split;
        int value = start_dist(rng);
        std::string q = "you start with " + spell_number(value) + " .";
        for (int s = 0; s < n_steps; ++s) {
            int delta = delta_dist(rng);
            bool subtract = op_dist(rng) == 1;
            // Keep the chain inside [1, 98].
            if (subtract && value - delta < 1) subtract = false;
            if (!subtract && value + delta > 98) subtract = true;
            const int next = subtract ? value - delta : value + delta;
            q += " then " + std::string(subtract ? "subtract" : "add") + " " +
                 spell_number(delta) + " .";
            ex.steps.push_back(spell_number(value) + " " +
                               (subtract ? "minus" : "plus") + " " +
                               spell_number(delta) + " equals " +
                               spell_number(next) + " .");
            value = next;
        }
        q += " what is the final value ?";
        ex.question = q;
        ex.answer = std::to_string(value);
        out.push_back(std::move(ex));
    }
    return out;
}

namespace {

void append(EncodedExample& enc, const std::vector<int>& ids, bool mask) {
    for (int tid : ids) {
        enc.ids.push_back(tid);
        enc.loss_mask.push_back(mask);
    }
}

void append_one(EncodedExample& enc, int tid, bool mask) {
    enc.ids.push_back(tid);
    enc.loss_mask.push_back(mask);
}

void append_answer_block(EncodedExample& enc, const TrainingExample& ex,
                         const Tokenizer& tok) {
    const SpecialTokens& sp = tok.specials();
    append_one(enc, sp.answer_open, true);
    append_one(enc, sp.boxed_open, true);
    for (char c : ex.answer) append_one(enc, tok.id(std::string(1, c)), true);
    append_one(enc, sp.brace_close, true);
    append_one(enc, sp.answer_close, true);
    append_one(enc, sp.eos, true);
}

void append_latent_block(EncodedExample& enc, const Tokenizer& tok,
                         int n_latents) {
    const SpecialTokens& sp = tok.specials();
    append_one(enc, sp.start_latent, false);
    enc.latent_start = static_cast<int>(enc.ids.size());
    for (int i = 0; i < n_latents; ++i) {
        append_one(enc, sp.latent_placeholder, false);
    }
    append_one(enc, sp.end_latent, false);
    enc.n_latents = n_latents;
}

}  // namespace

EncodedExample encode_example(const TrainingExample& ex, const Tokenizer& tok,
                              EncodeFormat format, int stage_k) {
    const SpecialTokens& sp = tok.specials();
    EncodedExample enc;
    append(enc, tok.encode(ex.question), false);
    enc.question_len = static_cast<int>(enc.ids.size());

    if (format == EncodeFormat::think_tags) {
        append_one(enc, sp.think_open, true);
        for (const std::string& step : ex.steps) {
            append(enc, tok.encode(step), true);
        }
        append_one(enc, sp.think_close, true);
    } else {
        if (stage_k < 0 || stage_k > static_cast<int>(ex.steps.size())) {
            throw std::out_of_range("encode_example: stage " +
                                    std::to_string(stage_k) + " exceeds " +
                                    std::to_string(ex.steps.size()) + " steps");
        }
        append_latent_block(enc, tok, 2 * stage_k);
        for (size_t s = stage_k; s < ex.steps.size(); ++s) {
            append(enc, tok.encode(ex.steps[s]), true);
        }
    }
    append_answer_block(enc, ex, tok);
    return enc;
}

EncodedExample encode_example_token_wise(const TrainingExample& ex,
                                         const Tokenizer& tok, int stage_k,
                                         int tokens_per_latent) {
    if (stage_k < 0) throw std::out_of_range("encode_example_token_wise: stage < 0");
    EncodedExample enc;
    append(enc, tok.encode(ex.question), false);
    enc.question_len = static_cast<int>(enc.ids.size());

    std::vector<int> step_stream;
    for (const std::string& step : ex.steps) {
        for (int tid : tok.encode(step)) step_stream.push_back(tid);
    }
    const size_t removed = std::min(
        step_stream.size(), static_cast<size_t>(stage_k) *
                                static_cast<size_t>(tokens_per_latent));
    append_latent_block(enc, tok, 2 * stage_k);
    for (size_t i = removed; i < step_stream.size(); ++i) {
        append_one(enc, step_stream[i], true);
    }
    append_answer_block(enc, ex, tok);
    return enc;
}

void write_dataset(const std::string& path,
                   const std::vector<TrainingExample>& examples) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_dataset: cannot open " + path);
    for (const TrainingExample& ex : examples) {
        nlohmann::json j;
        j["question"] = ex.question;
        j["steps"] = ex.steps;
        j["answer"] = ex.answer;
        j["split"] = ex.split;
        out << j.dump() << '\n';
    }
}

std::vector<TrainingExample> read_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_dataset: cannot open " + path);
    std::vector<TrainingExample> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("question") ||
            !j.contains("steps") || !j.contains("answer") || !j.contains("split")) {
            throw std::runtime_error("read_dataset: parse error at " + path +
                                     " line " + std::to_string(lineno));
        }
        TrainingExample ex;
        ex.question = j["question"].get<std::string>();
        ex.steps = j["steps"].get<std::vector<std::string>>();
        ex.answer = j["answer"].get<std::string>();
        ex.split = j["split"].get<std::string>();
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace lst
