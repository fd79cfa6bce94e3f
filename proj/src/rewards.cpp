#include "lst/rewards.hpp"

#include <cctype>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

namespace lst {

namespace {

constexpr const char* kStartLatent = "<|start-latent|>";
constexpr const char* kLatent = "<|latent|>";
constexpr const char* kEndLatent = "<|end-latent|>";

bool is_ws(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && is_ws(s[b])) ++b;
    while (e > b && is_ws(s[e - 1])) --e;
    return s.substr(b, e - b);
}

// Generated text carries a trailing end-of-sequence marker; the reward
// tables are about the visible response.
std::string strip_trailing_eos(std::string s) {
    s = trim(s);
    const std::string eos = "<eos>";
    while (s.size() >= eos.size() &&
           s.compare(s.size() - eos.size(), eos.size(), eos) == 0) {
        s = trim(s.substr(0, s.size() - eos.size()));
    }
    return s;
}

// Content of the first <answer>...</answer> block, or nullopt-like flag.
bool first_answer_block(const std::string& s, std::string* inner) {
    const size_t a0 = s.find("<answer>");
    if (a0 == std::string::npos) return false;
    const size_t a1 = s.find("</answer>", a0);
    if (a1 == std::string::npos) return false;
    *inner = s.substr(a0 + 8, a1 - (a0 + 8));
    return true;
}

bool first_boxed(const std::string& s, std::string* content) {
    const size_t b0 = s.find("\\boxed{");
    if (b0 == std::string::npos) return false;
    const size_t b1 = s.find('}', b0 + 7);
    if (b1 == std::string::npos) return false;
    *content = s.substr(b0 + 7, b1 - (b0 + 7));
    return true;
}

// True when s is exactly <answer>...</answer> up to surrounding whitespace;
// reports whether a boxed expression is present inside.
bool is_answer_tail(const std::string& s, bool* has_boxed) {
    const std::string t = trim(s);
    if (t.rfind("<answer>", 0) != 0) return false;
    const size_t a1 = t.find("</answer>");
    if (a1 == std::string::npos || a1 + 9 != t.size()) return false;
    std::string boxed;
    *has_boxed = first_boxed(t.substr(8, a1 - 8), &boxed);
    return true;
}

}  // namespace

std::string normalize_answer(const std::string& s) {
    std::string t;
    for (char c : s) {
        if (!is_ws(c)) t += c;
    }
    size_t b = 0;
    if (b < t.size() && t[b] == '+') ++b;
    while (b + 1 < t.size() && t[b] == '0') ++b;
    return t.substr(b);
}

double accuracy_reward(const std::string& response_text,
                       const std::string& gold_answer) {
    std::string inner, boxed;
    if (!first_answer_block(response_text, &inner)) return 0.0;
    if (!first_boxed(inner, &boxed)) return 0.0;
    return normalize_answer(boxed) == normalize_answer(gold_answer) ? 1.0 : 0.0;
}

double format_reward_language(const std::string& response_text) {
    const std::string s = strip_trailing_eos(response_text);
    if (s.rfind("<think>", 0) != 0) return 0.0;
    const size_t t1 = s.find("</think>");
    if (t1 == std::string::npos) return 0.0;
    bool has_boxed = false;
    if (!is_answer_tail(s.substr(t1 + 8), &has_boxed)) return 0.0;
    return has_boxed ? 1.0 : 0.5;
}

double format_reward_latent(const std::string& rendered_text) {
    const std::string s = strip_trailing_eos(rendered_text);
    const size_t s0 = s.find(kStartLatent);
    if (s0 == std::string::npos) return 0.0;
    const size_t e0 = s.find(kEndLatent, s0);
    if (e0 == std::string::npos) return 0.0;
    const size_t after_pos = e0 + std::string(kEndLatent).size();
    const std::string after = s.substr(after_pos);

    // Penalty dominates every positive condition.
    if (after.find(kStartLatent) != std::string::npos ||
        after.find(kEndLatent) != std::string::npos ||
        after.find("<think>") != std::string::npos) {
        return -1.0;
    }

    // Well-formed block: nothing before it, only placeholders inside it.
    if (trim(s.substr(0, s0)) != "") return 0.0;
    std::string interior = s.substr(s0 + std::string(kStartLatent).size(),
                                    e0 - s0 - std::string(kStartLatent).size());
    const std::string latent_piece = kLatent;
    size_t pos;
    while ((pos = interior.find(latent_piece)) != std::string::npos) {
        interior.erase(pos, latent_piece.size());
    }
    if (trim(interior) != "") return 0.0;

    bool has_boxed = false;
    if (!is_answer_tail(after, &has_boxed)) return 0.0;
    return has_boxed ? 1.0 : 0.5;
}

RewardBreakdown score_language(const std::string& text, const std::string& gold) {
    RewardBreakdown r;
    r.accuracy = accuracy_reward(text, gold);
    r.format = format_reward_language(text);
    r.total = r.accuracy + r.format;
    return r;
}

RewardBreakdown score_latent(const std::string& text, const std::string& gold) {
    RewardBreakdown r;
    r.accuracy = accuracy_reward(text, gold);
    r.format = format_reward_latent(text);
    r.total = r.accuracy + r.format;
    return r;
}

std::vector<RewardFixtureCase> read_reward_fixtures(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("reward fixtures: cannot open " + path);
    std::vector<RewardFixtureCase> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("kind") || !j.contains("text") ||
            !j.contains("expected")) {
            throw std::runtime_error("reward fixtures: parse error at line " +
                                     std::to_string(lineno));
        }
        RewardFixtureCase c;
        c.kind = j["kind"].get<std::string>();
        c.text = j["text"].get<std::string>();
        c.gold = j.value("gold", "");
        c.expected = j["expected"].get<double>();
        out.push_back(std::move(c));
    }
    return out;
}

int run_reward_fixtures(const std::string& path, std::ostream& out) {
    const auto cases = read_reward_fixtures(path);
    int failures = 0;
    for (size_t i = 0; i < cases.size(); ++i) {
        const RewardFixtureCase& c = cases[i];
        double got;
        if (c.kind == "accuracy") {
            got = accuracy_reward(c.text, c.gold);
        } else if (c.kind == "format_language") {
            got = format_reward_language(c.text);
        } else if (c.kind == "format_latent") {
            got = format_reward_latent(c.text);
        } else {
            out << "case " << i + 1 << ": unknown kind '" << c.kind << "'\n";
            ++failures;
            continue;
        }
        if (got != c.expected) {
            out << "case " << i + 1 << " (" << c.kind << "): expected "
                << c.expected << ", got " << got << " for: " << c.text << "\n";
            ++failures;
        }
    }
    out << cases.size() - failures << "/" << cases.size()
        << " reward fixture cases passed\n";
    return failures;
}

}  // namespace lst
