#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "flexedit/edit_task.hpp"
#include "flexedit/tensor.hpp"

namespace flexedit {

struct ObjectGroup {
    std::string name;
    std::vector<std::string> objects;
    std::vector<std::string> backgrounds;
};

inline void validate_groups(const std::vector<ObjectGroup> &groups) {
    if (groups.empty())
        throw std::invalid_argument("object groups: empty list");
    for (const ObjectGroup &g : groups) {
        if (g.objects.empty())
            throw std::invalid_argument("object group '" + g.name + "' has no objects");
        if (g.backgrounds.empty())
            throw std::invalid_argument("object group '" + g.name + "' has no backgrounds");
    }
}

struct BenchSample {
    std::string id;
    TaskKind kind = TaskKind::replace;
    std::string source_prompt;
    std::string target_prompt;
    std::string instruction;
    std::string source_object;
    std::optional<std::string> target_object;
    std::string background;
};

// Prompt and instruction templates.  These strings are load-bearing: the
// recognizer, the curation prompts, and the tests all assume them exactly.
inline std::string source_prompt_text(const std::string &a, const std::string &c) {
    return "A photo of " + a + " " + c + ".";
}
inline std::string replace_target_text(const std::string &b, const std::string &c) {
    return "A photo of " + b + " " + c + ".";
}
inline std::string add_target_text(const std::string &a, const std::string &b,
                                   const std::string &c) {
    return "A photo of " + a + " and " + b + " " + c + ".";
}
inline std::string remove_target_text(const std::string &c) {
    return "A photo of " + c + ".";
}
inline std::string replace_instruction_text(const std::string &a, const std::string &b) {
    return "Turn " + a + " into " + b + ".";
}
// The addition instruction carries no trailing period.
inline std::string add_instruction_text(const std::string &a, const std::string &b) {
    return "Add " + b + " next to " + a;
}
inline std::string remove_instruction_text(const std::string &a) {
    return "Remove " + a + ".";
}

inline std::string sample_id(TaskKind kind, const std::string &src, const std::string &tgt,
                             const std::string &instr) {
    uint64_t h = fnv1a64(to_string(kind));
    h = fnv1a64("\x1f", 1, h);
    h = fnv1a64(src, h);
    h = fnv1a64("\x1f", 1, h);
    h = fnv1a64(tgt, h);
    h = fnv1a64("\x1f", 1, h);
    h = fnv1a64(instr, h);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "syno-%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline BenchSample make_sample(TaskKind kind, const std::string &a,
                               const std::optional<std::string> &b, const std::string &c) {
    BenchSample s;
    s.kind = kind;
    s.source_object = a;
    s.background = c;
    s.source_prompt = source_prompt_text(a, c);
    switch (kind) {
    case TaskKind::replace:
        s.target_object = b;
        s.target_prompt = replace_target_text(*b, c);
        s.instruction = replace_instruction_text(a, *b);
        break;
    case TaskKind::add:
        s.target_object = b;
        s.target_prompt = add_target_text(a, *b, c);
        s.instruction = add_instruction_text(a, *b);
        break;
    case TaskKind::remove:
        s.target_prompt = remove_target_text(c);
        s.instruction = remove_instruction_text(a);
        break;
    }
    s.id = sample_id(kind, s.source_prompt, s.target_prompt, s.instruction);
    return s;
}

// The six object groups shipped as the default configuration.
inline std::vector<ObjectGroup> default_object_groups() {
    return {
        {"animal",
         {"parrot", "monkey", "bird", "turtle", "cat", "dog", "elephant", "giraffe", "lion",
          "horse", "bear"},
         {"on beach", "on grass field", "in the forest", "on street"}},
        {"transportation",
         {"car", "bicycle", "boat"},
         {"on street", "on beach", "in front of house"}},
        {"fruit",
         {"apple", "banana", "orange", "avocado", "pineapple", "pear"},
         {"on table", "hanging on tree", "on grass field"}},
        {"furniture", {"chair", "table", "sofa"}, {"in living room", "in the kitchen"}},
        {"musical instruments",
         {"guitar", "piano", "violin", "drums"},
         {"on grass field", "on table"}},
        {"household appliances",
         {"refrigerator", "microwave", "toaster"},
         {"in living room", "in the kitchen"}},
    };
}

// Pair-based tasks enumerate every ordered pair of distinct objects within
// a group, crossed with the group's backgrounds; removal enumerates
// (object, background).  Order is (task, group, A, B, background).
inline std::vector<BenchSample> gen_syno(const std::vector<ObjectGroup> &groups,
                                         std::vector<std::string> *warnings = nullptr) {
    validate_groups(groups);
    std::vector<BenchSample> out;
    for (TaskKind kind : {TaskKind::replace, TaskKind::add}) {
        for (const ObjectGroup &g : groups) {
            if (g.objects.size() < 2) {
                if (warnings && kind == TaskKind::replace)
                    warnings->push_back("group '" + g.name +
                                        "' has fewer than 2 objects, no pair-based samples");
                continue;
            }
            for (const std::string &a : g.objects)
                for (const std::string &b : g.objects) {
                    if (a == b) continue;
                    for (const std::string &c : g.backgrounds)
                        out.push_back(make_sample(kind, a, b, c));
                }
        }
    }
    for (const ObjectGroup &g : groups)
        for (const std::string &a : g.objects)
            for (const std::string &c : g.backgrounds)
                out.push_back(make_sample(TaskKind::remove, a, std::nullopt, c));
    return out;
}

struct PromptParts {
    std::string a;
    std::optional<std::string> b;
    std::string background;
};

namespace detail {

inline std::vector<std::string> words(const std::string &s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
}

inline std::string join(const std::vector<std::string> &w, size_t b, size_t e) {
    std::string out;
    for (size_t i = b; i < e; ++i) {
        if (i > b) out += " ";
        out += w[i];
    }
    return out;
}

inline std::optional<std::string> strip_photo_prompt(const std::string &p) {
    const std::string prefix = "A photo of ";
    if (p.size() <= prefix.size() + 1 || p.compare(0, prefix.size(), prefix) != 0 ||
        p.back() != '.')
        return std::nullopt;
    return p.substr(prefix.size(), p.size() - prefix.size() - 1);
}

} // namespace detail

// Inverts the template grammar: recovers (A, B, C) from a sample's prompts
// and accepts only if re-rendering reproduces all three strings exactly.
inline std::optional<PromptParts> recognize_sample(const BenchSample &s) {
    auto src_rest = detail::strip_photo_prompt(s.source_prompt);
    if (!src_rest) return std::nullopt;
    const std::vector<std::string> S = detail::words(*src_rest);
    if (S.size() < 2) return std::nullopt;

    PromptParts parts;
    switch (s.kind) {
    case TaskKind::replace: {
        auto tgt_rest = detail::strip_photo_prompt(s.target_prompt);
        if (!tgt_rest) return std::nullopt;
        const std::vector<std::string> U = detail::words(*tgt_rest);
        if (U.size() < 2) return std::nullopt;
        size_t suffix = 0;
        while (suffix < std::min(S.size(), U.size()) - 1 &&
               S[S.size() - 1 - suffix] == U[U.size() - 1 - suffix])
            ++suffix;
        if (suffix == 0) return std::nullopt;
        parts.a = detail::join(S, 0, S.size() - suffix);
        parts.b = detail::join(U, 0, U.size() - suffix);
        parts.background = detail::join(S, S.size() - suffix, S.size());
        break;
    }
    case TaskKind::add: {
        auto tgt_rest = detail::strip_photo_prompt(s.target_prompt);
        if (!tgt_rest) return std::nullopt;
        const std::vector<std::string> U = detail::words(*tgt_rest);
        if (U.size() < S.size() + 2) return std::nullopt;
        size_t prefix = 0;
        while (prefix < S.size() && prefix < U.size() && S[prefix] == U[prefix]) ++prefix;
        while (prefix > 0 && (prefix >= U.size() || U[prefix] != "and")) --prefix;
        if (prefix == 0 || U[prefix] != "and") return std::nullopt;
        const size_t suffix = S.size() - prefix; // C token count
        if (suffix == 0 || prefix + 1 + suffix >= U.size()) return std::nullopt;
        parts.a = detail::join(S, 0, prefix);
        parts.b = detail::join(U, prefix + 1, U.size() - suffix);
        parts.background = detail::join(U, U.size() - suffix, U.size());
        break;
    }
    case TaskKind::remove: {
        auto tgt_rest = detail::strip_photo_prompt(s.target_prompt);
        if (!tgt_rest) return std::nullopt;
        const std::vector<std::string> C = detail::words(*tgt_rest);
        if (C.empty() || C.size() >= S.size()) return std::nullopt;
        for (size_t i = 0; i < C.size(); ++i)
            if (S[S.size() - C.size() + i] != C[i]) return std::nullopt;
        parts.a = detail::join(S, 0, S.size() - C.size());
        parts.background = detail::join(C, 0, C.size());
        break;
    }
    }

    BenchSample rendered = make_sample(s.kind, parts.a, parts.b, parts.background);
    if (rendered.source_prompt != s.source_prompt ||
        rendered.target_prompt != s.target_prompt || rendered.instruction != s.instruction)
        return std::nullopt;
    return parts;
}

// Prompts handed to an external LLM when curating real-image benchmarks.
inline constexpr const char *kCurationRole =
    "# Your Role: You are a friendly chatbot who always responds in the style of programmer";

struct CurationPrompt {
    TaskKind kind = TaskKind::replace;
    std::string text;
    std::string response_grammar = "A-B";
};

inline CurationPrompt build_curation_prompt(TaskKind kind, const std::string &instruction) {
    CurationPrompt p;
    p.kind = kind;
    switch (kind) {
    case TaskKind::replace:
        p.text = "Given the Instruction: " + instruction +
                 " for object replacement in image editing task. Return in the following "
                 "string format without any further explanation: A-B where A is the source "
                 "object and B is the target object.";
        break;
    case TaskKind::remove:
        p.text = "Given the Instruction: `" + instruction +
                 "' for object removal in image editing task. Return in the following string "
                 "format without any further explanation: A-B where A is the source object to "
                 "be removed and B is None.";
        break;
    case TaskKind::add:
        p.text = "Given the Instruction: " + instruction +
                 " for object adding in image editing task. Return in the following string "
                 "format without any further explanation: A-B where A is the new object being "
                 "added, and B is the specified position of where to add object, if there is "
                 "no position being mentioned, B is None.";
        break;
    }
    return p;
}

class CurationParseError : public std::runtime_error {
public:
    explicit CurationParseError(const std::string &raw)
        : std::runtime_error("cannot parse curation response: '" + raw + "'"), raw_(raw) {}
    const std::string &raw() const { return raw_; }

private:
    std::string raw_;
};

struct CurationAnswer {
    std::string a;
    std::optional<std::string> b;
};

namespace detail {

inline std::string trim(const std::string &s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline bool iequals_none(const std::string &s) {
    if (s.size() != 4) return false;
    const char *none = "none";
    for (size_t i = 0; i < 4; ++i)
        if (std::tolower(static_cast<unsigned char>(s[i])) != none[i]) return false;
    return true;
}

} // namespace detail

// "A-B" with the split on the last separator, so hyphenated nouns stay on
// the A side.  A trailing "None" (any case) means no B.
inline CurationAnswer parse_curation_response(const std::string &text) {
    const std::string t = detail::trim(text);
    const size_t pos = t.rfind('-');
    if (pos == std::string::npos)
        throw CurationParseError(text);
    CurationAnswer ans;
    ans.a = detail::trim(t.substr(0, pos));
    const std::string b = detail::trim(t.substr(pos + 1));
    if (ans.a.empty() || b.empty())
        throw CurationParseError(text);
    if (!detail::iequals_none(b))
        ans.b = b;
    return ans;
}

// Groups config, mirroring the shipped listing: an object keyed group1,
// group2, ... with name/list_objects/background per entry.  Iteration is
// by key order.
inline nlohmann::json groups_to_json(const std::vector<ObjectGroup> &groups) {
    nlohmann::json j = nlohmann::json::object();
    for (size_t i = 0; i < groups.size(); ++i) {
        nlohmann::json g;
        g["name"] = groups[i].name;
        g["list_objects"] = groups[i].objects;
        g["background"] = groups[i].backgrounds;
        j["group" + std::to_string(i + 1)] = g;
    }
    return j;
}

inline std::vector<ObjectGroup> groups_from_json(const nlohmann::json &j) {
    if (!j.is_object())
        throw std::invalid_argument("groups config: expected a JSON object");
    std::vector<ObjectGroup> out;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const nlohmann::json &g = it.value();
        ObjectGroup og;
        og.name = g.at("name").get<std::string>();
        og.objects = g.at("list_objects").get<std::vector<std::string>>();
        og.backgrounds = g.at("background").get<std::vector<std::string>>();
        out.push_back(std::move(og));
    }
    validate_groups(out);
    return out;
}

inline std::vector<ObjectGroup> load_groups(const std::string &path) {
    std::ifstream f(path);
    if (!f)
        throw std::runtime_error("load_groups: cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception &e) {
        throw std::runtime_error("load_groups: bad JSON in " + path + ": " + e.what());
    }
    return groups_from_json(j);
}

inline nlohmann::json sample_to_json(const BenchSample &s) {
    nlohmann::json j;
    j["id"] = s.id;
    j["task"] = to_string(s.kind);
    j["source_prompt"] = s.source_prompt;
    j["target_prompt"] = s.target_prompt;
    j["instruction"] = s.instruction;
    j["source_object"] = s.source_object;
    j["target_object"] = s.target_object ? nlohmann::json(*s.target_object) : nlohmann::json();
    j["background"] = s.background;
    return j;
}

inline BenchSample sample_from_json(const nlohmann::json &j) {
    BenchSample s;
    s.id = j.at("id").get<std::string>();
    s.kind = task_from_string(j.at("task").get<std::string>());
    s.source_prompt = j.at("source_prompt").get<std::string>();
    s.target_prompt = j.at("target_prompt").get<std::string>();
    s.instruction = j.at("instruction").get<std::string>();
    s.source_object = j.at("source_object").get<std::string>();
    if (j.contains("target_object") && !j["target_object"].is_null())
        s.target_object = j["target_object"].get<std::string>();
    s.background = j.value("background", "");
    if (s.kind == TaskKind::remove && s.target_object)
        throw std::invalid_argument("sample " + s.id + ": removal carries a target object");
    if (s.kind != TaskKind::remove && !s.target_object)
        throw std::invalid_argument("sample " + s.id + ": missing target object");
    return s;
}

// One sample per line.
inline void write_sample_manifest(const std::string &path,
                                  const std::vector<BenchSample> &samples) {
    std::ofstream f(path);
    if (!f)
        throw std::runtime_error("write_sample_manifest: cannot write " + path);
    for (const BenchSample &s : samples)
        f << sample_to_json(s).dump() << "\n";
}

inline std::vector<BenchSample> load_sample_manifest(const std::string &path) {
    std::ifstream f(path);
    if (!f)
        throw std::runtime_error("load_sample_manifest: cannot open " + path);
    std::vector<BenchSample> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        try {
            out.push_back(sample_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception &e) {
            throw std::runtime_error("load_sample_manifest: line " + std::to_string(lineno) +
                                     " of " + path + ": " + e.what());
        }
    }
    return out;
}

} // namespace flexedit
