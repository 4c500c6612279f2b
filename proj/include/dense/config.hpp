#pragma once

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dense/eval.hpp"
#include "dense/errors.hpp"

namespace dense {

/// Minimal TOML-like config document: [section] headers (dots allowed),
/// key = value lines, values being quoted strings with \n/\t/\"/\\
/// escapes, numbers, booleans, or flat arrays thereof. Comments start
/// with '#'.
struct ConfigDoc {
    // section name -> key -> value
    std::map<std::string, nlohmann::json> sections;

    const nlohmann::json* section(const std::string& name) const {
        auto it = sections.find(name);
        return it == sections.end() ? nullptr : &it->second;
    }
};

namespace cfgdetail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline std::string parse_quoted(const std::string& s, std::size_t& pos) {
    std::string out;
    ++pos;  // opening quote
    while (pos < s.size() && s[pos] != '"') {
        if (s[pos] == '\\' && pos + 1 < s.size()) {
            ++pos;
            switch (s[pos]) {
                case 'n': out += '\n'; break;
                case 't': out += '\t'; break;
                case '"': out += '"'; break;
                case '\\': out += '\\'; break;
                default:
                    throw FormatError(std::string("config: bad escape \\") + s[pos]);
            }
        } else {
            out += s[pos];
        }
        ++pos;
    }
    if (pos >= s.size()) throw FormatError("config: unterminated string");
    ++pos;  // closing quote
    return out;
}

inline nlohmann::json parse_scalar(const std::string& raw) {
    std::string s = trim(raw);
    if (s.empty()) throw FormatError("config: empty value");
    if (s.front() == '"') {
        std::size_t pos = 0;
        std::string out = parse_quoted(s, pos);
        if (trim(s.substr(pos)).size() != 0)
            throw FormatError("config: trailing characters after string");
        return out;
    }
    if (s == "true") return true;
    if (s == "false") return false;
    try {
        std::size_t consumed = 0;
        if (s.find('.') != std::string::npos || s.find('e') != std::string::npos ||
            s.find('E') != std::string::npos) {
            double d = std::stod(s, &consumed);
            if (consumed != s.size()) throw FormatError("config: bad number '" + s + "'");
            return d;
        }
        long long v = std::stoll(s, &consumed);
        if (consumed != s.size()) throw FormatError("config: bad number '" + s + "'");
        return v;
    } catch (const std::invalid_argument&) {
        throw FormatError("config: cannot parse value '" + s + "'");
    } catch (const std::out_of_range&) {
        throw FormatError("config: number out of range '" + s + "'");
    }
}

inline nlohmann::json parse_value(const std::string& raw) {
    std::string s = trim(raw);
    if (!s.empty() && s.front() == '[') {
        if (s.back() != ']') throw FormatError("config: unterminated array");
        nlohmann::json arr = nlohmann::json::array();
        std::string body = s.substr(1, s.size() - 2);
        // Split on commas outside quotes.
        std::vector<std::string> parts;
        std::string cur;
        bool in_str = false;
        for (std::size_t i = 0; i < body.size(); ++i) {
            char c = body[i];
            if (c == '"' && (i == 0 || body[i - 1] != '\\')) in_str = !in_str;
            if (c == ',' && !in_str) {
                parts.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        if (!trim(cur).empty()) parts.push_back(cur);
        for (const auto& p : parts) arr.push_back(parse_scalar(p));
        return arr;
    }
    return parse_scalar(s);
}

}  // namespace cfgdetail

inline ConfigDoc parse_config_string(const std::string& text) {
    ConfigDoc doc;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        // Strip comments outside strings.
        bool in_str = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_str = !in_str;
            if (line[i] == '#' && !in_str) {
                line = line.substr(0, i);
                break;
            }
        }
        std::string s = cfgdetail::trim(line);
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']')
                throw FormatError("config:" + std::to_string(lineno) + ": bad section header");
            section = cfgdetail::trim(s.substr(1, s.size() - 2));
            if (section.empty())
                throw FormatError("config:" + std::to_string(lineno) + ": empty section name");
            doc.sections.emplace(section, nlohmann::json::object());
            continue;
        }
        auto eq = s.find('=');
        if (eq == std::string::npos)
            throw FormatError("config:" + std::to_string(lineno) + ": expected key = value");
        std::string key = cfgdetail::trim(s.substr(0, eq));
        if (key.empty())
            throw FormatError("config:" + std::to_string(lineno) + ": empty key");
        try {
            doc.sections[section][key] = cfgdetail::parse_value(s.substr(eq + 1));
        } catch (const FormatError& e) {
            throw FormatError("config:" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return doc;
}

inline ConfigDoc parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_string(ss.str());
}

/// Applies "section.key=value" over a parsed document. The last dot-part
/// is the key; everything before it is the section.
inline void apply_override(ConfigDoc& doc, const std::string& kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
        throw ValidationError("override must look like section.key=value: '" + kv + "'");
    std::string path = cfgdetail::trim(kv.substr(0, eq));
    auto dot = path.rfind('.');
    if (dot == std::string::npos)
        throw ValidationError("override key must be section.key: '" + path + "'");
    doc.sections[path.substr(0, dot)][path.substr(dot + 1)] =
        cfgdetail::parse_value(kv.substr(eq + 1));
}

namespace cfgdetail {

template <typename T>
T get_or(const nlohmann::json& sec, const std::string& key, T fallback) {
    auto it = sec.find(key);
    if (it == sec.end()) return fallback;
    return it->get<T>();
}

inline Method parse_method(const std::string& s) {
    if (s == "poe") return Method::poe;
    if (s == "moe") return Method::moe;
    if (s == "max") return Method::max;
    if (s == "concat") return Method::concat;
    if (s == "concat_sort" || s == "concat-sort") return Method::concat_sort;
    throw ValidationError("config: unknown method '" + s + "'");
}

inline WeightingMode parse_weighting(const std::string& s) {
    if (s == "uniform") return WeightingMode::uniform;
    if (s == "similarity") return WeightingMode::similarity;
    throw ValidationError("config: unknown weighting '" + s + "'");
}

inline AllocationStrategy parse_allocation(const std::string& s) {
    if (s == "contiguous") return AllocationStrategy::contiguous;
    if (s == "similar_together") return AllocationStrategy::similar_together;
    if (s == "diverse") return AllocationStrategy::diverse;
    throw ValidationError("config: unknown allocation '" + s + "'");
}

inline PromptTemplate parse_template(const ConfigDoc& doc) {
    PromptTemplate tmpl;
    if (const auto* sec = doc.section("template")) {
        tmpl.demo_format = get_or<std::string>(*sec, "demo_format", tmpl.demo_format);
        tmpl.separator = get_or<std::string>(*sec, "separator", tmpl.separator);
        tmpl.test_format = get_or<std::string>(*sec, "test_format", tmpl.test_format);
        tmpl.continuation_prefix =
            get_or<std::string>(*sec, "continuation_prefix", tmpl.continuation_prefix);
    }
    tmpl.validate();
    return tmpl;
}

}  // namespace cfgdetail

/// Builds the run configuration from [run], [backend], [embedder]. The
/// DENSE_BACKEND_URL environment variable, when set, overrides the
/// backend endpoint.
inline RunConfig build_run_config(const ConfigDoc& doc) {
    using namespace cfgdetail;
    RunConfig cfg;
    if (const auto* run = doc.section("run")) {
        cfg.n_shots = get_or<std::size_t>(*run, "n_shots", cfg.n_shots);
        cfg.bucket_counts =
            get_or<std::vector<std::size_t>>(*run, "bucket_counts", cfg.bucket_counts);
        if (run->contains("methods")) {
            cfg.methods.clear();
            for (const auto& m : (*run)["methods"])
                cfg.methods.push_back(parse_method(m.get<std::string>()));
        }
        if (run->contains("weightings")) {
            cfg.weightings.clear();
            for (const auto& w : (*run)["weightings"])
                cfg.weightings.push_back(parse_weighting(w.get<std::string>()));
        }
        if (run->contains("allocations")) {
            cfg.allocations.clear();
            for (const auto& a : (*run)["allocations"])
                cfg.allocations.push_back(parse_allocation(a.get<std::string>()));
        }
        cfg.seeds = get_or<std::vector<std::uint64_t>>(*run, "seeds", cfg.seeds);
    }
    if (const auto* be = doc.section("backend")) {
        std::string kind = get_or<std::string>(*be, "kind", "mock");
        if (kind == "mock")
            cfg.backend.kind = BackendKind::mock;
        else if (kind == "http")
            cfg.backend.kind = BackendKind::http;
        else
            throw ValidationError("config: unknown backend kind '" + kind + "'");
        if (be->contains("endpoint")) cfg.backend.endpoint = (*be)["endpoint"].get<std::string>();
        if (be->contains("model_name"))
            cfg.backend.model_name = (*be)["model_name"].get<std::string>();
        if (be->contains("fixture")) cfg.backend.fixture_path = (*be)["fixture"].get<std::string>();
        if (be->contains("cache")) cfg.backend.cache_path = (*be)["cache"].get<std::string>();
        cfg.backend.max_retries = get_or<std::size_t>(*be, "max_retries", cfg.backend.max_retries);
        cfg.backend.echo_style = get_or<bool>(*be, "echo_style", cfg.backend.echo_style);
        cfg.backend.timeout =
            std::chrono::milliseconds(get_or<long long>(*be, "timeout_ms", 30000));
    }
    if (const char* env = std::getenv("DENSE_BACKEND_URL"); env && *env) {
        cfg.backend.endpoint = std::string(env);
    }
    if (const auto* em = doc.section("embedder")) {
        std::string source = get_or<std::string>(*em, "source", "file");
        if (source == "file")
            cfg.embedder.source = EmbedderSource::file;
        else if (source == "http")
            cfg.embedder.source = EmbedderSource::http;
        else
            throw ValidationError("config: unknown embedder source '" + source + "'");
        if (em->contains("endpoint"))
            cfg.embedder.endpoint = (*em)["endpoint"].get<std::string>();
        if (em->contains("model_name"))
            cfg.embedder.model_name = (*em)["model_name"].get<std::string>();
        if (em->contains("path")) cfg.embedder.path = (*em)["path"].get<std::string>();
        cfg.embedder.batch_size = get_or<std::size_t>(*em, "batch_size", cfg.embedder.batch_size);
    }
    cfg.validate();
    return cfg;
}

/// Builds every [dataset.NAME] section into a DatasetSpec, sharing the
/// [template] prompt.
inline std::vector<DatasetSpec> build_dataset_specs(const ConfigDoc& doc) {
    using namespace cfgdetail;
    PromptTemplate tmpl = parse_template(doc);
    std::vector<DatasetSpec> specs;
    for (const auto& [name, sec] : doc.sections) {
        if (name.rfind("dataset.", 0) != 0) continue;
        DatasetSpec spec;
        spec.name = name.substr(8);
        spec.path = get_or<std::string>(sec, "path", "");
        if (spec.path.empty())
            throw ValidationError("config: [" + name + "] requires a path");
        std::string task = get_or<std::string>(sec, "task", "classification");
        if (task == "classification") {
            spec.task_kind = TaskKind::classification;
            if (!sec.contains("labels"))
                throw ValidationError("config: [" + name + "] requires labels");
            auto labels = sec["labels"].get<std::vector<std::string>>();
            if (sec.contains("verbalizers")) {
                auto verbs = sec["verbalizers"].get<std::vector<std::string>>();
                if (verbs.size() != labels.size())
                    throw ValidationError("config: [" + name +
                                          "] verbalizers must parallel labels");
                std::unordered_map<std::string, std::string> vmap;
                for (std::size_t i = 0; i < labels.size(); ++i) vmap[labels[i]] = verbs[i];
                spec.label_set = LabelSet(labels, vmap);
            } else {
                spec.label_set = LabelSet::identity(labels);
            }
            spec.metric = MetricKind::macro_f1;
        } else if (task == "multiple_choice") {
            spec.task_kind = TaskKind::multiple_choice;
            spec.metric = MetricKind::accuracy;
        } else {
            throw ValidationError("config: [" + name + "] unknown task '" + task + "'");
        }
        std::string metric = get_or<std::string>(sec, "metric", to_string(spec.metric));
        if (metric == "macro_f1")
            spec.metric = MetricKind::macro_f1;
        else if (metric == "accuracy")
            spec.metric = MetricKind::accuracy;
        else
            throw ValidationError("config: [" + name + "] unknown metric '" + metric + "'");
        spec.eval_fraction = get_or<double>(sec, "eval_fraction", spec.eval_fraction);
        spec.max_eval = get_or<std::size_t>(sec, "max_eval", spec.max_eval);
        spec.prompt = tmpl;
        specs.push_back(std::move(spec));
    }
    if (specs.empty()) throw ValidationError("config: no [dataset.*] sections");
    return specs;
}

}  // namespace dense
