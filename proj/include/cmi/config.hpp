#pragma once

// Flat `key = value` training configuration files (a TOML subset):
// one assignment per line, `#` comments, optional quotes around strings,
// lists written as `[a, b, c]`. Unknown keys are rejected.

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cmi/error.hpp"
#include "cmi/io.hpp"
#include "cmi/trainer.hpp"

namespace cmi::config {

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::string_view unquote(std::string_view s) {
    if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) return s.substr(1, s.size() - 2);
    return s;
}

inline std::string where(std::size_t line) { return "config line " + std::to_string(line) + ": "; }

inline double as_double(std::string_view v, std::size_t line) {
    double d = 0.0;
    if (!io::parse_double(v, d)) throw ConfigError(where(line) + "expected a number, got '" + std::string(v) + "'");
    return d;
}

inline std::size_t as_size(std::string_view v, std::size_t line) {
    std::size_t n = 0;
    if (!io::parse_size(v, n)) throw ConfigError(where(line) + "expected a non-negative integer, got '" + std::string(v) + "'");
    return n;
}

inline bool as_bool(std::string_view v, std::size_t line) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError(where(line) + "expected true or false");
}

inline std::vector<std::string_view> as_list(std::string_view v, std::size_t line) {
    if (v.size() < 2 || v.front() != '[' || v.back() != ']') throw ConfigError(where(line) + "expected a [list]");
    v = trim(v.substr(1, v.size() - 2));
    std::vector<std::string_view> out;
    if (v.empty()) return out;
    for (auto item : io::split(v, ',')) out.push_back(trim(item));
    return out;
}

}  // namespace detail

/// Applies one assignment to `cfg`.
inline void set(train::TrainConfig& cfg, std::string_view key, std::string_view raw, std::size_t line = 0) {
    using namespace detail;
    const std::string_view v = unquote(trim(raw));
    if (key == "mode") cfg.mode = train::parse_mode(v);
    else if (key == "lambda") cfg.lambda = as_double(v, line);
    else if (key == "beta") cfg.beta = as_double(v, line);
    else if (key == "epochs") cfg.epochs = static_cast<int>(as_size(v, line));
    else if (key == "batch_size") cfg.batch_size = as_size(v, line);
    else if (key == "class_batch_size") cfg.class_batch_size = as_size(v, line);
    else if (key == "q_momentum") cfg.q_momentum = as_double(v, line);
    else if (key == "q_update_every") cfg.q_update_every = as_size(v, line);
    else if (key == "freeze_separation_target") cfg.freeze_separation_target = as_bool(v, line);
    else if (key == "lr") cfg.lr = as_double(v, line);
    else if (key == "momentum") cfg.momentum = as_double(v, line);
    else if (key == "weight_decay") cfg.weight_decay = as_double(v, line);
    else if (key == "lr_factor") cfg.lr_factor = as_double(v, line);
    else if (key == "lr_every_epoch") cfg.lr_every_epoch = as_bool(v, line);
    else if (key == "seed") cfg.seed = as_size(v, line);
    else if (key == "lr_milestones") {
        cfg.lr_milestones.clear();
        for (auto item : as_list(v, line)) cfg.lr_milestones.push_back(static_cast<int>(as_size(item, line)));
    } else if (key == "hidden") {
        cfg.hidden.clear();
        for (auto item : as_list(v, line)) cfg.hidden.push_back(as_size(item, line));
    } else {
        throw ConfigError(where(line) + "unknown key '" + std::string(key) + "'");
    }
}

/// Parses a whole config document on top of `base`. Mode-dependent
/// consistency is checked by TrainConfig::validate.
inline train::TrainConfig parse(std::string_view text, train::TrainConfig base = {}) {
    std::size_t line_no = 0;
    for (auto line : io::lines(text)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string_view::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError(detail::where(line_no) + "expected key = value");
        set(base, detail::trim(line.substr(0, eq)), line.substr(eq + 1), line_no);
    }
    return base;
}

inline train::TrainConfig load(const std::string& path, train::TrainConfig base = {}) {
    std::string text;
    try {
        text = io::read_file(path);
    } catch (const FormatError& e) {
        throw ConfigError(e.what());
    }
    return parse(text, std::move(base));
}

inline nlohmann::json to_json(const train::TrainConfig& c) {
    return {
        {"mode", train::to_string(c.mode)},
        {"lambda", c.lambda},
        {"beta", c.beta},
        {"ratio_r", c.ratio()},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"class_batch_size", c.class_batch_size},
        {"q_momentum", c.q_momentum},
        {"q_update_every", c.q_update_every},
        {"freeze_separation_target", c.freeze_separation_target},
        {"lr", c.lr},
        {"momentum", c.momentum},
        {"weight_decay", c.weight_decay},
        {"lr_milestones", c.lr_milestones},
        {"lr_factor", c.lr_factor},
        {"lr_every_epoch", c.lr_every_epoch},
        {"hidden", c.hidden},
        {"seed", c.seed},
    };
}

}  // namespace cmi::config
