// Copyright 2026 The bdiff Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "bdiff/config.hpp"

#include "bdiff/errors.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace bdiff {

namespace {

std::string fmt(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

template <class T> T parse_number(const std::string &key, const std::string &s) {
    T v{};
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw ConfigError(key, "cannot parse '" + s + "'");
    }
    return v;
}

bool parse_bool(const std::string &key, const std::string &s) {
    if (s == "true" || s == "1") {
        return true;
    }
    if (s == "false" || s == "0") {
        return false;
    }
    throw ConfigError(key, "expected true or false, got '" + s + "'");
}

struct Field {
    std::string key;
    std::function<std::string(const RunConfig &)> get;
    std::function<void(RunConfig &, const std::string &)> set;
};

template <class T> Field size_field(std::string key, T RunConfig::*section, std::size_t T::*member) {
    return {key, [=](const RunConfig &c) { return fmt(std::uint64_t{(c.*section).*member}); },
            [=](RunConfig &c, const std::string &s) {
                (c.*section).*member = parse_number<std::size_t>(key, s);
            }};
}

template <class T> Field double_field(std::string key, T RunConfig::*section, double T::*member) {
    return {key, [=](const RunConfig &c) { return fmt((c.*section).*member); },
            [=](RunConfig &c, const std::string &s) {
                (c.*section).*member = parse_number<double>(key, s);
            }};
}

template <class T, class V>
Field optional_field(std::string key, T RunConfig::*section, std::optional<V> T::*member) {
    return {key,
            [=](const RunConfig &c) {
                const auto &o = (c.*section).*member;
                if (!o) {
                    return std::string("none");
                }
                if constexpr (std::is_floating_point_v<V>) {
                    return fmt(*o);
                } else {
                    return std::to_string(*o);
                }
            },
            [=](RunConfig &c, const std::string &s) {
                auto &o = (c.*section).*member;
                if (s == "none") {
                    o.reset();
                } else {
                    o = parse_number<V>(key, s);
                }
            }};
}

const std::vector<Field> &fields() {
    static const std::vector<Field> table = [] {
        using R = RunConfig;
        std::vector<Field> f;
        f.push_back(size_field("model.vocab_size", &R::model, &ModelConfig::vocab_size));
        f.push_back(size_field("model.d_model", &R::model, &ModelConfig::d_model));
        f.push_back(size_field("model.n_heads", &R::model, &ModelConfig::n_heads));
        f.push_back(size_field("model.n_layers", &R::model, &ModelConfig::n_layers));
        f.push_back(size_field("model.d_ff", &R::model, &ModelConfig::d_ff));
        f.push_back(size_field("model.max_positions", &R::model, &ModelConfig::max_positions));
        f.push_back(double_field("model.rope_base", &R::model, &ModelConfig::rope_base));
        f.push_back(double_field("model.init_std", &R::model, &ModelConfig::init_std));
        f.push_back(double_field("model.head_init_std", &R::model, &ModelConfig::head_init_std));

        f.push_back(size_field("schedule.b0", &R::schedule, &GrowthSchedule::b0));
        f.push_back(size_field("schedule.growth_base", &R::schedule, &GrowthSchedule::growth_base));
        f.push_back(size_field("schedule.interval", &R::schedule, &GrowthSchedule::interval));
        f.push_back(size_field("schedule.warmup", &R::schedule, &GrowthSchedule::warmup));
        f.push_back(size_field("schedule.b_max", &R::schedule, &GrowthSchedule::b_max));
        f.push_back(
            optional_field("schedule.refine_budget", &R::schedule, &GrowthSchedule::refine_budget));
        f.push_back(double_field("schedule.lambda0", &R::schedule, &GrowthSchedule::lambda0));
        f.push_back(optional_field("schedule.lambda_end", &R::schedule, &GrowthSchedule::lambda_end));

        f.push_back(double_field("train.lr", &R::train, &TrainSettings::lr));
        f.push_back(size_field("train.steps", &R::train, &TrainSettings::steps));
        f.push_back(size_field("train.span_len", &R::train, &TrainSettings::span_len));
        f.push_back(size_field("train.batch_size", &R::train, &TrainSettings::batch_size));
        f.push_back({"train.seed", [](const R &c) { return fmt(c.train.seed); },
                     [](R &c, const std::string &s) {
                         c.train.seed = parse_number<std::uint64_t>("train.seed", s);
                     }});
        f.push_back({"train.corpus", [](const R &c) { return c.train.corpus; },
                     [](R &c, const std::string &s) { c.train.corpus = s; }});
        f.push_back({"train.mask_scheme",
                     [](const R &c) { return std::string(to_string(c.train.scheme.tag)); },
                     [](R &c, const std::string &s) {
                         try {
                             c.train.scheme.tag = parse_mask_scheme(s);
                         } catch (const std::invalid_argument &e) {
                             throw ConfigError("train.mask_scheme", e.what());
                         }
                     }});
        f.push_back({"train.anneal_ratio", [](const R &c) { return fmt(c.train.scheme.anneal_ratio); },
                     [](R &c, const std::string &s) {
                         c.train.scheme.anneal_ratio = parse_number<double>("train.anneal_ratio", s);
                     }});
        f.push_back({"train.corruption",
                     [](const R &c) { return std::string(to_string(c.train.corruption)); },
                     [](R &c, const std::string &s) {
                         try {
                             c.train.corruption = parse_corruption_mode(s);
                         } catch (const std::invalid_argument &e) {
                             throw ConfigError("train.corruption", e.what());
                         }
                     }});
        f.push_back(double_field("train.cooldown_frac", &R::train, &TrainSettings::cooldown_frac));
        f.push_back(double_field("train.grad_clip", &R::train, &TrainSettings::grad_clip));
        f.push_back(double_field("train.beta1", &R::train, &TrainSettings::beta1));
        f.push_back(double_field("train.beta2", &R::train, &TrainSettings::beta2));
        f.push_back(size_field("train.checkpoint_every", &R::train, &TrainSettings::checkpoint_every));
        f.push_back(double_field("train.holdout_frac", &R::train, &TrainSettings::holdout_frac));
        f.push_back({"train.elbo_weighting", [](const R &c) { return fmt_bool(c.train.elbo_weighting); },
                     [](R &c, const std::string &s) {
                         c.train.elbo_weighting = parse_bool("train.elbo_weighting", s);
                     }});

        f.push_back(size_field("decode.macro_block", &R::decode, &DecodeConfig::macro_block));
        f.push_back(size_field("decode.small_block", &R::decode, &DecodeConfig::small_block));
        f.push_back(double_field("decode.tau", &R::decode, &DecodeConfig::tau));
        f.push_back(
            optional_field("decode.max_refine_steps", &R::decode, &DecodeConfig::max_refine_steps));
        f.push_back(double_field("decode.temperature", &R::decode, &DecodeConfig::temperature));
        f.push_back(size_field("decode.max_new_tokens", &R::decode, &DecodeConfig::max_new_tokens));
        f.push_back(optional_field("decode.stop_token", &R::decode, &DecodeConfig::stop_token));
        f.push_back({"decode.seed", [](const R &c) { return fmt(c.decode.seed); },
                     [](R &c, const std::string &s) {
                         c.decode.seed = parse_number<std::uint64_t>("decode.seed", s);
                     }});
        return f;
    }();
    return table;
}

const Field *find_field(const std::string &key) {
    for (const auto &f : fields()) {
        if (f.key == key) {
            return &f;
        }
    }
    return nullptr;
}

std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace

void RunConfig::validate() const {
    auto wrap = [](const char *section, const auto &fn) {
        try {
            fn();
        } catch (const std::invalid_argument &e) {
            throw ConfigError(section, e.what());
        }
    };
    wrap("model", [&] { model.validate(); });
    wrap("schedule", [&] { schedule.validate(); });
    wrap("train", [&] { train.validate(); });
    wrap("decode", [&] { decode.validate(); });
}

ConfigEntries to_entries(const RunConfig &cfg) {
    ConfigEntries out;
    for (const auto &f : fields()) {
        out.emplace_back(f.key, f.get(cfg));
    }
    return out;
}

RunConfig from_entries(const ConfigEntries &entries) {
    RunConfig cfg;
    for (const auto &[key, value] : entries) {
        const Field *f = find_field(key);
        if (!f) {
            throw ConfigError(key, "unknown key");
        }
        f->set(cfg, value);
    }
    return cfg;
}

RunConfig parse_ini(const std::string &text) {
    ConfigEntries entries;
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line.front() == '#' || line.front() == ';') {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError(line, "malformed section header on line " + std::to_string(line_no));
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(line, "expected key = value on line " + std::to_string(line_no));
        }
        const std::string key = trim(line.substr(0, eq));
        entries.emplace_back(section.empty() ? key : section + "." + key, trim(line.substr(eq + 1)));
    }
    return from_entries(entries);
}

RunConfig load_ini(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError(path.string(), "cannot read config file");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_ini(ss.str());
}

std::string to_ini(const RunConfig &cfg) {
    std::string out;
    std::string section;
    for (const auto &[key, value] : to_entries(cfg)) {
        const auto dot = key.find('.');
        const std::string s = key.substr(0, dot);
        if (s != section) {
            out += (section.empty() ? "[" : "\n[") + s + "]\n";
            section = s;
        }
        out += key.substr(dot + 1) + " = " + value + "\n";
    }
    return out;
}

} // namespace bdiff
