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

#include "bdiff/checkpoint.hpp"

#include "bdiff/errors.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace bdiff {

namespace {

constexpr const char *kMagic = "NBDF1";
constexpr const char *kStatePrefix = "state.";

void put_f32(std::string &out, double v) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int k = 0; k < 4; ++k) {
        out.push_back(static_cast<char>((bits >> (8 * k)) & 0xffu));
    }
}

double get_f32(const char *p) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[k])) << (8 * k);
    }
    return static_cast<double>(std::bit_cast<float>(bits));
}

std::size_t parse_count(const std::string &line, const std::string &tag) {
    const std::string prefix = tag + " ";
    if (line.rfind(prefix, 0) != 0) {
        throw ConfigError(tag, "checkpoint header: expected '" + tag + " <n>', got '" + line + "'");
    }
    std::size_t n = 0;
    const char *b = line.data() + prefix.size();
    const char *e = line.data() + line.size();
    const auto res = std::from_chars(b, e, n);
    if (res.ec != std::errc() || res.ptr != e) {
        throw ConfigError(tag, "checkpoint header: bad count in '" + line + "'");
    }
    return n;
}

// Reads one '\n'-terminated line starting at pos.
std::string next_line(const std::string &bytes, std::size_t &pos) {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) {
        throw ConfigError("header", "checkpoint header truncated");
    }
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
}

std::string adam_name(const char *which, const std::string &param) {
    return std::string("adam.") + which + "." + param;
}

} // namespace

const Tensor *Checkpoint::find(const std::string &name) const {
    for (const auto &[n, t] : tensors) {
        if (n == name) {
            return &t;
        }
    }
    return nullptr;
}

std::string serialize_checkpoint(const Checkpoint &ckpt) {
    const ConfigEntries entries = to_entries(ckpt.config);
    std::string out = std::string(kMagic) + "\n";
    out += "config " + std::to_string(entries.size() + ckpt.state.size()) + "\n";
    for (const auto &[k, v] : entries) {
        out += k + "=" + v + "\n";
    }
    for (const auto &[k, v] : ckpt.state) {
        out += kStatePrefix + k + "=" + v + "\n";
    }
    out += "tensors " + std::to_string(ckpt.tensors.size()) + "\n";
    std::size_t offset = 0;
    for (const auto &[name, t] : ckpt.tensors) {
        out += name + " " + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + " " +
               std::to_string(offset) + "\n";
        offset += 4 * t.size();
    }
    out += "end\n";
    out.reserve(out.size() + offset);
    for (const auto &[name, t] : ckpt.tensors) {
        for (double v : t.data()) {
            put_f32(out, v);
        }
    }
    return out;
}

Checkpoint parse_checkpoint(const std::string &bytes) {
    std::size_t pos = 0;
    if (bytes.rfind(std::string(kMagic) + "\n", 0) != 0) {
        throw ConfigError("magic", "not an NBDF1 checkpoint");
    }
    pos = std::strlen(kMagic) + 1;
    const std::size_t n_config = parse_count(next_line(bytes, pos), "config");
    ConfigEntries entries;
    Checkpoint ckpt;
    for (std::size_t i = 0; i < n_config; ++i) {
        const std::string line = next_line(bytes, pos);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(line, "checkpoint config line without '='");
        }
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        if (key.rfind(kStatePrefix, 0) == 0) {
            ckpt.state[key.substr(std::strlen(kStatePrefix))] = value;
        } else {
            entries.emplace_back(std::move(key), std::move(value));
        }
    }
    ckpt.config = from_entries(entries);
    const std::size_t n_tensors = parse_count(next_line(bytes, pos), "tensors");
    struct Entry {
        std::string name;
        std::size_t rows, cols, offset;
    };
    std::vector<Entry> dir;
    std::size_t expected_offset = 0;
    for (std::size_t i = 0; i < n_tensors; ++i) {
        const std::string line = next_line(bytes, pos);
        std::istringstream ls(line);
        Entry e;
        std::string shape;
        char x = 0;
        if (!(ls >> e.name >> shape >> e.offset)) {
            throw ConfigError(line, "malformed tensor directory line");
        }
        std::istringstream ss(shape);
        if (!(ss >> e.rows >> x >> e.cols) || x != 'x') {
            throw ConfigError(e.name, "malformed tensor shape '" + shape + "'");
        }
        if (e.offset != expected_offset) {
            throw ConfigError(e.name, "tensor offset out of directory order");
        }
        expected_offset += 4 * e.rows * e.cols;
        dir.push_back(std::move(e));
    }
    if (next_line(bytes, pos) != "end") {
        throw ConfigError("end", "missing end of checkpoint header");
    }
    if (bytes.size() - pos != expected_offset) {
        throw ConfigError("payload", "checkpoint payload has " + std::to_string(bytes.size() - pos) +
                                         " bytes, directory expects " +
                                         std::to_string(expected_offset));
    }
    for (const auto &e : dir) {
        Tensor t(e.rows, e.cols);
        const char *p = bytes.data() + pos + e.offset;
        auto d = t.data();
        for (std::size_t k = 0; k < d.size(); ++k) {
            d[k] = get_f32(p + 4 * k);
        }
        ckpt.tensors.emplace_back(e.name, std::move(t));
    }
    return ckpt;
}

void save_checkpoint(const std::filesystem::path &path, const Checkpoint &ckpt) {
    const std::string bytes = serialize_checkpoint(ckpt);
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot write checkpoint '" + tmp.string() + "'");
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw std::runtime_error("short write to '" + tmp.string() + "'");
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read checkpoint '" + path.string() + "'");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_checkpoint(ss.str());
}

Checkpoint make_checkpoint(const RunConfig &cfg, const Model &model, const TrainState *state) {
    Checkpoint ckpt;
    ckpt.config = cfg;
    for (const auto &p : model.parameters()) {
        ckpt.tensors.emplace_back(p.name, p.var->value);
    }
    if (state) {
        ckpt.state["step"] = std::to_string(state->step);
        ckpt.state["adam_steps"] = std::to_string(state->optimizer.steps_taken());
        const Adam &opt = state->optimizer;
        if (opt.first_moments().size() == model.parameters().size()) {
            for (std::size_t k = 0; k < model.parameters().size(); ++k) {
                const std::string &name = model.parameters()[k].name;
                ckpt.tensors.emplace_back(adam_name("m", name), opt.first_moments()[k]);
                ckpt.tensors.emplace_back(adam_name("v", name), opt.second_moments()[k]);
            }
        }
    }
    return ckpt;
}

Model restore_model(const Checkpoint &ckpt) {
    try {
        ckpt.config.model.validate();
    } catch (const std::invalid_argument &e) {
        throw ConfigError("model", e.what());
    }
    Model model(ckpt.config.model, ckpt.config.train.seed);
    for (auto &p : model.parameters()) {
        const Tensor *t = ckpt.find(p.name);
        if (!t) {
            throw ConfigError(p.name, "checkpoint lacks parameter");
        }
        if (!t->same_shape(p.var->value)) {
            throw ConfigError(p.name, "checkpoint shape " + t->shape_str() + " != model shape " +
                                          p.var->value.shape_str());
        }
        p.var->value = *t;
    }
    return model;
}

bool restore_train_state(const Checkpoint &ckpt, const Model &model, TrainState &state) {
    const auto step = ckpt.state.find("step");
    if (step == ckpt.state.end()) {
        return false;
    }
    state.step = std::stoull(step->second);
    state.optimizer = Adam(model.parameters());
    for (std::size_t k = 0; k < model.parameters().size(); ++k) {
        const std::string &name = model.parameters()[k].name;
        const Tensor *m = ckpt.find(adam_name("m", name));
        const Tensor *v = ckpt.find(adam_name("v", name));
        if (!m || !v) {
            return false;
        }
        state.optimizer.first_moments()[k] = *m;
        state.optimizer.second_moments()[k] = *v;
    }
    const auto t = ckpt.state.find("adam_steps");
    state.optimizer.set_steps_taken(t == ckpt.state.end() ? state.step : std::stoull(t->second));
    return true;
}

} // namespace bdiff
