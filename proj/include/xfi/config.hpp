#pragma once

// Experiment configuration: built-in presets, the INI-style file format and
// the canonical text / digest used to tie checkpoints to configs.
//
// File layout (every key optional; unknown sections or keys are errors):
//
//   [data]      latent_dim n_train n_eval joints classes seed
//   [model]     n_f d_f d_hid heads scale iterations ffn_hidden variant
//               post_norm dropout positional_encoding pe_all_blocks
//               combine_mode transformer_layers norm_eps
//   [train]     task optimizer learning_rate batch_size steps beta1 beta2 eps
//               weight_decay momentum lr_decay_every lr_decay_gamma seed
//               baseline_steps
//   [ablate]    probs = 0.5,0.5,0.8; 0.5,0.7,0.7; 0.5,0.9,0.6
//   [modality.<id>]  raw_dim mask noise_sigma p_exist spatial
//
// A file with any [modality.*] section replaces the preset's modality list;
// declaration order is the canonical modality order. `mask` is a list of
// latent indices and ranges, e.g. "0-5,8".

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "xfi/dataset.hpp"
#include "xfi/errors.hpp"
#include "xfi/model.hpp"
#include "xfi/parameter_store.hpp"
#include "xfi/training.hpp"

namespace xfi {

struct ExperimentConfig {
    std::string preset = "desk";
    SyntheticDataConfig data;
    ModelConfig model;
    TrainConfig train;
    std::size_t baseline_steps = 500;
    std::vector<std::vector<double>> ablate_probs;

    std::vector<double> existence_probs() const {
        std::vector<double> p;
        for (const auto& m : data.modalities) p.push_back(m.p_exist);
        return p;
    }

    void set_seed(std::uint64_t seed) {
        data.seed = seed;
        train.seed = seed;
    }

    void validate() const {
        data.validate();
        model.fusion.validate();
        train.validate();
        if (model.d_hid == 0) throw ConfigError("d_hid must be positive");
        if (model.joints != data.joints || model.classes != data.classes)
            throw ConfigError("model and data disagree on joints/classes");
        if (model.task != train.task) throw ConfigError("model and train disagree on the task");
        for (const auto& p : ablate_probs)
            if (p.size() != data.modalities.size())
                throw ConfigError("ablate probability vector has " + std::to_string(p.size()) + " entries for " +
                                  std::to_string(data.modalities.size()) + " modalities");
    }
};

namespace detail {

inline std::vector<bool> mask_range(std::size_t width, std::size_t begin, std::size_t end) {
    std::vector<bool> m(width, false);
    for (std::size_t i = begin; i < end; ++i) m[i] = true;
    return m;
}

inline ModalityConfig modality(std::string id, std::size_t raw_dim, std::vector<bool> mask, double sigma, double p,
                               bool spatial = false) {
    return {std::move(id), raw_dim, std::move(mask), sigma, p, spatial};
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string format_mask(const std::vector<bool>& mask) {
    std::string out;
    for (std::size_t i = 0; i < mask.size();) {
        if (!mask[i]) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j + 1 < mask.size() && mask[j + 1]) ++j;
        if (!out.empty()) out += ',';
        out += std::to_string(i);
        if (j > i) out += "-" + std::to_string(j);
        i = j + 1;
    }
    return out;
}

inline std::vector<bool> parse_mask(const std::string& text, std::size_t width) {
    std::vector<bool> mask(width, false);
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (item.empty()) continue;
        std::size_t begin = 0, end = 0;
        try {
            auto dash = item.find('-');
            begin = std::stoul(item.substr(0, dash));
            end = dash == std::string::npos ? begin : std::stoul(item.substr(dash + 1));
        } catch (const std::exception&) {
            throw ConfigError("malformed mask entry '" + item + "'");
        }
        if (end < begin || end >= width) throw ConfigError("mask entry '" + item + "' outside latent width");
        for (std::size_t i = begin; i <= end; ++i) mask[i] = true;
    }
    return mask;
}

inline std::vector<std::vector<double>> parse_prob_list(const std::string& text) {
    std::vector<std::vector<double>> out;
    std::stringstream rows(text);
    std::string row;
    while (std::getline(rows, row, ';')) {
        std::vector<double> probs;
        std::stringstream cells(row);
        std::string cell;
        while (std::getline(cells, cell, ',')) {
            if (cell.find_first_not_of(" \t") == std::string::npos) continue;
            try {
                probs.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw ConfigError("malformed probability '" + cell + "'");
            }
        }
        if (!probs.empty()) out.push_back(std::move(probs));
    }
    return out;
}

inline std::string format_prob_list(const std::vector<std::vector<double>>& list) {
    std::string out;
    for (std::size_t r = 0; r < list.size(); ++r) {
        if (r) out += "; ";
        for (std::size_t c = 0; c < list[r].size(); ++c) {
            if (c) out += ",";
            out += format_double(list[r][c]);
        }
    }
    return out;
}

} // namespace detail

/// Default `ablate` sweep: every modality at its own p_exist except the
/// last, which steps through 0.5, 0.7, 0.9.
inline std::vector<std::vector<double>> default_ablate_probs(const std::vector<ModalityConfig>& modalities) {
    std::vector<std::vector<double>> out;
    for (double last : {0.5, 0.7, 0.9}) {
        std::vector<double> p;
        for (const auto& m : modalities) p.push_back(m.p_exist);
        if (!p.empty()) p.back() = last;
        out.push_back(std::move(p));
    }
    return out;
}

/// Desk-scale preset: 4 modalities over a 12-dim latent, n_f=8, d_f=64,
/// 4 heads, scale 0.25, T=4, J=17, C=8, batch 16, 2000 steps.
inline ExperimentConfig desk_preset() {
    ExperimentConfig c;
    c.preset = "desk";
    c.data.latent_dim = 12;
    c.data.n_train = 1024;
    c.data.n_eval = 256;
    c.data.joints = 17;
    c.data.classes = 8;
    c.data.seed = 0;
    using detail::mask_range;
    auto r_mask = mask_range(12, 0, 3);
    for (std::size_t i = 8; i < 12; ++i) r_mask[i] = true;
    c.data.modalities = {
        detail::modality("I", 24, mask_range(12, 0, 8), 0.05, 0.5),
        detail::modality("L", 24, mask_range(12, 4, 12), 0.1, 0.5, true),
        detail::modality("R", 24, r_mask, 0.1, 0.5),
        detail::modality("W", 24, mask_range(12, 6, 12), 0.2, 0.5),
    };
    c.model.fusion = FusionConfig{};
    c.model.d_hid = 16;
    c.model.task = Task::Hpe;
    c.model.joints = 17;
    c.model.classes = 8;
    c.train.task = Task::Hpe;
    c.train.learning_rate = 1e-3;
    c.train.batch_size = 16;
    c.train.steps = 2000;
    c.baseline_steps = 500;
    c.ablate_probs = default_ablate_probs(c.data.modalities);
    return c;
}

/// Paper-scale architecture: 32 tokens of width 512, 8 heads, scale 0.125,
/// five modalities. Selectable, not used by the test suites.
inline ExperimentConfig paper_preset() {
    ExperimentConfig c = desk_preset();
    c.preset = "paper";
    using detail::mask_range;
    c.data.modalities = {
        detail::modality("I", 64, mask_range(12, 0, 9), 0.05, 0.5),
        detail::modality("D", 64, mask_range(12, 0, 8), 0.05, 0.5),
        detail::modality("L", 64, mask_range(12, 3, 12), 0.1, 0.5, true),
        detail::modality("R", 64, mask_range(12, 4, 12), 0.1, 0.5),
        detail::modality("W", 64, mask_range(12, 6, 12), 0.2, 0.5),
    };
    c.model.fusion.n_f = 32;
    c.model.fusion.d_f = 512;
    c.model.fusion.heads = 8;
    c.model.fusion.scale = 0.125;
    c.model.fusion.ffn_hidden = 1024;
    c.model.d_hid = 64;
    c.ablate_probs = default_ablate_probs(c.data.modalities);
    return c;
}

inline ExperimentConfig preset(const std::string& name) {
    if (name == "desk") return desk_preset();
    if (name == "paper") return paper_preset();
    throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

/// Paper learning rates: 1e-3 for HPE, 1e-4 for HAR.
inline double default_learning_rate(Task task) { return task == Task::Hpe ? 1e-3 : 1e-4; }

/// Applies INI text on top of `base`.
inline ExperimentConfig apply_config_text(ExperimentConfig base, const std::string& text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    ExperimentConfig c = std::move(base);
    bool learning_rate_set = false;

    auto to_bool = [](const std::string& key, const std::string& v) {
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ConfigError("key '" + key + "' expects true/false, got '" + v + "'");
    };
    auto to_size = [](const std::string& key, const std::string& v) -> std::size_t {
        try {
            std::size_t used = 0;
            long long x = std::stoll(v, &used);
            if (used != v.size() || x < 0) throw std::invalid_argument(v);
            return static_cast<std::size_t>(x);
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + v + "'");
        }
    };
    auto to_double = [](const std::string& key, const std::string& v) {
        try {
            std::size_t used = 0;
            double x = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
        }
    };

    using Setter = std::function<void(const std::string&, const std::string&)>;
    auto apply_section = [](const pt::ptree& section, const std::string& name, const std::map<std::string, Setter>& keys) {
        for (const auto& [key, node] : section) {
            auto it = keys.find(key);
            if (it == keys.end()) throw ConfigError("unknown key '" + key + "' in [" + name + "]");
            it->second(name + "." + key, node.get_value<std::string>());
        }
    };

    std::vector<ModalityConfig> modalities;
    std::vector<std::string> mask_texts;
    for (const auto& [section_name, section] : tree) {
        if (section_name == "data") {
            apply_section(section, section_name,
                          {{"latent_dim", [&](auto& k, auto& v) { c.data.latent_dim = to_size(k, v); }},
                           {"n_train", [&](auto& k, auto& v) { c.data.n_train = to_size(k, v); }},
                           {"n_eval", [&](auto& k, auto& v) { c.data.n_eval = to_size(k, v); }},
                           {"joints", [&](auto& k, auto& v) { c.data.joints = c.model.joints = to_size(k, v); }},
                           {"classes", [&](auto& k, auto& v) { c.data.classes = c.model.classes = to_size(k, v); }},
                           {"seed", [&](auto& k, auto& v) { c.data.seed = to_size(k, v); }}});
        } else if (section_name == "model") {
            auto& f = c.model.fusion;
            apply_section(section, section_name,
                          {{"n_f", [&](auto& k, auto& v) { f.n_f = to_size(k, v); }},
                           {"d_f", [&](auto& k, auto& v) { f.d_f = to_size(k, v); }},
                           {"d_hid", [&](auto& k, auto& v) { c.model.d_hid = to_size(k, v); }},
                           {"heads", [&](auto& k, auto& v) { f.heads = to_size(k, v); }},
                           {"scale", [&](auto& k, auto& v) { f.scale = to_double(k, v); }},
                           {"iterations", [&](auto& k, auto& v) { f.iterations = to_size(k, v); }},
                           {"ffn_hidden", [&](auto& k, auto& v) { f.ffn_hidden = to_size(k, v); }},
                           {"variant", [&](auto&, auto& v) { f.variant = parse_variant(v); }},
                           {"post_norm", [&](auto& k, auto& v) { f.post_norm = to_bool(k, v); }},
                           {"dropout", [&](auto& k, auto& v) { f.dropout_rate = to_double(k, v); }},
                           {"positional_encoding", [&](auto& k, auto& v) { f.positional_encoding = to_bool(k, v); }},
                           {"pe_all_blocks", [&](auto& k, auto& v) { c.model.pe_all_blocks = to_bool(k, v); }},
                           {"combine_mode",
                            [&](auto& k, auto& v) {
                                if (v == "concat") f.combine_mode = CombineMode::Concat;
                                else if (v == "add") f.combine_mode = CombineMode::Add;
                                else throw ConfigError("key '" + k + "' expects concat or add");
                            }},
                           {"transformer_layers", [&](auto& k, auto& v) { f.transformer_layers = to_size(k, v); }},
                           {"norm_eps", [&](auto& k, auto& v) { f.norm_eps = to_double(k, v); }}});
        } else if (section_name == "train") {
            auto& t = c.train;
            apply_section(section, section_name,
                          {{"task", [&](auto&, auto& v) { t.task = c.model.task = parse_task(v); }},
                           {"optimizer",
                            [&](auto& k, auto& v) {
                                if (v == "adamw") t.optimizer = OptimizerKind::AdamW;
                                else if (v == "sgd") t.optimizer = OptimizerKind::Sgd;
                                else throw ConfigError("key '" + k + "' expects adamw or sgd");
                            }},
                           {"learning_rate",
                            [&](auto& k, auto& v) {
                                t.learning_rate = to_double(k, v);
                                learning_rate_set = true;
                            }},
                           {"batch_size", [&](auto& k, auto& v) { t.batch_size = to_size(k, v); }},
                           {"steps", [&](auto& k, auto& v) { t.steps = to_size(k, v); }},
                           {"beta1", [&](auto& k, auto& v) { t.beta1 = to_double(k, v); }},
                           {"beta2", [&](auto& k, auto& v) { t.beta2 = to_double(k, v); }},
                           {"eps", [&](auto& k, auto& v) { t.eps = to_double(k, v); }},
                           {"weight_decay", [&](auto& k, auto& v) { t.weight_decay = to_double(k, v); }},
                           {"momentum", [&](auto& k, auto& v) { t.momentum = to_double(k, v); }},
                           {"lr_decay_every", [&](auto& k, auto& v) { t.lr_decay_every = to_size(k, v); }},
                           {"lr_decay_gamma", [&](auto& k, auto& v) { t.lr_decay_gamma = to_double(k, v); }},
                           {"seed", [&](auto& k, auto& v) { t.seed = to_size(k, v); }},
                           {"baseline_steps", [&](auto& k, auto& v) { c.baseline_steps = to_size(k, v); }}});
        } else if (section_name == "ablate") {
            apply_section(section, section_name,
                          {{"probs", [&](auto&, auto& v) { c.ablate_probs = detail::parse_prob_list(v); }}});
        } else if (section_name.rfind("modality.", 0) == 0) {
            ModalityConfig m;
            m.id = section_name.substr(9);
            std::string mask_text;
            apply_section(section, section_name,
                          {{"raw_dim", [&](auto& k, auto& v) { m.raw_dim = to_size(k, v); }},
                           {"mask", [&](auto&, auto& v) { mask_text = v; }},
                           {"noise_sigma", [&](auto& k, auto& v) { m.noise_sigma = to_double(k, v); }},
                           {"p_exist", [&](auto& k, auto& v) { m.p_exist = to_double(k, v); }},
                           {"spatial", [&](auto& k, auto& v) { m.is_spatial = to_bool(k, v); }}});
            // Masks are resolved once latent_dim is final.
            modalities.push_back(m);
            mask_texts.push_back(mask_text);
        } else {
            throw ConfigError("unknown config section [" + section_name + "]");
        }
    }
    if (!modalities.empty()) {
        for (std::size_t i = 0; i < modalities.size(); ++i)
            modalities[i].informative_mask = detail::parse_mask(mask_texts[i], c.data.latent_dim);
        c.data.modalities = std::move(modalities);
        // The inherited sweep was sized for the old list.
        if (!tree.get_child_optional("ablate.probs")) c.ablate_probs = default_ablate_probs(c.data.modalities);
    }
    if (!learning_rate_set && tree.get_child_optional("train.task")) c.train.learning_rate = default_learning_rate(c.train.task);
    return c;
}

inline ExperimentConfig load_config_file(const std::string& path, ExperimentConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return apply_config_text(std::move(base), buf.str());
}

/// Every effective setting in a fixed order; re-parsing this text on top of
/// any preset reproduces the config.
inline std::string canonical_text(const ExperimentConfig& c) {
    using detail::format_double;
    std::ostringstream o;
    const auto& f = c.model.fusion;
    const auto& t = c.train;
    auto flag = [](bool b) { return b ? "true" : "false"; };
    o << "[data]\n"
      << "latent_dim=" << c.data.latent_dim << "\nn_train=" << c.data.n_train << "\nn_eval=" << c.data.n_eval
      << "\njoints=" << c.data.joints << "\nclasses=" << c.data.classes << "\nseed=" << c.data.seed << "\n";
    o << "[model]\n"
      << "n_f=" << f.n_f << "\nd_f=" << f.d_f << "\nd_hid=" << c.model.d_hid << "\nheads=" << f.heads
      << "\nscale=" << format_double(f.scale) << "\niterations=" << f.iterations << "\nffn_hidden=" << f.ffn_hidden
      << "\nvariant=" << to_string(f.variant) << "\npost_norm=" << flag(f.post_norm)
      << "\ndropout=" << format_double(f.dropout_rate) << "\npositional_encoding=" << flag(f.positional_encoding)
      << "\npe_all_blocks=" << flag(c.model.pe_all_blocks)
      << "\ncombine_mode=" << (f.combine_mode == CombineMode::Concat ? "concat" : "add")
      << "\ntransformer_layers=" << f.transformer_layers << "\nnorm_eps=" << format_double(f.norm_eps) << "\n";
    o << "[train]\n"
      << "task=" << to_string(t.task) << "\noptimizer=" << (t.optimizer == OptimizerKind::AdamW ? "adamw" : "sgd")
      << "\nlearning_rate=" << format_double(t.learning_rate) << "\nbatch_size=" << t.batch_size
      << "\nsteps=" << t.steps << "\nbeta1=" << format_double(t.beta1) << "\nbeta2=" << format_double(t.beta2)
      << "\neps=" << format_double(t.eps) << "\nweight_decay=" << format_double(t.weight_decay)
      << "\nmomentum=" << format_double(t.momentum) << "\nlr_decay_every=" << t.lr_decay_every
      << "\nlr_decay_gamma=" << format_double(t.lr_decay_gamma) << "\nseed=" << t.seed
      << "\nbaseline_steps=" << c.baseline_steps << "\n";
    o << "[ablate]\nprobs=" << detail::format_prob_list(c.ablate_probs) << "\n";
    for (const auto& m : c.data.modalities)
        o << "[modality." << m.id << "]\n"
          << "raw_dim=" << m.raw_dim << "\nmask=" << detail::format_mask(m.informative_mask)
          << "\nnoise_sigma=" << format_double(m.noise_sigma) << "\np_exist=" << format_double(m.p_exist)
          << "\nspatial=" << flag(m.is_spatial) << "\n";
    return o.str();
}

/// 16 hex digits of FNV-1a over the canonical text.
inline std::string config_digest(const ExperimentConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canonical_text(c))));
    return buf;
}

} // namespace xfi
