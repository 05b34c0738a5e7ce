#pragma once

#include <charconv>
#include <string>

#include "mambo/backbone.hpp"
#include "mambo/data.hpp"
#include "mambo/training.hpp"

namespace mambo {

// Experiment configuration: sectioned key/value text. Unknown sections or
// keys are rejected; missing keys keep the documented defaults. Parsing the
// emitted form reproduces the struct exactly (fixed point).

struct DataPaths {
    std::string train_manifest, train_protocol, dev_manifest, dev_protocol;
    index_t t_fixed = kDefaultFixedFrames;
};

struct ExperimentConfig {
    BackboneConfig backbone;
    TrainConfig train;
    bool has_data = false;
    DataPaths data;
    bool has_synth = false;
    SynthSpec synth;
    std::string out_dir;
};

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);  // shortest round-trip form
    return std::string(buf, res.ptr);
}

struct ConfigParser {
    std::string origin;
    std::size_t line_no = 0;

    [[noreturn]] void fail(const std::string& msg) const {
        throw io_error(origin + ": line " + std::to_string(line_no) + ": " + msg);
    }

    double to_double(const std::string& key, const std::string& v) const {
        try {
            std::size_t used = 0;
            const double d = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument("trailing characters");
            return d;
        } catch (const std::exception&) {
            fail("bad numeric value '" + v + "' for key '" + key + "'");
        }
    }

    index_t to_index(const std::string& key, const std::string& v) const {
        try {
            std::size_t used = 0;
            const long long n = std::stoll(v, &used);
            if (used != v.size()) throw std::invalid_argument("trailing characters");
            return static_cast<index_t>(n);
        } catch (const std::exception&) {
            fail("bad integer value '" + v + "' for key '" + key + "'");
        }
    }

    std::uint64_t to_u64(const std::string& key, const std::string& v) const {
        try {
            std::size_t used = 0;
            const unsigned long long n = std::stoull(v, &used);
            if (used != v.size()) throw std::invalid_argument("trailing characters");
            return static_cast<std::uint64_t>(n);
        } catch (const std::exception&) {
            fail("bad unsigned value '" + v + "' for key '" + key + "'");
        }
    }

    Topology to_topology(const std::string& v) const {
        if (v == "MAMBO1") return Topology::Mambo1;
        if (v == "MAMBO2") return Topology::Mambo2;
        if (v == "MAMBO3") return Topology::Mambo3;
        if (v == "MAMBO4") return Topology::Mambo4;
        fail("unknown topology '" + v + "' (expected MAMBO1..MAMBO4)");
    }

    MixerKind to_mixer_kind(const std::string& v) const {
        if (v == "MAMBA") return MixerKind::Mamba;
        if (v == "MAMBA2") return MixerKind::Mamba2;
        if (v == "HYDRA") return MixerKind::Hydra;
        if (v == "GDN") return MixerKind::Gdn;
        fail("unknown mixer kind '" + v + "' (expected MAMBA, MAMBA2, HYDRA or GDN)");
    }
};

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const std::string& text,
                                                const std::string& origin = "config") {
    ExperimentConfig cfg;
    detail::ConfigParser p{origin};
    std::string section;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string line = detail::trim(text.substr(pos, eol - pos));
        pos = eol + 1;
        ++p.line_no;
        if (line.empty() || line[0] == '#') {
            if (pos > text.size()) break;
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']') p.fail("unterminated section header");
            section = line.substr(1, line.size() - 2);
            if (section != "backbone" && section != "mixer" && section != "train" &&
                section != "data" && section != "synth" && section != "run")
                p.fail("unknown section [" + section + "]");
            if (section == "data") cfg.has_data = true;
            if (section == "synth") cfg.has_synth = true;
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) p.fail("expected `key = value`");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        if (key.empty()) p.fail("empty key");
        if (section.empty()) p.fail("key '" + key + "' appears before any section");

        if (section == "backbone") {
            auto& b = cfg.backbone;
            if (key == "topology") b.topology = p.to_topology(val);
            else if (key == "L") b.n_layers = p.to_index(key, val);
            else if (key == "N") b.ssm_per_unit = p.to_index(key, val);
            else if (key == "D") b.hidden_dim = p.to_index(key, val);
            else if (key == "input_dim") b.input_dim = p.to_index(key, val);
            else if (key == "n_attn_heads") b.n_attn_heads = p.to_index(key, val);
            else if (key == "ffn_mult") b.ffn_mult = p.to_index(key, val);
            else if (key == "norm_eps") b.norm_eps = p.to_double(key, val);
            else if (key == "mixer") b.mixer.kind = p.to_mixer_kind(val);  // shorthand
            else p.fail("unknown key '" + key + "' in [backbone]");
        } else if (section == "mixer") {
            auto& m = cfg.backbone.mixer;
            if (key == "kind") m.kind = p.to_mixer_kind(val);
            else if (key == "state_dim") m.state_dim = p.to_index(key, val);
            else if (key == "head_dim") m.head_dim = p.to_index(key, val);
            else if (key == "expand") m.expand = p.to_index(key, val);
            else if (key == "conv_width") m.conv_width = p.to_index(key, val);
            else p.fail("unknown key '" + key + "' in [mixer]");
        } else if (section == "train") {
            auto& t = cfg.train;
            if (key == "peak_lr") t.peak_lr = p.to_double(key, val);
            else if (key == "beta1") t.beta1 = p.to_double(key, val);
            else if (key == "beta2") t.beta2 = p.to_double(key, val);
            else if (key == "weight_decay") t.weight_decay = p.to_double(key, val);
            else if (key == "warmup_frac") t.warmup_frac = p.to_double(key, val);
            else if (key == "max_epochs") t.max_epochs = p.to_index(key, val);
            else if (key == "patience") t.patience = p.to_index(key, val);
            else if (key == "batch_size") t.batch_size = p.to_index(key, val);
            else if (key == "focal_gamma") t.focal_gamma = p.to_double(key, val);
            else if (key == "focal_alpha_bonafide") t.focal_alpha_bonafide = p.to_double(key, val);
            else if (key == "focal_alpha_spoof") t.focal_alpha_spoof = p.to_double(key, val);
            else if (key == "topk") t.topk = p.to_index(key, val);
            else if (key == "seed") t.seed = p.to_u64(key, val);
            else if (key == "aug_noise_std") t.aug_noise_std = p.to_double(key, val);
            else p.fail("unknown key '" + key + "' in [train]");
        } else if (section == "data") {
            auto& d = cfg.data;
            if (key == "train_manifest") d.train_manifest = val;
            else if (key == "train_protocol") d.train_protocol = val;
            else if (key == "dev_manifest") d.dev_manifest = val;
            else if (key == "dev_protocol") d.dev_protocol = val;
            else if (key == "t_fixed") d.t_fixed = p.to_index(key, val);
            else p.fail("unknown key '" + key + "' in [data]");
        } else if (section == "synth") {
            auto& s = cfg.synth;
            if (key == "n_bonafide") s.n_bonafide = p.to_index(key, val);
            else if (key == "n_spoof") s.n_spoof = p.to_index(key, val);
            else if (key == "frames") s.frames = p.to_index(key, val);
            else if (key == "dims") s.dims = p.to_index(key, val);
            else if (key == "local_magnitude") s.local_magnitude = p.to_double(key, val);
            else if (key == "local_frames") s.local_frames = p.to_index(key, val);
            else if (key == "local_dims") s.local_dims = p.to_index(key, val);
            else if (key == "global_magnitude") s.global_magnitude = p.to_double(key, val);
            else if (key == "global_dims") s.global_dims = p.to_index(key, val);
            else if (key == "noise_level") s.noise_level = p.to_double(key, val);
            else if (key == "seed") s.seed = p.to_u64(key, val);
            else p.fail("unknown key '" + key + "' in [synth]");
        } else {  // run
            if (key == "out_dir") cfg.out_dir = val;
            else p.fail("unknown key '" + key + "' in [run]");
        }
        if (pos > text.size()) break;
    }
    return cfg;
}

inline std::string emit_experiment_config(const ExperimentConfig& cfg) {
    using detail::fmt_double;
    std::string o;
    const auto& b = cfg.backbone;
    o += "[backbone]\n";
    o += "topology = " + std::string(topology_name(b.topology)) + "\n";
    o += "L = " + std::to_string(b.n_layers) + "\n";
    o += "N = " + std::to_string(b.ssm_per_unit) + "\n";
    o += "D = " + std::to_string(b.hidden_dim) + "\n";
    o += "input_dim = " + std::to_string(b.input_dim) + "\n";
    o += "n_attn_heads = " + std::to_string(b.n_attn_heads) + "\n";
    o += "ffn_mult = " + std::to_string(b.ffn_mult) + "\n";
    o += "norm_eps = " + fmt_double(b.norm_eps) + "\n";
    o += "\n[mixer]\n";
    o += "kind = " + std::string(mixer_kind_name(b.mixer.kind)) + "\n";
    o += "state_dim = " + std::to_string(b.mixer.state_dim) + "\n";
    o += "head_dim = " + std::to_string(b.mixer.head_dim) + "\n";
    o += "expand = " + std::to_string(b.mixer.expand) + "\n";
    o += "conv_width = " + std::to_string(b.mixer.conv_width) + "\n";
    const auto& t = cfg.train;
    o += "\n[train]\n";
    o += "peak_lr = " + fmt_double(t.peak_lr) + "\n";
    o += "beta1 = " + fmt_double(t.beta1) + "\n";
    o += "beta2 = " + fmt_double(t.beta2) + "\n";
    o += "weight_decay = " + fmt_double(t.weight_decay) + "\n";
    o += "warmup_frac = " + fmt_double(t.warmup_frac) + "\n";
    o += "max_epochs = " + std::to_string(t.max_epochs) + "\n";
    o += "patience = " + std::to_string(t.patience) + "\n";
    o += "batch_size = " + std::to_string(t.batch_size) + "\n";
    o += "focal_gamma = " + fmt_double(t.focal_gamma) + "\n";
    o += "focal_alpha_bonafide = " + fmt_double(t.focal_alpha_bonafide) + "\n";
    o += "focal_alpha_spoof = " + fmt_double(t.focal_alpha_spoof) + "\n";
    o += "topk = " + std::to_string(t.topk) + "\n";
    o += "seed = " + std::to_string(t.seed) + "\n";
    o += "aug_noise_std = " + fmt_double(t.aug_noise_std) + "\n";
    if (cfg.has_data) {
        const auto& d = cfg.data;
        o += "\n[data]\n";
        o += "train_manifest = " + d.train_manifest + "\n";
        o += "train_protocol = " + d.train_protocol + "\n";
        o += "dev_manifest = " + d.dev_manifest + "\n";
        o += "dev_protocol = " + d.dev_protocol + "\n";
        o += "t_fixed = " + std::to_string(d.t_fixed) + "\n";
    }
    if (cfg.has_synth) {
        const auto& s = cfg.synth;
        o += "\n[synth]\n";
        o += "n_bonafide = " + std::to_string(s.n_bonafide) + "\n";
        o += "n_spoof = " + std::to_string(s.n_spoof) + "\n";
        o += "frames = " + std::to_string(s.frames) + "\n";
        o += "dims = " + std::to_string(s.dims) + "\n";
        o += "local_magnitude = " + fmt_double(s.local_magnitude) + "\n";
        o += "local_frames = " + std::to_string(s.local_frames) + "\n";
        o += "local_dims = " + std::to_string(s.local_dims) + "\n";
        o += "global_magnitude = " + fmt_double(s.global_magnitude) + "\n";
        o += "global_dims = " + std::to_string(s.global_dims) + "\n";
        o += "noise_level = " + fmt_double(s.noise_level) + "\n";
        o += "seed = " + std::to_string(s.seed) + "\n";
    }
    o += "\n[run]\n";
    o += "out_dir = " + cfg.out_dir + "\n";
    return o;
}

inline ExperimentConfig read_experiment_config(const std::string& path) {
    return parse_experiment_config(read_file_bytes(path), path);
}

}  // namespace mambo
