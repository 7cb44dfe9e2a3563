#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "mat/tensor.hpp"

namespace mat {

// Complete architectural hyperparameter record. Every parameter shape is a
// pure function of this struct.
struct ModelConfig {
    int channels = 60;
    int n_rmag = 4;
    int n_mab = 2;
    std::vector<int> range_sizes = {7, 9, 11};
    // Explicit per-range dilations for SMA; empty means the "max" policy
    // (recomputed per input as floor(min(H, W) / k), floored at 1).
    std::vector<int> dilations;
    int heads_per_range = 2;
    int scale = 4;
    int ca_reduction = 16;
    std::vector<int> msconv_scales = {3, 5, 7};
    int expansion = 3;
    std::string variant = "light";
    // MA/SMA placement across consecutive MABs: alternate | ma_only | sma_only
    std::string schedule = "alternate";
    bool zero_init_residual = false;

    int total_heads() const { return heads_per_range * int(range_sizes.size()); }
    int head_dim() const { return channels / total_heads(); }

    void validate() const {
        if (channels < 1 || n_rmag < 1 || n_mab < 1) throw ConfigError("block counts must be >= 1");
        if (range_sizes.empty()) throw ConfigError("at least one range size required");
        for (int k : range_sizes)
            if (k < 1 || k % 2 == 0) throw ConfigError("range sizes must be odd, got " + std::to_string(k));
        if (channels % total_heads() != 0)
            throw ConfigError("channels " + std::to_string(channels) + " not divisible by total heads " +
                              std::to_string(total_heads()));
        if (!dilations.empty() && dilations.size() != range_sizes.size())
            throw ConfigError("dilation list length must match range list");
        if (scale < 2 || scale > 4) throw ConfigError("scale must be 2, 3 or 4");
        if (schedule != "alternate" && schedule != "ma_only" && schedule != "sma_only")
            throw ConfigError("unknown schedule: " + schedule);
    }

    std::string serialize() const {
        auto join = [](const std::vector<int>& v) {
            std::string s;
            for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
            return s;
        };
        std::ostringstream os;
        os << "variant=" << variant << " scale=" << scale << " channels=" << channels
           << " n_rmag=" << n_rmag << " n_mab=" << n_mab << " ranges=" << join(range_sizes)
           << " heads_per_range=" << heads_per_range
           << " dilations=" << (dilations.empty() ? std::string("max") : join(dilations))
           << " ca_reduction=" << ca_reduction << " msconv_scales=" << join(msconv_scales)
           << " expansion=" << expansion << " schedule=" << schedule
           << " zero_init_residual=" << (zero_init_residual ? 1 : 0);
        return os.str();
    }

    static ModelConfig deserialize(const std::string& line) {
        auto split_ints = [](const std::string& s) {
            std::vector<int> out;
            std::stringstream ss(s);
            std::string tok;
            while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
            return out;
        };
        ModelConfig c;
        c.range_sizes.clear();
        c.msconv_scales.clear();
        std::istringstream is(line);
        std::string kv;
        while (is >> kv) {
            auto eq = kv.find('=');
            if (eq == std::string::npos) throw IntegrityError("bad config token: " + kv);
            const std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
            if (k == "variant") c.variant = v;
            else if (k == "scale") c.scale = std::stoi(v);
            else if (k == "channels") c.channels = std::stoi(v);
            else if (k == "n_rmag") c.n_rmag = std::stoi(v);
            else if (k == "n_mab") c.n_mab = std::stoi(v);
            else if (k == "ranges") c.range_sizes = split_ints(v);
            else if (k == "heads_per_range") c.heads_per_range = std::stoi(v);
            else if (k == "dilations") c.dilations = (v == "max") ? std::vector<int>{} : split_ints(v);
            else if (k == "ca_reduction") c.ca_reduction = std::stoi(v);
            else if (k == "msconv_scales") c.msconv_scales = split_ints(v);
            else if (k == "expansion") c.expansion = std::stoi(v);
            else if (k == "schedule") c.schedule = v;
            else if (k == "zero_init_residual") c.zero_init_residual = std::stoi(v) != 0;
            else throw IntegrityError("unknown config key: " + k);
        }
        c.validate();
        return c;
    }
};

inline ModelConfig light_preset(int scale = 4) {
    ModelConfig c;
    c.variant = "light";
    c.scale = scale;
    c.validate();
    return c;
}

inline ModelConfig classical_preset(int scale = 4) {
    ModelConfig c;
    c.variant = "classical";
    c.channels = 156;
    c.n_rmag = 6;
    c.n_mab = 3;
    c.range_sizes = {13, 15, 17};
    c.scale = scale;
    c.validate();
    return c;
}

// Desk-scale surrogate: exercises every code path (MA, SMA, LAB, MSConvStar)
// while trainable on CPU in minutes.
inline ModelConfig tiny_preset() {
    ModelConfig c;
    c.variant = "tiny";
    c.channels = 24;
    c.n_rmag = 2;
    c.n_mab = 2;
    c.range_sizes = {3, 5};
    c.heads_per_range = 1;
    c.scale = 2;
    c.msconv_scales = {3, 5};
    c.expansion = 2;
    c.validate();
    return c;
}

inline ModelConfig preset_by_name(const std::string& name, int scale) {
    if (name == "light") return light_preset(scale);
    if (name == "classical") return classical_preset(scale);
    if (name == "tiny") {
        ModelConfig c = tiny_preset();
        c.scale = scale;
        return c;
    }
    throw ConfigError("unknown preset: " + name);
}

}  // namespace mat
