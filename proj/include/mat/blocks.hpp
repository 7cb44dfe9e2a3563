#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "mat/attention.hpp"
#include "mat/config.hpp"
#include "mat/ops.hpp"

// Composite blocks: LAB, MSConvStar, MAB, RMAG. Each forward walks the tape
// through its sub-ops; parameters are looked up by dotted name.

namespace mat {

enum class AttnMode { MA, SMA };

template <class S>
struct GraphCtx {
    Tape<S>* tape = nullptr;
    const ModelConfig* cfg = nullptr;
    std::unordered_map<std::string, Var> params;

    Var p(const std::string& name) const {
        auto it = params.find(name);
        if (it == params.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }
};

// x + CA(DWConv3x3(Conv1x1(x))) with squeeze-excitation channel attention.
template <class S>
Var lab_forward(GraphCtx<S>& g, Var x, const std::string& pre) {
    Tape<S>& t = *g.tape;
    Var u = op_conv2d(t, x, g.p(pre + ".conv1.weight"), g.p(pre + ".conv1.bias"));
    u = op_dwconv2d(t, u, g.p(pre + ".dw.weight"), g.p(pre + ".dw.bias"));
    Var gate = op_global_avg_pool(t, u);
    gate = op_relu(t, op_conv2d(t, gate, g.p(pre + ".ca.fc1.weight"), g.p(pre + ".ca.fc1.bias")));
    gate = op_sigmoid(t, op_conv2d(t, gate, g.p(pre + ".ca.fc2.weight"), g.p(pre + ".ca.fc2.bias")));
    u = op_channel_scale(t, u, gate);
    return op_add(t, x, u);
}

// Star token mixer: MSConv(gelu(W1 x)) . (W2 x), projected back to C.
// MSConv is identity plus parallel depthwise branches at each scale.
template <class S>
Var msconvstar_forward(GraphCtx<S>& g, Var x, const std::string& pre) {
    Tape<S>& t = *g.tape;
    Var a = op_gelu(t, op_conv2d(t, x, g.p(pre + ".expand_gate.weight"), g.p(pre + ".expand_gate.bias")));
    Var b = op_conv2d(t, x, g.p(pre + ".expand_lin.weight"), g.p(pre + ".expand_lin.bias"));
    Var ms = a;
    for (int k : g.cfg->msconv_scales) {
        const std::string dw = pre + ".dw" + std::to_string(k);
        ms = op_add(t, ms, op_dwconv2d(t, a, g.p(dw + ".weight"), g.p(dw + ".bias")));
    }
    Var star = op_mul(t, ms, b);
    return op_conv2d(t, star, g.p(pre + ".proj.weight"), g.p(pre + ".proj.bias"));
}

// Resolved per-range dilations for one attention call.
inline std::vector<int> resolve_dilations(const ModelConfig& cfg, AttnMode mode, int H, int W) {
    std::vector<int> out(cfg.range_sizes.size(), 1);
    if (mode == AttnMode::SMA) {
        for (std::size_t r = 0; r < cfg.range_sizes.size(); ++r)
            out[r] = cfg.dilations.empty() ? max_dilation(cfg.range_sizes[r], H, W)
                                           : cfg.dilations[r];
    }
    return out;
}

// Multi-range attention: shared bias-free QKV projection, one head-group per
// range size, channel concat, 1x1 fusion.
template <class S>
Var multi_range_attention_forward(GraphCtx<S>& g, Var x, const std::string& pre, AttnMode mode) {
    Tape<S>& t = *g.tape;
    const ModelConfig& cfg = *g.cfg;
    const Tensor<S>& xv = t.val(x);
    const std::vector<int> deltas = resolve_dilations(cfg, mode, xv.h, xv.w);
    for (std::size_t r = 0; r < cfg.range_sizes.size(); ++r)
        check_attention_geometry(cfg.range_sizes[r], deltas[r], xv.h, xv.w);
    Var qkv = op_conv2d(t, x, g.p(pre + ".qkv.weight"));
    std::vector<AttnGroup> groups;
    for (std::size_t r = 0; r < cfg.range_sizes.size(); ++r) {
        AttnGroup grp;
        grp.spec.range_k = cfg.range_sizes[r];
        grp.spec.dilation = deltas[r];
        grp.spec.heads = cfg.heads_per_range;
        grp.spec.head_dim = cfg.head_dim();
        grp.head0 = int(r) * cfg.heads_per_range;
        grp.bias = g.p(pre + ".bias." + std::to_string(r));
        groups.push_back(grp);
    }
    Var a = op_multi_group_attention(t, qkv, groups, cfg.channels);
    return op_conv2d(t, a, g.p(pre + ".fuse.weight"), g.p(pre + ".fuse.bias"));
}

// Pre-norm transformer block: x += Attn(LN(x)); x += MSConvStar(LN(x)).
template <class S>
Var mab_forward(GraphCtx<S>& g, Var x, const std::string& pre, AttnMode mode) {
    Tape<S>& t = *g.tape;
    Var n1 = op_layer_norm(t, x, g.p(pre + ".norm1.gamma"), g.p(pre + ".norm1.beta"));
    Var a = multi_range_attention_forward(g, n1, pre + ".attn", mode);
    x = op_add(t, x, a);
    Var n2 = op_layer_norm(t, x, g.p(pre + ".norm2.gamma"), g.p(pre + ".norm2.beta"));
    Var m = msconvstar_forward(g, n2, pre + ".mix");
    return op_add(t, x, m);
}

inline AttnMode mab_mode(const ModelConfig& cfg, int mab_index) {
    if (cfg.schedule == "ma_only") return AttnMode::MA;
    if (cfg.schedule == "sma_only") return AttnMode::SMA;
    return mab_index % 2 == 0 ? AttnMode::MA : AttnMode::SMA;
}

// x + Conv3x3(MAB_m(...MAB_1(LAB(x)))); MABs alternate MA, SMA, ... per the
// configured schedule.
template <class S>
Var rmag_forward(GraphCtx<S>& g, Var x, const std::string& pre) {
    Tape<S>& t = *g.tape;
    Var r = lab_forward(g, x, pre + ".lab");
    for (int m = 0; m < g.cfg->n_mab; ++m)
        r = mab_forward(g, r, pre + ".mab." + std::to_string(m), mab_mode(*g.cfg, m));
    r = op_conv2d(t, r, g.p(pre + ".conv.weight"), g.p(pre + ".conv.bias"));
    return op_add(t, x, r);
}

}  // namespace mat
