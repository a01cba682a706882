#pragma once

#include <string>
#include <vector>

#include "modattn/tensor.hpp"

namespace modattn {

template <typename S>
struct Linear {
    NodeId W = -1;  // in x out
    NodeId b = -1;  // 1 x out (optional)
    int in = 0, out = 0;

    static Linear create(ParamStore<S>& ps, const std::string& name, int in, int out,
                         bool bias = true) {
        Linear l;
        l.in = in;
        l.out = out;
        l.W = ps.add(name + ".W", in, out, in);
        if (bias) l.b = ps.add_zeros(name + ".b", 1, out);
        return l;
    }

    NodeId apply(Engine<S>& eng, NodeId x) const {
        NodeId y = eng.matmul(x, W);
        if (b >= 0) y = eng.add_rowvec(y, b);
        return y;
    }
};

// Alternating linear + ReLU, final layer linear.
template <typename S>
struct Mlp {
    std::vector<Linear<S>> layers;

    static Mlp create(ParamStore<S>& ps, const std::string& name, int in,
                      const std::vector<int>& widths) {
        if (widths.empty()) throw ConfigError("mlp " + name + ": no layer widths");
        Mlp m;
        int cur = in;
        for (size_t i = 0; i < widths.size(); ++i) {
            m.layers.push_back(
                Linear<S>::create(ps, name + ".fc" + std::to_string(i), cur, widths[i]));
            cur = widths[i];
        }
        return m;
    }

    NodeId apply(Engine<S>& eng, NodeId x) const {
        for (size_t i = 0; i < layers.size(); ++i) {
            x = layers[i].apply(eng, x);
            if (i + 1 < layers.size()) x = eng.relu(x);
        }
        return x;
    }
};

template <typename S>
struct LayerNorm {
    NodeId gamma = -1, beta = -1;
    static LayerNorm create(ParamStore<S>& ps, const std::string& name, int width) {
        LayerNorm ln;
        ln.gamma = ps.add_const(name + ".g", 1, width, S(1));
        ln.beta = ps.add_zeros(name + ".b", 1, width);
        return ln;
    }
    NodeId apply(Engine<S>& eng, NodeId x) const { return eng.layer_norm(x, gamma, beta); }
};

// Attention map bundle for one layer: per-head row-stochastic maps plus
// their arithmetic mean, all on the tape so losses can differentiate
// through them.
struct AttentionMaps {
    std::vector<NodeId> heads;
    NodeId mean = -1;
};

// Multi-head attention with exposed attention maps. Queries and keys/values
// may be different sequences; all tokens are width d.
template <typename S>
struct MultiHeadAttention {
    int d = 0, heads = 0, dh = 0;
    Linear<S> wq, wk, wv, wo;

    static MultiHeadAttention create(ParamStore<S>& ps, const std::string& name, int d,
                                     int heads) {
        if (heads <= 0 || d % heads != 0)
            throw ConfigError("attention " + name + ": head count " + std::to_string(heads) +
                              " must divide width " + std::to_string(d));
        MultiHeadAttention a;
        a.d = d;
        a.heads = heads;
        a.dh = d / heads;
        a.wq = Linear<S>::create(ps, name + ".q", d, d, false);
        a.wk = Linear<S>::create(ps, name + ".k", d, d, false);
        a.wv = Linear<S>::create(ps, name + ".v", d, d, false);
        a.wo = Linear<S>::create(ps, name + ".o", d, d, false);
        return a;
    }

    struct Result {
        NodeId out = -1;  // num_queries x d
        AttentionMaps maps;
    };

    Result apply(Engine<S>& eng, NodeId queries, NodeId keys_values) const {
        if (eng.shape(queries).cols != d || eng.shape(keys_values).cols != d)
            throw DimensionError("attention: token width mismatch, queries " +
                                 eng.shape(queries).str() + " keys " +
                                 eng.shape(keys_values).str() + " expected width " +
                                 std::to_string(d));
        const NodeId q = wq.apply(eng, queries);
        const NodeId k = wk.apply(eng, keys_values);
        const NodeId v = wv.apply(eng, keys_values);
        const S inv_sqrt_dk = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

        Result res;
        std::vector<NodeId> blended;
        blended.reserve(static_cast<size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            const NodeId qh = eng.slice_cols(q, h * dh, (h + 1) * dh);
            const NodeId kh = eng.slice_cols(k, h * dh, (h + 1) * dh);
            const NodeId vh = eng.slice_cols(v, h * dh, (h + 1) * dh);
            const NodeId scores = eng.scale(eng.matmul_nt(qh, kh), inv_sqrt_dk);
            const NodeId map = eng.softmax_rows(scores);
            res.maps.heads.push_back(map);
            blended.push_back(eng.matmul(map, vh));
        }
        NodeId mean = res.maps.heads[0];
        for (int h = 1; h < heads; ++h) mean = eng.add(mean, res.maps.heads[static_cast<size_t>(h)]);
        res.maps.mean = eng.scale(mean, S(1) / static_cast<S>(heads));
        res.out = wo.apply(eng, eng.concat_cols(blended));
        return res;
    }
};

// Spatial grid of square patches over an image. Token k covers the s x s
// patch at row k / (W/s), col k % (W/s); row-major.
struct PatchGrid {
    int height = 48;
    int width = 48;
    int stride = 6;

    bool operator==(const PatchGrid&) const = default;

    int patches_per_row() const { return width / stride; }
    int patch_rows() const { return height / stride; }
    int tokens() const { return patches_per_row() * patch_rows(); }
    int patch_dim() const { return stride * stride * 3; }

    void validate() const {
        if (stride <= 0 || height % stride != 0 || width % stride != 0)
            throw ConfigError("patch grid: stride " + std::to_string(stride) +
                              " must divide " + std::to_string(height) + "x" +
                              std::to_string(width));
    }
};

// Rearranges an HxWx3 image (row-major, floats in [0,1]) into Z x (s*s*3)
// patch rows.
template <typename F>
inline void image_to_patches(const F* image, const PatchGrid& g, F* out) {
    const int ppr = g.patches_per_row();
    for (int pr = 0; pr < g.patch_rows(); ++pr)
        for (int pc = 0; pc < ppr; ++pc) {
            F* dst = out + (pr * ppr + pc) * g.patch_dim();
            for (int y = 0; y < g.stride; ++y)
                for (int x = 0; x < g.stride; ++x) {
                    const int py = pr * g.stride + y;
                    const int px = pc * g.stride + x;
                    const F* src = image + (py * g.width + px) * 3;
                    *dst++ = src[0];
                    *dst++ = src[1];
                    *dst++ = src[2];
                }
        }
}

// Learned linear projection of flattened patches plus a learned 2D positional
// embedding, one row per patch token.
template <typename S>
struct PatchEmbed {
    PatchGrid grid;
    Linear<S> proj;
    NodeId pos = -1;  // Z x d

    static PatchEmbed create(ParamStore<S>& ps, const std::string& name, const PatchGrid& grid,
                             int d) {
        grid.validate();
        PatchEmbed pe;
        pe.grid = grid;
        pe.proj = Linear<S>::create(ps, name + ".proj", grid.patch_dim(), d);
        pe.pos = ps.add(name + ".pos", grid.tokens(), d, d);
        return pe;
    }

    // image: H*W*3 floats. Returns Z x d tokens.
    NodeId apply(Engine<S>& eng, std::span<const S> image) const {
        if (static_cast<int>(image.size()) != grid.height * grid.width * 3)
            throw DimensionError("patch_embed: image size " + std::to_string(image.size()) +
                                 " does not match grid " + std::to_string(grid.height) + "x" +
                                 std::to_string(grid.width) + "x3");
        const NodeId patches = eng.leaf(grid.tokens(), grid.patch_dim());
        image_to_patches(image.data(), grid, eng.data(patches).data());
        return eng.add(proj.apply(eng, patches), pos);
    }
};

}  // namespace modattn
