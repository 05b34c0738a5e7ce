#pragma once

#include <string>
#include <vector>

#include "mambo/mixers.hpp"

namespace mambo {

enum class Topology { Mambo1, Mambo2, Mambo3, Mambo4 };

inline const char* topology_name(Topology t) {
    switch (t) {
        case Topology::Mambo1: return "MAMBO1";
        case Topology::Mambo2: return "MAMBO2";
        case Topology::Mambo3: return "MAMBO3";
        case Topology::Mambo4: return "MAMBO4";
    }
    throw std::invalid_argument("unknown topology");
}

enum class LayerKind { MambaLayer, MamerLayer, TransformerLayer };

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::MambaLayer: return "MAMBA_LAYER";
        case LayerKind::MamerLayer: return "MAMER_LAYER";
        case LayerKind::TransformerLayer: return "TRANSFORMER_LAYER";
    }
    throw std::invalid_argument("unknown layer kind");
}

using LayerSpec = std::vector<LayerKind>;

struct BackboneConfig {
    Topology topology = Topology::Mambo1;
    index_t n_layers = 5;     // L
    index_t ssm_per_unit = 1; // N, SSM blocks composed inside one residual unit
    index_t hidden_dim = 128; // D
    index_t input_dim = 1024; // F
    MixerConfig mixer;
    index_t n_attn_heads = 4;
    index_t ffn_mult = 4;
    double norm_eps = 1e-6;

    void validate() const {
        detail::require(n_layers >= 1, "BackboneConfig: L must be >= 1");
        detail::require(ssm_per_unit >= 1, "BackboneConfig: N must be >= 1");
        detail::require(hidden_dim >= 1 && input_dim >= 1, "BackboneConfig: dims must be positive");
        detail::require(n_attn_heads >= 1 && hidden_dim % n_attn_heads == 0,
                        "BackboneConfig: D must be divisible by n_attn_heads");
        detail::require(ffn_mult >= 1, "BackboneConfig: ffn_mult must be >= 1");
        detail::require(norm_eps > 0, "BackboneConfig: norm_eps must be positive");
        MixerConfig mc = mixer;
        mc.model_dim = hidden_dim;
        mc.validate();
    }
};

// Deterministic layer layout per topology. Alternating topologies start with
// a Mamba layer; odd L gives ceil(L/2) Mamba layers.
inline LayerSpec layer_spec_for(Topology topology, index_t n_layers) {
    detail::require(n_layers >= 1, "layer_spec_for: L must be >= 1");
    LayerSpec spec;
    spec.reserve(static_cast<std::size_t>(n_layers));
    for (index_t i = 0; i < n_layers; ++i) {
        switch (topology) {
            case Topology::Mambo1: spec.push_back(LayerKind::MambaLayer); break;
            case Topology::Mambo2: spec.push_back(LayerKind::MamerLayer); break;
            case Topology::Mambo3:
                spec.push_back(i % 2 == 0 ? LayerKind::MambaLayer : LayerKind::TransformerLayer);
                break;
            case Topology::Mambo4:
                spec.push_back(i % 2 == 0 ? LayerKind::MambaLayer : LayerKind::MamerLayer);
                break;
            default: throw std::invalid_argument("layer_spec_for: unknown topology");
        }
    }
    return spec;
}

// ---------------------------------------------------------------------------
// Parameter store: flat, named, creation order fixed by assembly so a seed
// fully determines every value. `decay` marks entries subject to weight
// decay (projection weights; never norm gains or biases).
// ---------------------------------------------------------------------------
template <typename R>
struct ParamStore {
    struct Entry {
        std::string name;
        Mat<R> value;
        bool decay = false;
    };
    std::vector<Entry> entries;

    int add(std::string name, Mat<R> value, bool decay) {
        entries.push_back(Entry{std::move(name), std::move(value), decay});
        return static_cast<int>(entries.size()) - 1;
    }

    int find(const std::string& name) const {
        for (std::size_t i = 0; i < entries.size(); ++i)
            if (entries[i].name == name) return static_cast<int>(i);
        return -1;
    }

    index_t total_params() const {
        index_t n = 0;
        for (const auto& e : entries) n += e.value.size();
        return n;
    }
};

struct MixerRefs {
    MixerKind kind = MixerKind::Mamba;
    int in_proj_w = -1, conv_w = -1, conv_b = -1, coeff_w = -1, dt_bias = -1, a_log = -1, skip = -1,
        norm_gain = -1, out_proj_w = -1;
};

struct MhaRefs {
    int wq = -1, bq = -1, wk = -1, bk = -1, wv = -1, bv = -1, wo = -1, bo = -1;
};

struct FfnRefs {
    int w_gate = -1, w_val = -1, w_out = -1;
};

struct LayerRefs {
    LayerKind kind = LayerKind::MambaLayer;
    int norm1_gain = -1, norm2_gain = -1;
    std::vector<MixerRefs> mixers;  // the N-stack
    MhaRefs attn;
    FfnRefs ffn;
};

struct EmbedRefs {
    int gain = -1, w = -1, b = -1;
};

struct PoolRefs {
    int w = -1, g = -1, v = -1;
};

struct HeadRefs {
    int w = -1, b = -1;
};

template <typename R>
struct Model {
    BackboneConfig cfg;
    LayerSpec spec;
    ParamStore<R> params;
    EmbedRefs embed;
    std::vector<LayerRefs> layers;
    PoolRefs pool;
    HeadRefs head;
};

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

namespace detail {

template <typename R>
struct FfnParamsPack {
    Mat<R> w_gate, w_val, w_out;
};

template <typename R>
FfnParamsPack<R> init_ffn_params(index_t dim, index_t mult, Rng& rng) {
    const index_t hidden = dim * mult;
    FfnParamsPack<R> p;
    p.w_gate = uniform_mat<R>(rng, dim, hidden, 1.0 / std::sqrt(double(dim)));
    p.w_val = uniform_mat<R>(rng, dim, hidden, 1.0 / std::sqrt(double(dim)));
    p.w_out = uniform_mat<R>(rng, hidden, dim, 1.0 / std::sqrt(double(hidden)));
    return p;
}

template <typename R>
MixerRefs register_mixer(ParamStore<R>& ps, const std::string& prefix, MixerParams<R> mp) {
    MixerRefs r;
    r.kind = mp.kind;
    auto add = [&](const char* field, Mat<R>& m, bool decay) {
        return m.empty() ? -1 : ps.add(prefix + field, std::move(m), decay);
    };
    r.in_proj_w = add(".in_proj.w", mp.in_proj_w, true);
    r.conv_w = add(".conv.w", mp.conv_w, true);
    r.conv_b = add(".conv.b", mp.conv_b, false);
    r.coeff_w = add(".coeff.w", mp.coeff_w, true);
    r.dt_bias = add(".dt_bias", mp.dt_bias, false);
    r.a_log = add(".a_log", mp.a_log, false);
    r.skip = add(".skip", mp.skip, false);
    r.norm_gain = add(".norm.gain", mp.norm_gain, false);
    r.out_proj_w = add(".out_proj.w", mp.out_proj_w, true);
    return r;
}

template <typename R>
MhaRefs register_mha(ParamStore<R>& ps, const std::string& prefix, MhaParams<R> mp) {
    MhaRefs r;
    r.wq = ps.add(prefix + ".wq", std::move(mp.wq), true);
    r.bq = ps.add(prefix + ".bq", std::move(mp.bq), false);
    r.wk = ps.add(prefix + ".wk", std::move(mp.wk), true);
    r.bk = ps.add(prefix + ".bk", std::move(mp.bk), false);
    r.wv = ps.add(prefix + ".wv", std::move(mp.wv), true);
    r.bv = ps.add(prefix + ".bv", std::move(mp.bv), false);
    r.wo = ps.add(prefix + ".wo", std::move(mp.wo), true);
    r.bo = ps.add(prefix + ".bo", std::move(mp.bo), false);
    return r;
}

template <typename R>
FfnRefs register_ffn(ParamStore<R>& ps, const std::string& prefix, FfnParamsPack<R> fp) {
    FfnRefs r;
    r.w_gate = ps.add(prefix + ".w_gate", std::move(fp.w_gate), true);
    r.w_val = ps.add(prefix + ".w_val", std::move(fp.w_val), true);
    r.w_out = ps.add(prefix + ".w_out", std::move(fp.w_out), true);
    return r;
}

}  // namespace detail

template <typename R>
Model<R> assemble_backbone(const BackboneConfig& cfg_in, std::uint64_t seed) {
    BackboneConfig cfg = cfg_in;
    cfg.mixer.model_dim = cfg.hidden_dim;
    cfg.validate();

    Model<R> m;
    m.cfg = cfg;
    m.spec = layer_spec_for(cfg.topology, cfg.n_layers);
    Rng rng(Rng::derive(seed, 0x1417));

    const index_t D = cfg.hidden_dim, F = cfg.input_dim;
    m.embed.gain = m.params.add("embed.gain", detail::const_mat<R>(1, F, R(1)), false);
    m.embed.w = m.params.add("embed.w", detail::uniform_mat<R>(rng, F, D, 1.0 / std::sqrt(double(F))), true);
    m.embed.b = m.params.add("embed.b", Mat<R>(1, D), false);

    for (index_t li = 0; li < cfg.n_layers; ++li) {
        LayerRefs lr;
        lr.kind = m.spec[static_cast<std::size_t>(li)];
        const std::string lp = "layer" + std::to_string(li);
        lr.norm1_gain = m.params.add(lp + ".norm1.gain", detail::const_mat<R>(1, D, R(1)), false);
        lr.norm2_gain = m.params.add(lp + ".norm2.gain", detail::const_mat<R>(1, D, R(1)), false);
        const bool has_ssm = lr.kind != LayerKind::TransformerLayer;
        const bool has_attn = lr.kind != LayerKind::MambaLayer;
        const bool has_ffn = lr.kind != LayerKind::MamerLayer;
        if (has_ssm)
            for (index_t ni = 0; ni < cfg.ssm_per_unit; ++ni)
                lr.mixers.push_back(detail::register_mixer(
                    m.params, lp + ".mixer" + std::to_string(ni), init_mixer_params<R>(cfg.mixer, rng)));
        if (has_attn)
            lr.attn = detail::register_mha(m.params, lp + ".attn", init_mha_params<R>(D, rng));
        if (has_ffn)
            lr.ffn = detail::register_ffn(m.params, lp + ".ffn",
                                          detail::init_ffn_params<R>(D, cfg.ffn_mult, rng));
        m.layers.push_back(std::move(lr));
    }

    m.pool.w = m.params.add("pool.w", detail::uniform_mat<R>(rng, D, D, 1.0 / std::sqrt(double(D))), true);
    m.pool.g = m.params.add("pool.g", detail::uniform_mat<R>(rng, D, D, 1.0 / std::sqrt(double(D))), true);
    m.pool.v = m.params.add("pool.v", detail::uniform_mat<R>(rng, D, 1, 1.0 / std::sqrt(double(D))), true);
    m.head.w = m.params.add("head.w", detail::uniform_mat<R>(rng, D, 2, 0.01), true);
    m.head.b = m.params.add("head.b", Mat<R>(1, 2), false);
    return m;
}

// Exact trainable scalar count (embedding, all layers, pooling, head).
inline index_t count_parameters(const BackboneConfig& cfg) {
    return assemble_backbone<float>(cfg, 0).params.total_params();
}

// Zeroes every residual branch's output projection so each layer becomes the
// identity map (and the backbone reduces to the embedding).
template <typename R>
void zero_residual_branches(Model<R>& m) {
    auto zero = [&](int idx) {
        if (idx >= 0) m.params.entries[static_cast<std::size_t>(idx)].value.clear_to_zero();
    };
    for (auto& lr : m.layers) {
        for (auto& mx : lr.mixers) zero(mx.out_proj_w);
        zero(lr.attn.wo);
        zero(lr.attn.bo);
        zero(lr.ffn.w_out);
    }
}

// ---------------------------------------------------------------------------
// Tape forwards
// ---------------------------------------------------------------------------

template <typename R>
struct TapeModel {
    std::vector<Var> vars;  // parallel to Model::params.entries
    Var operator[](int idx) const { return idx < 0 ? Var{} : vars[static_cast<std::size_t>(idx)]; }
};

template <typename R>
TapeModel<R> lift_model(Tape<R>& t, const Model<R>& m, bool requires_grad) {
    TapeModel<R> tm;
    tm.vars.reserve(m.params.entries.size());
    for (const auto& e : m.params.entries) tm.vars.push_back(t.leaf(e.value, requires_grad));
    return tm;
}

namespace detail {

inline MixerVarSet mixer_vars(const MixerRefs& r, const std::vector<Var>& vars) {
    auto at = [&](int i) { return i < 0 ? Var{} : vars[static_cast<std::size_t>(i)]; };
    MixerVarSet v;
    v.kind = r.kind;
    v.in_proj_w = at(r.in_proj_w);
    v.conv_w = at(r.conv_w);
    v.conv_b = at(r.conv_b);
    v.coeff_w = at(r.coeff_w);
    v.dt_bias = at(r.dt_bias);
    v.a_log = at(r.a_log);
    v.skip = at(r.skip);
    v.norm_gain = at(r.norm_gain);
    v.out_proj_w = at(r.out_proj_w);
    return v;
}

inline MhaVarSet mha_vars(const MhaRefs& r, const std::vector<Var>& vars) {
    auto at = [&](int i) { return vars[static_cast<std::size_t>(i)]; };
    MhaVarSet v;
    v.wq = at(r.wq);
    v.bq = at(r.bq);
    v.wk = at(r.wk);
    v.bk = at(r.bk);
    v.wv = at(r.wv);
    v.bv = at(r.bv);
    v.wo = at(r.wo);
    v.bo = at(r.bo);
    return v;
}

template <typename R>
Var ffn_forward(Tape<R>& t, const FfnRefs& r, const TapeModel<R>& tm, Var x) {
    Var gate = t.silu(t.matmul(x, tm[r.w_gate]));
    Var val = t.matmul(x, tm[r.w_val]);
    return t.matmul(t.mul(gate, val), tm[r.w_out]);
}

}  // namespace detail

// Pre-norm residual layer: x += Sub1(rmsnorm(x)); x += Sub2(rmsnorm(x)).
// Sub1/Sub2 per kind: Mamba layer (SSM-stack, FFN), Mamer layer (SSM-stack,
// MHA), Transformer layer (MHA, FFN). The SSM stack composes N mixer blocks
// sequentially inside the first residual branch.
template <typename R>
Var apply_layer_forward(Tape<R>& t, const Model<R>& m, const TapeModel<R>& tm, const LayerRefs& lr,
                        Var x) {
    const R eps = static_cast<R>(m.cfg.norm_eps);
    Var h = t.rmsnorm_rows(x, tm[lr.norm1_gain], eps);
    Var sub1;
    if (lr.kind == LayerKind::TransformerLayer) {
        sub1 = mha_forward(t, detail::mha_vars(lr.attn, tm.vars), m.cfg.n_attn_heads, h);
    } else {
        Var s = h;
        for (const auto& mx : lr.mixers)
            s = mixer_forward(t, detail::mixer_vars(mx, tm.vars), m.cfg.mixer, s);
        sub1 = s;
    }
    x = t.add(x, sub1);
    Var h2 = t.rmsnorm_rows(x, tm[lr.norm2_gain], eps);
    Var sub2;
    if (lr.kind == LayerKind::MamerLayer) {
        sub2 = mha_forward(t, detail::mha_vars(lr.attn, tm.vars), m.cfg.n_attn_heads, h2);
    } else {
        sub2 = detail::ffn_forward(t, lr.ffn, tm, h2);
    }
    return t.add(x, sub2);
}

// RMSNorm over input features, then linear projection F -> D with bias.
template <typename R>
Var embed_forward(Tape<R>& t, const Model<R>& m, const TapeModel<R>& tm, Var x) {
    detail::require(t.value(x).cols() == m.cfg.input_dim,
                    "embed: input feature dim differs from configured input_dim");
    Var h = t.rmsnorm_rows(x, tm[m.embed.gain], static_cast<R>(m.cfg.norm_eps));
    return t.add_row_broadcast(t.matmul(h, tm[m.embed.w]), tm[m.embed.b]);
}

template <typename R>
Var backbone_forward(Tape<R>& t, const Model<R>& m, const TapeModel<R>& tm, Var x) {
    Var h = embed_forward(t, m, tm, x);
    for (const auto& lr : m.layers) h = apply_layer_forward(t, m, tm, lr, h);
    return h;
}

// Gated attention pooling: a_t = v^T (tanh(W h_t) (.) sigmoid(G h_t)),
// alpha = softmax(a), pooled = sum_t alpha_t h_t.
template <typename R>
Var pool_forward(Tape<R>& t, const Model<R>& m, const TapeModel<R>& tm, Var h, Var* alpha_out = nullptr) {
    Var gated = t.mul(t.tanh_op(t.matmul(h, tm[m.pool.w])), t.sigmoid(t.matmul(h, tm[m.pool.g])));
    Var scores = t.matmul(gated, tm[m.pool.v]);  // T x 1
    detail::require(t.value(scores).all_finite(), "gated_attention_pool: non-finite scores");
    Var alpha = t.softmax_col(scores);
    if (alpha_out) *alpha_out = alpha;
    return t.matmul_tn(alpha, h);  // 1 x D
}

template <typename R>
Var head_forward(Tape<R>& t, const Model<R>& m, const TapeModel<R>& tm, Var pooled) {
    return t.add_row_broadcast(t.matmul(pooled, tm[m.head.w]), tm[m.head.b]);
}

// Full classifier forward: features (T x F) -> logits (1 x 2).
// Column 0 is the bonafide logit, column 1 the spoof logit.
template <typename R>
Var model_logits(Tape<R>& t, const Model<R>& m, const TapeModel<R>& tm, Var x) {
    Var h = backbone_forward(t, m, tm, x);
    Var pooled = pool_forward(t, m, tm, h);
    return head_forward(t, m, tm, pooled);
}

// ---------------------------------------------------------------------------
// Plain (no-tape) operation surface
// ---------------------------------------------------------------------------

template <typename R>
struct LogitsPair {
    R logit_bonafide = R(0);
    R logit_spoof = R(0);
    R score() const { return logit_bonafide - logit_spoof; }  // higher => more bonafide
};

template <typename R>
struct PooledEmbedding {
    Mat<R> pooled;  // 1 x D
    Mat<R> alpha;   // T x 1, nonnegative, sums to 1
};

template <typename R>
Mat<R> rmsnorm(const Mat<R>& x, const Mat<R>& gain, R eps) {
    detail::require(x.all_finite(), "rmsnorm: non-finite input");
    Tape<R> t;
    return t.value(t.rmsnorm_rows(t.leaf(x), t.leaf(gain), eps));
}

template <typename R>
struct FfnParams {
    Mat<R> w_gate, w_val, w_out;
};

template <typename R>
Mat<R> swiglu_ffn(const Mat<R>& x, const FfnParams<R>& p) {
    detail::require(p.w_gate.rows() == x.cols() && p.w_val.rows() == x.cols() &&
                        p.w_out.cols() == x.cols() && p.w_gate.cols() == p.w_out.rows() &&
                        p.w_val.cols() == p.w_out.rows(),
                    "swiglu_ffn: weight shapes inconsistent with input");
    Tape<R> t;
    Var xv = t.leaf(x);
    Var gate = t.silu(t.matmul(xv, t.leaf(p.w_gate)));
    Var val = t.matmul(xv, t.leaf(p.w_val));
    return t.value(t.matmul(t.mul(gate, val), t.leaf(p.w_out)));
}

template <typename R>
Mat<R> embed_features(const Model<R>& m, const Mat<R>& x) {
    Tape<R> t;
    TapeModel<R> tm = lift_model(t, m, false);
    return t.value(embed_forward(t, m, tm, t.leaf(x)));
}

template <typename R>
Mat<R> apply_layer(const Model<R>& m, index_t layer_index, const Mat<R>& x) {
    detail::require(layer_index >= 0 && layer_index < static_cast<index_t>(m.layers.size()),
                    "apply_layer: layer index out of range");
    Tape<R> t;
    TapeModel<R> tm = lift_model(t, m, false);
    return t.value(apply_layer_forward(t, m, tm, m.layers[static_cast<std::size_t>(layer_index)],
                                       t.leaf(x)));
}

template <typename R>
Mat<R> backbone_apply(const Model<R>& m, const Mat<R>& x) {
    Tape<R> t;
    TapeModel<R> tm = lift_model(t, m, false);
    return t.value(backbone_forward(t, m, tm, t.leaf(x)));
}

template <typename R>
PooledEmbedding<R> gated_attention_pool(const Model<R>& m, const Mat<R>& h) {
    detail::require(h.rows() >= 1, "gated_attention_pool: empty sequence");
    Tape<R> t;
    TapeModel<R> tm = lift_model(t, m, false);
    Var alpha;
    Var pooled = pool_forward(t, m, tm, t.leaf(h), &alpha);
    return PooledEmbedding<R>{t.value(pooled), t.value(alpha)};
}

template <typename R>
LogitsPair<R> classify_and_score(const Model<R>& m, const Mat<R>& pooled) {
    Tape<R> t;
    TapeModel<R> tm = lift_model(t, m, false);
    const Mat<R>& lg = t.value(head_forward(t, m, tm, t.leaf(pooled)));
    return LogitsPair<R>{lg(0, 0), lg(0, 1)};
}

template <typename R>
LogitsPair<R> utterance_logits(const Model<R>& m, const Mat<R>& features) {
    Tape<R> t;
    TapeModel<R> tm = lift_model(t, m, false);
    const Mat<R>& lg = t.value(model_logits(t, m, tm, t.leaf(features)));
    return LogitsPair<R>{lg(0, 0), lg(0, 1)};
}

}  // namespace mambo
