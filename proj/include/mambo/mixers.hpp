#pragma once

#include <cmath>
#include <limits>

#include "mambo/rng.hpp"
#include "mambo/scans.hpp"
#include "mambo/tape.hpp"

namespace mambo {

struct MixerConfig {
    MixerKind kind = MixerKind::Mamba;
    index_t model_dim = 128;  // D
    index_t state_dim = 64;   // S
    index_t head_dim = 32;    // P
    index_t expand = 2;       // inner width multiplier
    index_t conv_width = 4;

    index_t inner_dim() const { return model_dim * expand; }
    bool headed() const { return kind != MixerKind::Mamba; }
    index_t heads() const { return headed() ? inner_dim() / head_dim : 1; }

    void validate() const {
        detail::require(model_dim >= 1 && state_dim >= 1 && expand >= 1 && conv_width >= 1,
                        "MixerConfig: dimensions must be positive");
        if (headed())
            detail::require(head_dim >= 1 && inner_dim() % head_dim == 0,
                            "MixerConfig: inner width (D*expand) must be divisible by head_dim");
    }
};

// Parameter container for one mixer block; unused members stay empty for a
// given kind. Decay parameters are stored in log/pre-activation space so the
// post-activation coefficient ranges hold by construction.
template <typename R>
struct MixerParams {
    MixerKind kind = MixerKind::Mamba;
    Mat<R> in_proj_w;
    Mat<R> conv_w, conv_b;
    Mat<R> coeff_w;    // Mamba, Hydra: projection from the conv'd stream to coefficients
    Mat<R> dt_bias;    // 1x1 (Mamba) or 1xH
    Mat<R> a_log;      // d_in x S (Mamba) or 1xH
    Mat<R> skip;       // 1 x d_in (Mamba) or 1xH (Mamba2)
    Mat<R> norm_gain;  // 1 x d_in (Mamba2, Hydra)
    Mat<R> out_proj_w;
};

struct MixerVarSet {
    MixerKind kind = MixerKind::Mamba;
    Var in_proj_w, conv_w, conv_b, coeff_w, dt_bias, a_log, skip, norm_gain, out_proj_w;
};

namespace detail {

template <typename R>
Mat<R> uniform_mat(Rng& rng, index_t rows, index_t cols, double scale) {
    Mat<R> m(rows, cols);
    for (index_t i = 0; i < m.size(); ++i) m.data()[i] = static_cast<R>(rng.uniform(-scale, scale));
    return m;
}

template <typename R>
Mat<R> const_mat(index_t rows, index_t cols, R v) {
    Mat<R> m(rows, cols);
    m.fill(v);
    return m;
}

// dt_bias init: softplus(bias) lands in [1e-3, 0.1], log-uniform.
template <typename R>
Mat<R> dt_bias_init(Rng& rng, index_t n) {
    Mat<R> m(1, n);
    for (index_t i = 0; i < n; ++i) {
        const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
        m(0, i) = static_cast<R>(std::log(std::expm1(dt)));
    }
    return m;
}

}  // namespace detail

template <typename R>
MixerParams<R> init_mixer_params(const MixerConfig& cfg, Rng& rng) {
    cfg.validate();
    const index_t D = cfg.model_dim, din = cfg.inner_dim(), S = cfg.state_dim, W = cfg.conv_width;
    const index_t H = cfg.heads();
    const double s_d = 1.0 / std::sqrt(static_cast<double>(D));
    const double s_in = 1.0 / std::sqrt(static_cast<double>(din));
    const double s_w = 1.0 / std::sqrt(static_cast<double>(W));
    MixerParams<R> p;
    p.kind = cfg.kind;
    switch (cfg.kind) {
        case MixerKind::Mamba: {
            p.in_proj_w = detail::uniform_mat<R>(rng, D, 2 * din, s_d);
            p.conv_w = detail::uniform_mat<R>(rng, W, din, s_w);
            p.conv_b = detail::uniform_mat<R>(rng, 1, din, s_w);
            p.coeff_w = detail::uniform_mat<R>(rng, din, 1 + 2 * S, s_in);
            p.dt_bias = detail::dt_bias_init<R>(rng, 1);
            p.a_log = Mat<R>(din, S);
            for (index_t c = 0; c < din; ++c)
                for (index_t s = 0; s < S; ++s) p.a_log(c, s) = static_cast<R>(std::log(double(s + 1)));
            p.skip = detail::const_mat<R>(1, din, R(1));
            p.out_proj_w = detail::uniform_mat<R>(rng, din, D, s_in);
            break;
        }
        case MixerKind::Mamba2: {
            p.in_proj_w = detail::uniform_mat<R>(rng, D, 2 * din + 2 * S + H, s_d);
            p.conv_w = detail::uniform_mat<R>(rng, W, din + 2 * S, s_w);
            p.conv_b = detail::uniform_mat<R>(rng, 1, din + 2 * S, s_w);
            p.dt_bias = detail::dt_bias_init<R>(rng, H);
            p.a_log = Mat<R>(1, H);
            for (index_t h = 0; h < H; ++h) p.a_log(0, h) = static_cast<R>(std::log(rng.uniform(1.0, 16.0)));
            p.skip = detail::const_mat<R>(1, H, R(1));
            p.norm_gain = detail::const_mat<R>(1, din, R(1));
            p.out_proj_w = detail::uniform_mat<R>(rng, din, D, s_in);
            break;
        }
        case MixerKind::Hydra: {
            p.in_proj_w = detail::uniform_mat<R>(rng, D, 2 * din + H, s_d);
            p.conv_w = detail::uniform_mat<R>(rng, W, din, s_w);
            p.conv_b = detail::uniform_mat<R>(rng, 1, din, s_w);
            p.coeff_w = detail::uniform_mat<R>(rng, din, 2 * S + H, s_in);
            p.dt_bias = detail::dt_bias_init<R>(rng, H);
            p.a_log = Mat<R>(1, H);
            for (index_t h = 0; h < H; ++h) p.a_log(0, h) = static_cast<R>(std::log(rng.uniform(1.0, 16.0)));
            p.norm_gain = detail::const_mat<R>(1, din, R(1));
            p.out_proj_w = detail::uniform_mat<R>(rng, din, D, s_in);
            break;
        }
        case MixerKind::Gdn: {
            p.in_proj_w = detail::uniform_mat<R>(rng, D, din + 2 * H * S + 2 * H, s_d);
            p.conv_w = detail::uniform_mat<R>(rng, W, din, s_w);
            p.conv_b = detail::uniform_mat<R>(rng, 1, din, s_w);
            p.a_log = Mat<R>(1, H);
            for (index_t h = 0; h < H; ++h) p.a_log(0, h) = static_cast<R>(std::log(rng.uniform(1.0, 16.0)));
            p.out_proj_w = detail::uniform_mat<R>(rng, din, D, s_in);
            break;
        }
    }
    return p;
}

template <typename R>
MixerVarSet lift_mixer_params(Tape<R>& t, const MixerParams<R>& p, bool requires_grad) {
    MixerVarSet v;
    v.kind = p.kind;
    auto lift = [&](const Mat<R>& m) { return m.empty() ? Var{} : t.leaf(m, requires_grad); };
    v.in_proj_w = lift(p.in_proj_w);
    v.conv_w = lift(p.conv_w);
    v.conv_b = lift(p.conv_b);
    v.coeff_w = lift(p.coeff_w);
    v.dt_bias = lift(p.dt_bias);
    v.a_log = lift(p.a_log);
    v.skip = lift(p.skip);
    v.norm_gain = lift(p.norm_gain);
    v.out_proj_w = lift(p.out_proj_w);
    return v;
}

namespace detail {

// Per-head decay for the scalar-decay scans, on tape:
// a = exp(-clamp(softplus(dt_pre + dt_bias) * exp(a_log), lo, hi))
template <typename R>
Var ssd_decay_op(Tape<R>& t, Var dt_pre, Var dt_bias, Var a_log) {
    Var sp = t.softplus(t.add_row_broadcast(dt_pre, dt_bias));
    Var scaled = t.mul_row_broadcast(sp, t.exp_op(a_log));
    Var clamped = t.clamp(scaled, static_cast<R>(coeff::kDecayExpLo), static_cast<R>(coeff::kDecayExpHi));
    return t.exp_op(t.scale(clamped, R(-1)));
}

}  // namespace detail

// Full mixer blocks on tape. x is T x D; the output preserves the shape.
// When coeffs_out is given it receives the frozen StepCoefficients produced
// during the forward (for Hydra, the forward-branch set plus the diagonal).
template <typename R>
Var mixer_forward(Tape<R>& t, const MixerVarSet& p, const MixerConfig& cfg, Var x,
                  StepCoefficients<R>* coeffs_out = nullptr) {
    cfg.validate();
    detail::require(p.kind == cfg.kind, "mixer_forward: params/config kind mismatch");
    const Mat<R>& vx = t.value(x);
    detail::require(vx.cols() == cfg.model_dim, "mixer_forward: input channel count differs from model_dim");
    detail::require(vx.rows() >= 1, "mixer_forward: empty sequence");
    detail::require(vx.all_finite(), "mixer_forward: non-finite input");

    const index_t din = cfg.inner_dim(), S = cfg.state_dim, H = cfg.heads();
    const index_t P = cfg.headed() ? cfg.head_dim : 0;

    switch (cfg.kind) {
        case MixerKind::Mamba: {
            Var proj = t.matmul(x, p.in_proj_w);
            Var v_raw = t.slice_cols(proj, 0, din);
            Var z = t.slice_cols(proj, din, 2 * din);
            Var c = t.silu(t.causal_dwconv(v_raw, p.conv_w, p.conv_b));
            Var cc = t.matmul(c, p.coeff_w);
            Var delta = t.clamp(t.softplus(t.add_row_broadcast(t.slice_cols(cc, 0, 1), p.dt_bias)),
                                static_cast<R>(coeff::kDeltaFloor), std::numeric_limits<R>::max());
            Var b_in = t.slice_cols(cc, 1, 1 + S);
            Var c_out = t.slice_cols(cc, 1 + S, 1 + 2 * S);
            Var a_diag = t.scale(t.exp_op(p.a_log), R(-1));
            if (coeffs_out) {
                coeffs_out->kind = MixerKind::Mamba;
                coeffs_out->state_dim = S;
                coeffs_out->delta = t.value(delta);
                coeffs_out->b_in = t.value(b_in);
                coeffs_out->c_out = t.value(c_out);
                coeffs_out->a_diag = t.value(a_diag);
                coeffs_out->skip = t.value(p.skip);
            }
            Var y = selective_scan_op(t, c, delta, b_in, c_out, a_diag, p.skip);
            y = t.mul(y, t.silu(z));
            return t.matmul(y, p.out_proj_w);
        }
        case MixerKind::Mamba2: {
            Var proj = t.matmul(x, p.in_proj_w);
            Var z = t.slice_cols(proj, 0, din);
            Var xbc = t.slice_cols(proj, din, 2 * din + 2 * S);
            Var dt_pre = t.slice_cols(proj, 2 * din + 2 * S, 2 * din + 2 * S + H);
            Var conv = t.silu(t.causal_dwconv(xbc, p.conv_w, p.conv_b));
            Var v = t.slice_cols(conv, 0, din);
            Var key = t.slice_cols(conv, din, din + S);
            Var query = t.slice_cols(conv, din + S, din + 2 * S);
            Var a = detail::ssd_decay_op(t, dt_pre, p.dt_bias, p.a_log);
            if (coeffs_out) {
                coeffs_out->kind = MixerKind::Mamba2;
                coeffs_out->heads = H;
                coeffs_out->state_dim = S;
                coeffs_out->decay = t.value(a);
                coeffs_out->key = t.value(key);
                coeffs_out->query = t.value(query);
                coeffs_out->skip = t.value(p.skip);
            }
            Var y = ssd_scan_op(t, v, a, key, query, /*strict=*/false, H);
            y = t.add(y, t.mul_row_broadcast(v, t.repeat_cols(p.skip, P)));
            y = t.mul(y, t.silu(z));
            y = t.rmsnorm_rows(y, p.norm_gain, R(1e-6));
            return t.matmul(y, p.out_proj_w);
        }
        case MixerKind::Hydra: {
            Var proj = t.matmul(x, p.in_proj_w);
            Var v_raw = t.slice_cols(proj, 0, din);
            Var z = t.slice_cols(proj, din, 2 * din);
            Var diag = t.slice_cols(proj, 2 * din, 2 * din + H);

            // One directional branch: conv + coefficient projection + strictly
            // causal scan, all on the given stream. The same parameters serve
            // both directions; the backward branch runs on the reversed stream.
            auto branch = [&](Var stream, bool grab_coeffs) {
                Var c = t.silu(t.causal_dwconv(stream, p.conv_w, p.conv_b));
                Var cc = t.matmul(c, p.coeff_w);
                Var key = t.slice_cols(cc, 0, S);
                Var query = t.slice_cols(cc, S, 2 * S);
                Var dt_pre = t.slice_cols(cc, 2 * S, 2 * S + H);
                Var a = detail::ssd_decay_op(t, dt_pre, p.dt_bias, p.a_log);
                if (grab_coeffs && coeffs_out) {
                    coeffs_out->kind = MixerKind::Hydra;
                    coeffs_out->heads = H;
                    coeffs_out->state_dim = S;
                    coeffs_out->decay = t.value(a);
                    coeffs_out->key = t.value(key);
                    coeffs_out->query = t.value(query);
                    coeffs_out->diag = t.value(diag);
                }
                return ssd_scan_op(t, c, a, key, query, /*strict=*/true, H);
            };
            Var y_fwd = branch(v_raw, true);
            Var y_bwd = t.reverse_rows(branch(t.reverse_rows(v_raw), false));
            Var y_diag = t.mul(t.silu(v_raw), t.repeat_cols(diag, P));
            Var y = t.add(t.add(y_fwd, y_bwd), y_diag);
            y = t.mul(y, t.silu(z));
            y = t.rmsnorm_rows(y, p.norm_gain, R(1e-6));
            return t.matmul(y, p.out_proj_w);
        }
        case MixerKind::Gdn: {
            Var proj = t.matmul(x, p.in_proj_w);
            Var v_raw = t.slice_cols(proj, 0, din);
            Var key_pre = t.slice_cols(proj, din, din + H * S);
            Var query = t.slice_cols(proj, din + H * S, din + 2 * H * S);
            Var alpha_pre = t.slice_cols(proj, din + 2 * H * S, din + 2 * H * S + H);
            Var beta_pre = t.slice_cols(proj, din + 2 * H * S + H, din + 2 * H * S + 2 * H);

            Var v = t.silu(t.causal_dwconv(v_raw, p.conv_w, p.conv_b));
            Var key = t.normalize_segments(key_pre, S);
            Var scaled = t.clamp(t.mul_row_broadcast(t.sigmoid(alpha_pre), t.exp_op(p.a_log)), R(0),
                                 static_cast<R>(coeff::kDecayExpHi));
            Var alpha = t.exp_op(t.scale(scaled, R(-1)));
            Var beta = t.sigmoid(beta_pre);
            if (coeffs_out) {
                coeffs_out->kind = MixerKind::Gdn;
                coeffs_out->heads = H;
                coeffs_out->state_dim = S;
                coeffs_out->decay = t.value(alpha);
                coeffs_out->beta = t.value(beta);
                coeffs_out->key = t.value(key);
                coeffs_out->query = t.value(query);
            }
            Var y = gdn_scan_op(t, v, alpha, beta, key, query);
            return t.matmul(y, p.out_proj_w);
        }
    }
    throw std::invalid_argument("mixer_forward: unknown mixer kind");
}

namespace detail {

template <typename R>
Mat<R> run_mixer_plain(const Mat<R>& x, const MixerParams<R>& params, const MixerConfig& cfg) {
    Tape<R> t;
    MixerVarSet vs = lift_mixer_params(t, params, /*requires_grad=*/false);
    Var out = mixer_forward(t, vs, cfg, t.leaf(x));
    return t.value(out);
}

}  // namespace detail

template <typename R>
Mat<R> mamba_mixer(const Mat<R>& x, const MixerParams<R>& params, const MixerConfig& cfg) {
    detail::require(cfg.kind == MixerKind::Mamba, "mamba_mixer: config kind must be MAMBA");
    return detail::run_mixer_plain(x, params, cfg);
}

template <typename R>
Mat<R> mamba2_mixer(const Mat<R>& x, const MixerParams<R>& params, const MixerConfig& cfg) {
    detail::require(cfg.kind == MixerKind::Mamba2, "mamba2_mixer: config kind must be MAMBA2");
    return detail::run_mixer_plain(x, params, cfg);
}

template <typename R>
Mat<R> hydra_mixer(const Mat<R>& x, const MixerParams<R>& params, const MixerConfig& cfg) {
    detail::require(cfg.kind == MixerKind::Hydra, "hydra_mixer: config kind must be HYDRA");
    return detail::run_mixer_plain(x, params, cfg);
}

template <typename R>
Mat<R> gdn_mixer(const Mat<R>& x, const MixerParams<R>& params, const MixerConfig& cfg) {
    detail::require(cfg.kind == MixerKind::Gdn, "gdn_mixer: config kind must be GDN");
    return detail::run_mixer_plain(x, params, cfg);
}

template <typename R>
Mat<R> run_mixer(const Mat<R>& x, const MixerParams<R>& params, const MixerConfig& cfg) {
    return detail::run_mixer_plain(x, params, cfg);
}

// The coefficients a forward pass would use for the given input, frozen.
template <typename R>
StepCoefficients<R> mixer_coefficients(const Mat<R>& x, const MixerParams<R>& params,
                                       const MixerConfig& cfg) {
    Tape<R> t;
    MixerVarSet vs = lift_mixer_params(t, params, false);
    StepCoefficients<R> sc;
    mixer_forward(t, vs, cfg, t.leaf(x), &sc);
    return sc;
}

// ---------------------------------------------------------------------------
// Non-causal multi-head attention: no mask, no positional signal.
// ---------------------------------------------------------------------------

template <typename R>
struct MhaParams {
    Mat<R> wq, bq, wk, bk, wv, bv, wo, bo;
};

struct MhaVarSet {
    Var wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename R>
MhaParams<R> init_mha_params(index_t model_dim, Rng& rng) {
    const double s = 1.0 / std::sqrt(static_cast<double>(model_dim));
    MhaParams<R> p;
    p.wq = detail::uniform_mat<R>(rng, model_dim, model_dim, s);
    p.bq = Mat<R>(1, model_dim);
    p.wk = detail::uniform_mat<R>(rng, model_dim, model_dim, s);
    p.bk = Mat<R>(1, model_dim);
    p.wv = detail::uniform_mat<R>(rng, model_dim, model_dim, s);
    p.bv = Mat<R>(1, model_dim);
    p.wo = detail::uniform_mat<R>(rng, model_dim, model_dim, s);
    p.bo = Mat<R>(1, model_dim);
    return p;
}

template <typename R>
MhaVarSet lift_mha_params(Tape<R>& t, const MhaParams<R>& p, bool requires_grad) {
    MhaVarSet v;
    v.wq = t.leaf(p.wq, requires_grad);
    v.bq = t.leaf(p.bq, requires_grad);
    v.wk = t.leaf(p.wk, requires_grad);
    v.bk = t.leaf(p.bk, requires_grad);
    v.wv = t.leaf(p.wv, requires_grad);
    v.bv = t.leaf(p.bv, requires_grad);
    v.wo = t.leaf(p.wo, requires_grad);
    v.bo = t.leaf(p.bo, requires_grad);
    return v;
}

template <typename R>
Var mha_forward(Tape<R>& t, const MhaVarSet& p, index_t n_heads, Var x) {
    const Mat<R>& vx = t.value(x);
    const index_t D = vx.cols();
    detail::require(n_heads >= 1 && D % n_heads == 0, "mha: model_dim must be divisible by n_heads");
    detail::require(vx.all_finite(), "mha: non-finite input");
    const index_t dh = D / n_heads;
    const R scale = static_cast<R>(1.0 / std::sqrt(static_cast<double>(dh)));

    Var q = t.add_row_broadcast(t.matmul(x, p.wq), p.bq);
    Var k = t.add_row_broadcast(t.matmul(x, p.wk), p.bk);
    Var v = t.add_row_broadcast(t.matmul(x, p.wv), p.bv);

    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(n_heads));
    for (index_t h = 0; h < n_heads; ++h) {
        Var qh = t.slice_cols(q, h * dh, (h + 1) * dh);
        Var kh = t.slice_cols(k, h * dh, (h + 1) * dh);
        Var vh = t.slice_cols(v, h * dh, (h + 1) * dh);
        Var attn = t.softmax_rows(t.scale(t.matmul_nt(qh, kh), scale));
        heads.push_back(t.matmul(attn, vh));
    }
    Var cat = n_heads == 1 ? heads[0] : t.concat_cols(heads);
    return t.add_row_broadcast(t.matmul(cat, p.wo), p.bo);
}

template <typename R>
Mat<R> mha(const Mat<R>& x, const MhaParams<R>& params, index_t n_heads) {
    Tape<R> t;
    MhaVarSet vs = lift_mha_params(t, params, false);
    Var out = mha_forward(t, vs, n_heads, t.leaf(x));
    return t.value(out);
}

}  // namespace mambo
