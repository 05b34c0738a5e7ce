#pragma once

#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "mambo/matrix.hpp"
#include "mambo/tape.hpp"

namespace mambo {

enum class MixerKind { Mamba, Mamba2, Hydra, Gdn };

inline const char* mixer_kind_name(MixerKind k) {
    switch (k) {
        case MixerKind::Mamba: return "MAMBA";
        case MixerKind::Mamba2: return "MAMBA2";
        case MixerKind::Hydra: return "HYDRA";
        case MixerKind::Gdn: return "GDN";
    }
    throw std::invalid_argument("unknown mixer kind");
}

// Post-activation range guards. Raw softplus/exp can underflow to exactly 0
// or round to exactly 1 for extreme pre-activations, which would break the
// coefficient range contracts, so exponents are clamped before exp.
namespace coeff {
constexpr double kDeltaFloor = 1e-30;
constexpr double kDecayExpLo = 1e-6;
constexpr double kDecayExpHi = 30.0;

template <typename R>
R clamp(R x, R lo, R hi) {
    return x < lo ? lo : (x > hi ? hi : x);
}

// Mamba step size: softplus kept strictly positive.
template <typename R>
R delta(R pre) {
    return clamp(detail::stable_softplus(pre), R(kDeltaFloor), std::numeric_limits<R>::max());
}

// Mamba2/Hydra per-head decay in (0,1): exp(-softplus(pre) * exp(a_log)).
template <typename R>
R ssd_decay(R pre, R a_log) {
    const R e = clamp(detail::stable_softplus(pre) * std::exp(a_log), R(kDecayExpLo), R(kDecayExpHi));
    return std::exp(-e);
}

// GDN decay gate in (0,1]: exp(-exp(a_log) * sigmoid(pre)).
template <typename R>
R gdn_alpha(R pre, R a_log) {
    const R e = clamp(std::exp(a_log) * detail::sigmoid(pre), R(0), R(kDecayExpHi));
    return std::exp(-e);
}
}  // namespace coeff

// Input-dependent per-timestep scan coefficients, frozen as plain matrices.
// Field usage by kind:
//   Mamba : delta (T x 1, > 0), b_in/c_out (T x S), a_diag (C x S, the
//           per-channel diagonal state decay rates), skip (1 x C)
//   Mamba2: decay (T x H, in (0,1)), key/query (T x S, shared across heads),
//           skip (1 x H)
//   Hydra : decay/key/query as Mamba2 plus diag (T x H)
//   Gdn   : decay=alpha (T x H, in (0,1]), beta (T x H, in [0,1]),
//           key/query (T x (H*S)), keys unit-norm per head segment
template <typename R>
struct StepCoefficients {
    MixerKind kind = MixerKind::Mamba;
    index_t heads = 0;
    index_t state_dim = 0;

    Mat<R> delta;
    Mat<R> b_in;
    Mat<R> c_out;
    Mat<R> a_diag;
    Mat<R> skip;

    Mat<R> decay;
    Mat<R> key;
    Mat<R> query;
    Mat<R> diag;
    Mat<R> beta;

    index_t frames() const {
        return kind == MixerKind::Mamba ? delta.rows() : decay.rows();
    }

    void validate(index_t T, index_t channels) const {
        using detail::require;
        switch (kind) {
            case MixerKind::Mamba: {
                require(delta.rows() == T && delta.cols() == 1, "StepCoefficients: delta must be T x 1");
                require(b_in.rows() == T && c_out.rows() == T && b_in.cols() == state_dim &&
                            c_out.cols() == state_dim,
                        "StepCoefficients: B/C must be T x S");
                require(a_diag.rows() == channels && a_diag.cols() == state_dim,
                        "StepCoefficients: A must be C x S");
                require(skip.rows() == 1 && skip.cols() == channels, "StepCoefficients: skip must be 1 x C");
                require(delta.all_finite() && b_in.all_finite() && c_out.all_finite() &&
                            a_diag.all_finite() && skip.all_finite(),
                        "StepCoefficients: non-finite coefficient");
                for (index_t t = 0; t < T; ++t)
                    require(delta(t, 0) > R(0), "StepCoefficients: delta must be strictly positive");
                break;
            }
            case MixerKind::Mamba2:
            case MixerKind::Hydra: {
                require(heads >= 1 && channels % heads == 0, "StepCoefficients: bad head count");
                require(decay.rows() == T && decay.cols() == heads, "StepCoefficients: decay must be T x H");
                require(key.rows() == T && key.cols() == state_dim && query.rows() == T &&
                            query.cols() == state_dim,
                        "StepCoefficients: key/query must be T x S");
                require(decay.all_finite() && key.all_finite() && query.all_finite(),
                        "StepCoefficients: non-finite coefficient");
                for (index_t i = 0; i < decay.size(); ++i)
                    require(decay.data()[i] > R(0) && decay.data()[i] < R(1),
                            "StepCoefficients: decay must lie in (0,1)");
                if (kind == MixerKind::Hydra) {
                    require(diag.rows() == T && diag.cols() == heads, "StepCoefficients: diag must be T x H");
                    require(diag.all_finite(), "StepCoefficients: non-finite diagonal term");
                } else {
                    require(skip.rows() == 1 && skip.cols() == heads, "StepCoefficients: skip must be 1 x H");
                    require(skip.all_finite(), "StepCoefficients: non-finite skip");
                }
                break;
            }
            case MixerKind::Gdn: {
                require(heads >= 1 && channels % heads == 0, "StepCoefficients: bad head count");
                require(decay.rows() == T && decay.cols() == heads && beta.rows() == T &&
                            beta.cols() == heads,
                        "StepCoefficients: alpha/beta must be T x H");
                require(key.rows() == T && key.cols() == heads * state_dim && query.rows() == T &&
                            query.cols() == heads * state_dim,
                        "StepCoefficients: key/query must be T x (H*S)");
                require(decay.all_finite() && beta.all_finite() && key.all_finite() && query.all_finite(),
                        "StepCoefficients: non-finite coefficient");
                for (index_t i = 0; i < decay.size(); ++i)
                    require(decay.data()[i] > R(0) && decay.data()[i] <= R(1),
                            "StepCoefficients: alpha must lie in (0,1]");
                for (index_t i = 0; i < beta.size(); ++i)
                    require(beta.data()[i] >= R(0) && beta.data()[i] <= R(1),
                            "StepCoefficients: beta must lie in [0,1]");
                for (index_t t = 0; t < T; ++t)
                    for (index_t h = 0; h < heads; ++h) {
                        R ss = R(0);
                        for (index_t s = 0; s < state_dim; ++s) {
                            const R kk = key(t, h * state_dim + s);
                            ss += kk * kk;
                        }
                        require(ss == R(0) || std::abs(std::sqrt(static_cast<double>(ss)) - 1.0) < 1e-3,
                                "StepCoefficients: GDN keys must be unit-norm");
                    }
                break;
            }
            default:
                throw std::invalid_argument("StepCoefficients: unknown mixer kind");
        }
    }
};

// ---------------------------------------------------------------------------
// Plain recurrence cores (no tape). These are the production recurrences; the
// tape ops below wrap them with hand-derived adjoints, and
// materialize_mixer_matrix provides the independent matrix route.
// ---------------------------------------------------------------------------

// Mamba selective scan. Per channel c with diagonal state decay A_c:
//   h_t = exp(delta_t * A_c) (.) h_{t-1} + delta_t * B_t * v_{t,c}
//   y_{t,c} = <C_t, h_t> + skip_c * v_{t,c}
// state_traj, if given, receives (T+1) x (C*S) with row t+1 = state after t.
template <typename R>
Mat<R> selective_scan(const Mat<R>& v, const StepCoefficients<R>& sc, Mat<R>* state_traj = nullptr) {
    detail::require(sc.kind == MixerKind::Mamba, "selective_scan: coefficients are not MAMBA kind");
    detail::require(v.rows() >= 1 && v.cols() >= 1, "selective_scan: empty input");
    detail::require(v.all_finite(), "selective_scan: non-finite input");
    const index_t T = v.rows(), C = v.cols(), S = sc.state_dim;
    detail::require(sc.delta.rows() == T, "selective_scan: length mismatch between input and coefficients");
    sc.validate(T, C);

    Mat<R> y(T, C);
    Mat<R> h(C, S);
    if (state_traj) *state_traj = Mat<R>(T + 1, C * S);
    for (index_t t = 0; t < T; ++t) {
        const R dt = sc.delta(t, 0);
        const R* bt = sc.b_in.row(t);
        const R* ct = sc.c_out.row(t);
        for (index_t c = 0; c < C; ++c) {
            R* hc = h.row(c);
            const R* ac = sc.a_diag.row(c);
            const R vtc = v(t, c);
            R acc = R(0);
            for (index_t s = 0; s < S; ++s) {
                hc[s] = std::exp(dt * ac[s]) * hc[s] + dt * bt[s] * vtc;
                acc += ct[s] * hc[s];
            }
            y(t, c) = acc + sc.skip(0, c) * vtc;
        }
        if (state_traj) {
            R* dst = state_traj->row(t + 1);
            for (index_t i = 0; i < C * S; ++i) dst[i] = h.data()[i];
        }
    }
    return y;
}

// Scalar-decay multi-head scan (structured state space duality form).
// Per head: S_t = a_t * S_{t-1} + v_t (x) k_t. Readout is S_t * q_t when
// inclusive, S_{t-1} * q_t when strict (used by the bidirectional mixer).
// key/query are shared across heads (T x S); v is T x (H*P).
template <typename R>
Mat<R> ssd_scan(const Mat<R>& v, const Mat<R>& decay, const Mat<R>& key, const Mat<R>& query,
                bool strict, index_t heads, Mat<R>* state_traj = nullptr) {
    const index_t T = v.rows(), C = v.cols();
    detail::require(heads >= 1 && C % heads == 0, "ssd_scan: channels not divisible by heads");
    const index_t P = C / heads, S = key.cols();
    detail::require(decay.rows() == T && key.rows() == T && query.rows() == T,
                    "ssd_scan: length mismatch between input and coefficients");
    detail::require(decay.cols() == heads && query.cols() == S, "ssd_scan: coefficient shape mismatch");
    detail::require(v.all_finite(), "ssd_scan: non-finite input");

    Mat<R> y(T, C);
    Mat<R> st(heads, P * S);  // per head, P x S row-major
    if (state_traj) *state_traj = Mat<R>(T + 1, heads * P * S);
    for (index_t t = 0; t < T; ++t) {
        const R* kt = key.row(t);
        const R* qt = query.row(t);
        for (index_t h = 0; h < heads; ++h) {
            R* sh = st.row(h);
            const R a = decay(t, h);
            const R* vt = v.row(t) + h * P;
            R* yt = y.row(t) + h * P;
            if (strict) {
                for (index_t p = 0; p < P; ++p) {
                    const R* sp = sh + p * S;
                    R acc = R(0);
                    for (index_t s = 0; s < S; ++s) acc += sp[s] * qt[s];
                    yt[p] = acc;
                }
            }
            for (index_t p = 0; p < P; ++p) {
                R* sp = sh + p * S;
                const R vp = vt[p];
                R acc = R(0);
                for (index_t s = 0; s < S; ++s) {
                    sp[s] = a * sp[s] + vp * kt[s];
                    acc += sp[s] * qt[s];
                }
                if (!strict) yt[p] = acc;
            }
        }
        if (state_traj) {
            R* dst = state_traj->row(t + 1);
            for (index_t i = 0; i < heads * P * S; ++i) dst[i] = st.data()[i];
        }
    }
    return y;
}

// Gated delta rule scan. Per head:
//   S_t = S_{t-1} * (alpha_t * (I - beta_t * k_t k_t^T)) + beta_t * v_t k_t^T
//   y_t = S_t * q_t
// Keys are expected unit-norm per head segment; v is T x (H*P),
// key/query T x (H*S).
template <typename R>
Mat<R> gdn_scan(const Mat<R>& v, const Mat<R>& alpha, const Mat<R>& beta, const Mat<R>& key,
                const Mat<R>& query, Mat<R>* state_traj = nullptr) {
    const index_t T = v.rows(), C = v.cols(), H = alpha.cols();
    detail::require(H >= 1 && C % H == 0, "gdn_scan: channels not divisible by heads");
    const index_t P = C / H;
    detail::require(key.cols() % H == 0, "gdn_scan: key width not divisible by heads");
    const index_t S = key.cols() / H;
    detail::require(alpha.rows() == T && beta.rows() == T && key.rows() == T && query.rows() == T,
                    "gdn_scan: length mismatch between input and coefficients");
    detail::require(beta.cols() == H && query.cols() == H * S, "gdn_scan: coefficient shape mismatch");
    detail::require(v.all_finite(), "gdn_scan: non-finite input");

    Mat<R> y(T, C);
    Mat<R> st(H, P * S);
    std::vector<R> u(static_cast<std::size_t>(P));
    if (state_traj) *state_traj = Mat<R>(T + 1, H * P * S);
    for (index_t t = 0; t < T; ++t) {
        for (index_t h = 0; h < H; ++h) {
            R* sh = st.row(h);
            const R a = alpha(t, h);
            const R b = beta(t, h);
            const R* kt = key.row(t) + h * S;
            const R* qt = query.row(t) + h * S;
            const R* vt = v.row(t) + h * P;
            R* yt = y.row(t) + h * P;
            // u = S_{t-1} k_t
            for (index_t p = 0; p < P; ++p) {
                const R* sp = sh + p * S;
                R acc = R(0);
                for (index_t s = 0; s < S; ++s) acc += sp[s] * kt[s];
                u[static_cast<std::size_t>(p)] = acc;
            }
            for (index_t p = 0; p < P; ++p) {
                R* sp = sh + p * S;
                const R w = b * (vt[p] - a * u[static_cast<std::size_t>(p)]);
                R acc = R(0);
                for (index_t s = 0; s < S; ++s) {
                    sp[s] = a * sp[s] + w * kt[s];
                    acc += sp[s] * qt[s];
                }
                yt[p] = acc;
            }
        }
        if (state_traj) {
            R* dst = state_traj->row(t + 1);
            for (index_t i = 0; i < H * P * S; ++i) dst[i] = st.data()[i];
        }
    }
    return y;
}

// ---------------------------------------------------------------------------
// Kind-dispatching cores over frozen coefficients. These are the functions
// the materialized-matrix oracle is checked against.
// ---------------------------------------------------------------------------

template <typename R>
Mat<R> mamba2_core(const Mat<R>& v, const StepCoefficients<R>& sc) {
    detail::require(sc.kind == MixerKind::Mamba2, "mamba2_core: wrong coefficient kind");
    sc.validate(v.rows(), v.cols());
    Mat<R> y = ssd_scan(v, sc.decay, sc.key, sc.query, /*strict=*/false, sc.heads);
    const index_t P = v.cols() / sc.heads;
    for (index_t t = 0; t < v.rows(); ++t)
        for (index_t h = 0; h < sc.heads; ++h)
            for (index_t p = 0; p < P; ++p) y(t, h * P + p) += sc.skip(0, h) * v(t, h * P + p);
    return y;
}

template <typename R>
Mat<R> hydra_core(const Mat<R>& v, const StepCoefficients<R>& sc) {
    detail::require(sc.kind == MixerKind::Hydra, "hydra_core: wrong coefficient kind");
    sc.validate(v.rows(), v.cols());
    Mat<R> fwd = ssd_scan(v, sc.decay, sc.key, sc.query, /*strict=*/true, sc.heads);
    Mat<R> bwd = ssd_scan(detail::reversed_rows(v), detail::reversed_rows(sc.decay),
                          detail::reversed_rows(sc.key), detail::reversed_rows(sc.query),
                          /*strict=*/true, sc.heads);
    bwd = detail::reversed_rows(bwd);
    const index_t P = v.cols() / sc.heads;
    Mat<R> y(v.rows(), v.cols());
    for (index_t t = 0; t < v.rows(); ++t)
        for (index_t h = 0; h < sc.heads; ++h)
            for (index_t p = 0; p < P; ++p) {
                const index_t c = h * P + p;
                y(t, c) = fwd(t, c) + bwd(t, c) + sc.diag(t, h) * v(t, c);
            }
    return y;
}

template <typename R>
Mat<R> gdn_core(const Mat<R>& v, const StepCoefficients<R>& sc) {
    detail::require(sc.kind == MixerKind::Gdn, "gdn_core: wrong coefficient kind");
    sc.validate(v.rows(), v.cols());
    return gdn_scan(v, sc.decay, sc.beta, sc.key, sc.query);
}

template <typename R>
Mat<R> mixer_core(const Mat<R>& v, const StepCoefficients<R>& sc) {
    switch (sc.kind) {
        case MixerKind::Mamba: return selective_scan(v, sc);
        case MixerKind::Mamba2: return mamba2_core(v, sc);
        case MixerKind::Hydra: return hydra_core(v, sc);
        case MixerKind::Gdn: return gdn_core(v, sc);
    }
    throw std::invalid_argument("mixer_core: unknown mixer kind");
}

// ---------------------------------------------------------------------------
// Materialized matrix oracle: for frozen coefficients, each mixer core is a
// linear map y = M * v. Entries are evaluated from the closed-form products,
// never by running the recurrence. Returns one T x T matrix per channel
// (Mamba) or per head (headed kinds). Lower-triangular for causal kinds,
// quasiseparable (both triangles + free diagonal) for Hydra.
// ---------------------------------------------------------------------------
template <typename R>
std::vector<Mat<R>> materialize_mixer_matrix(const StepCoefficients<R>& sc, index_t T) {
    std::vector<Mat<R>> out;
    switch (sc.kind) {
        case MixerKind::Mamba: {
            const index_t C = sc.a_diag.rows(), S = sc.state_dim;
            std::vector<R> cum(static_cast<std::size_t>(T));
            R run = R(0);
            for (index_t t = 0; t < T; ++t) {
                run += sc.delta(t, 0);
                cum[static_cast<std::size_t>(t)] = run;
            }
            for (index_t c = 0; c < C; ++c) {
                Mat<R> m(T, T);
                const R* ac = sc.a_diag.row(c);
                for (index_t t = 0; t < T; ++t) {
                    for (index_t s = 0; s <= t; ++s) {
                        const R gap = cum[static_cast<std::size_t>(t)] - cum[static_cast<std::size_t>(s)];
                        R acc = R(0);
                        for (index_t n = 0; n < S; ++n)
                            acc += sc.c_out(t, n) * std::exp(ac[n] * gap) * sc.b_in(s, n);
                        m(t, s) = sc.delta(s, 0) * acc;
                    }
                    m(t, t) += sc.skip(0, c);
                }
                out.push_back(std::move(m));
            }
            return out;
        }
        case MixerKind::Mamba2: {
            // M[t][s] = (prod_{r=s+1..t} a_r) <q_t, k_s> for s <= t, plus skip on the diagonal.
            for (index_t h = 0; h < sc.heads; ++h) {
                Mat<R> m(T, T);
                for (index_t t = 0; t < T; ++t) {
                    R prod = R(1);
                    for (index_t s = t; s >= 0; --s) {
                        R dot = R(0);
                        for (index_t n = 0; n < sc.state_dim; ++n) dot += sc.query(t, n) * sc.key(s, n);
                        m(t, s) = prod * dot;
                        prod *= sc.decay(s, h);
                    }
                    m(t, t) += sc.skip(0, h);
                }
                out.push_back(std::move(m));
            }
            return out;
        }
        case MixerKind::Hydra: {
            // Strictly-lower: prod_{r=s+1..t-1} a_r; strictly-upper mirrors it
            // in the other direction; diagonal is the free per-step term.
            for (index_t h = 0; h < sc.heads; ++h) {
                Mat<R> m(T, T);
                for (index_t t = 0; t < T; ++t) {
                    R prod = R(1);
                    for (index_t s = t - 1; s >= 0; --s) {
                        R dot = R(0);
                        for (index_t n = 0; n < sc.state_dim; ++n) dot += sc.query(t, n) * sc.key(s, n);
                        m(t, s) = prod * dot;
                        prod *= sc.decay(s, h);
                    }
                    prod = R(1);
                    for (index_t s = t + 1; s < T; ++s) {
                        R dot = R(0);
                        for (index_t n = 0; n < sc.state_dim; ++n) dot += sc.query(t, n) * sc.key(s, n);
                        m(t, s) = prod * dot;
                        prod *= sc.decay(s, h);
                    }
                    m(t, t) = sc.diag(t, h);
                }
                out.push_back(std::move(m));
            }
            return out;
        }
        case MixerKind::Gdn: {
            // M[t][s] = beta_s * k_s^T (A_{s+1} ... A_t) q_t with
            // A_r = alpha_r (I - beta_r k_r k_r^T), evaluated right-to-left.
            const index_t S = sc.state_dim;
            std::vector<R> w(static_cast<std::size_t>(S));
            for (index_t h = 0; h < sc.heads; ++h) {
                Mat<R> m(T, T);
                for (index_t t = 0; t < T; ++t) {
                    for (index_t n = 0; n < S; ++n) w[static_cast<std::size_t>(n)] = sc.query(t, h * S + n);
                    for (index_t s = t; s >= 0; --s) {
                        const R* ks = sc.key.row(s) + h * S;
                        R dot = R(0);
                        for (index_t n = 0; n < S; ++n) dot += ks[n] * w[static_cast<std::size_t>(n)];
                        m(t, s) = sc.beta(s, h) * dot;
                        const R scale = sc.decay(s, h);
                        const R coef = sc.beta(s, h) * dot;
                        for (index_t n = 0; n < S; ++n)
                            w[static_cast<std::size_t>(n)] =
                                scale * (w[static_cast<std::size_t>(n)] - coef * ks[n]);
                    }
                }
                out.push_back(std::move(m));
            }
            return out;
        }
    }
    throw std::invalid_argument("materialize_mixer_matrix: unknown mixer kind");
}

// Applies the per-channel/per-head materialized matrices: y = M * v.
template <typename R>
Mat<R> apply_materialized(const std::vector<Mat<R>>& mats, const Mat<R>& v, MixerKind kind,
                          index_t heads) {
    const index_t T = v.rows(), C = v.cols();
    Mat<R> y(T, C);
    if (kind == MixerKind::Mamba) {
        detail::require(static_cast<index_t>(mats.size()) == C, "apply_materialized: channel count");
        for (index_t c = 0; c < C; ++c)
            for (index_t t = 0; t < T; ++t) {
                R acc = R(0);
                for (index_t s = 0; s < T; ++s) acc += mats[static_cast<std::size_t>(c)](t, s) * v(s, c);
                y(t, c) = acc;
            }
        return y;
    }
    const index_t P = C / heads;
    detail::require(static_cast<index_t>(mats.size()) == heads, "apply_materialized: head count");
    for (index_t h = 0; h < heads; ++h)
        for (index_t p = 0; p < P; ++p) {
            const index_t c = h * P + p;
            for (index_t t = 0; t < T; ++t) {
                R acc = R(0);
                for (index_t s = 0; s < T; ++s) acc += mats[static_cast<std::size_t>(h)](t, s) * v(s, c);
                y(t, c) = acc;
            }
        }
    return y;
}

// ---------------------------------------------------------------------------
// Tape ops wrapping the cores with hand-derived adjoints (backprop through
// time). State trajectories are captured by the closures.
// ---------------------------------------------------------------------------

template <typename R>
Var selective_scan_op(Tape<R>& tp, Var v, Var delta, Var b_in, Var c_out, Var a_diag, Var skip) {
    StepCoefficients<R> sc;
    sc.kind = MixerKind::Mamba;
    sc.state_dim = tp.value(b_in).cols();
    sc.delta = tp.value(delta);
    sc.b_in = tp.value(b_in);
    sc.c_out = tp.value(c_out);
    sc.a_diag = tp.value(a_diag);
    sc.skip = tp.value(skip);
    auto traj = std::make_shared<Mat<R>>();
    Mat<R> y = selective_scan(tp.value(v), sc, traj.get());

    const bool rq = tp.requires_grad(v) || tp.requires_grad(delta) || tp.requires_grad(b_in) ||
                    tp.requires_grad(c_out) || tp.requires_grad(a_diag) || tp.requires_grad(skip);
    Var self = tp.push(std::move(y), rq, nullptr);
    if (!rq) return self;
    tp.set_backward(self, [v, delta, b_in, c_out, a_diag, skip, self, traj](Tape<R>& t) {
        const Mat<R>& g = t.grad(self);
        const Mat<R>& vv = t.value(v);
        const Mat<R>& vdelta = t.value(delta);
        const Mat<R>& vb = t.value(b_in);
        const Mat<R>& vc = t.value(c_out);
        const Mat<R>& va = t.value(a_diag);
        const Mat<R>& vskip = t.value(skip);
        const index_t T = vv.rows(), C = vv.cols(), S = vb.cols();

        Mat<R> lambda(C, S);
        Mat<R> gv(T, C), gdelta(T, 1), gb(T, S), gc(T, S), ga(C, S), gskip(1, C);
        for (index_t tt = T - 1; tt >= 0; --tt) {
            const R dt = vdelta(tt, 0);
            const R* bt = vb.row(tt);
            const R* ct = vc.row(tt);
            const R* hcur = traj->row(tt + 1);
            const R* hprev = traj->row(tt);
            R gdt = R(0);
            for (index_t c = 0; c < C; ++c) {
                const R gy = g(tt, c);
                R* lam = lambda.row(c);
                const R* ac = va.row(c);
                const R vtc = vv(tt, c);
                R gv_acc = vskip(0, c) * gy;
                gskip(0, c) += vtc * gy;
                for (index_t s = 0; s < S; ++s) {
                    lam[s] += ct[s] * gy;
                    gc(tt, s) += hcur[c * S + s] * gy;
                    const R e = std::exp(dt * ac[s]);
                    const R hp = hprev[c * S + s];
                    const R l = lam[s];
                    gdt += l * hp * e * ac[s] + l * bt[s] * vtc;
                    ga(c, s) += l * hp * e * dt;
                    gb(tt, s) += l * dt * vtc;
                    gv_acc += l * dt * bt[s];
                    lam[s] = l * e;
                }
                gv(tt, c) += gv_acc;
            }
            gdelta(tt, 0) = gdt;
        }
        if (t.requires_grad(v)) detail::add_inplace(t.grad_acc(v), gv);
        if (t.requires_grad(delta)) detail::add_inplace(t.grad_acc(delta), gdelta);
        if (t.requires_grad(b_in)) detail::add_inplace(t.grad_acc(b_in), gb);
        if (t.requires_grad(c_out)) detail::add_inplace(t.grad_acc(c_out), gc);
        if (t.requires_grad(a_diag)) detail::add_inplace(t.grad_acc(a_diag), ga);
        if (t.requires_grad(skip)) detail::add_inplace(t.grad_acc(skip), gskip);
    });
    return self;
}

template <typename R>
Var ssd_scan_op(Tape<R>& tp, Var v, Var decay, Var key, Var query, bool strict, index_t heads) {
    auto traj = std::make_shared<Mat<R>>();
    Mat<R> y = ssd_scan(tp.value(v), tp.value(decay), tp.value(key), tp.value(query), strict, heads,
                        traj.get());
    const bool rq = tp.requires_grad(v) || tp.requires_grad(decay) || tp.requires_grad(key) ||
                    tp.requires_grad(query);
    Var self = tp.push(std::move(y), rq, nullptr);
    if (!rq) return self;
    tp.set_backward(self, [v, decay, key, query, strict, heads, self, traj](Tape<R>& t) {
        const Mat<R>& g = t.grad(self);
        const Mat<R>& vv = t.value(v);
        const Mat<R>& vdecay = t.value(decay);
        const Mat<R>& vkey = t.value(key);
        const Mat<R>& vquery = t.value(query);
        const index_t T = vv.rows(), C = vv.cols(), P = C / heads, S = vkey.cols();

        Mat<R> lam(heads, P * S);
        Mat<R> gv(T, C), gdecay(T, heads), gkey(T, S), gquery(T, S);
        for (index_t tt = T - 1; tt >= 0; --tt) {
            const R* kt = vkey.row(tt);
            const R* qt = vquery.row(tt);
            for (index_t h = 0; h < heads; ++h) {
                R* lh = lam.row(h);
                const R a = vdecay(tt, h);
                const R* gy = g.row(tt) + h * P;
                const R* vt = vv.row(tt) + h * P;
                const R* scur = traj->row(tt + 1) + h * P * S;
                const R* sprev = traj->row(tt) + h * P * S;
                if (!strict) {
                    // y_t = S_t q_t
                    for (index_t p = 0; p < P; ++p) {
                        const R gyp = gy[p];
                        const R* sp = scur + p * S;
                        R* lp = lh + p * S;
                        for (index_t s = 0; s < S; ++s) {
                            gquery(tt, s) += sp[s] * gyp;
                            lp[s] += gyp * qt[s];
                        }
                    }
                }
                // through S_t = a S_{t-1} + v_t (x) k_t
                R gda = R(0);
                for (index_t p = 0; p < P; ++p) {
                    R* lp = lh + p * S;
                    const R* spp = sprev + p * S;
                    const R vp = vt[p];
                    R gvp = R(0);
                    for (index_t s = 0; s < S; ++s) {
                        const R l = lp[s];
                        gda += l * spp[s];
                        gvp += l * kt[s];
                        gkey(tt, s) += l * vp;
                        lp[s] = a * l;
                    }
                    gv(tt, h * P + p) += gvp;
                }
                gdecay(tt, h) += gda;
                if (strict) {
                    // y_t = S_{t-1} q_t feeds the state one step earlier
                    for (index_t p = 0; p < P; ++p) {
                        const R gyp = gy[p];
                        const R* spp = sprev + p * S;
                        R* lp = lh + p * S;
                        for (index_t s = 0; s < S; ++s) {
                            gquery(tt, s) += spp[s] * gyp;
                            lp[s] += gyp * qt[s];
                        }
                    }
                }
            }
        }
        if (t.requires_grad(v)) detail::add_inplace(t.grad_acc(v), gv);
        if (t.requires_grad(decay)) detail::add_inplace(t.grad_acc(decay), gdecay);
        if (t.requires_grad(key)) detail::add_inplace(t.grad_acc(key), gkey);
        if (t.requires_grad(query)) detail::add_inplace(t.grad_acc(query), gquery);
    });
    return self;
}

template <typename R>
Var gdn_scan_op(Tape<R>& tp, Var v, Var alpha, Var beta, Var key, Var query) {
    auto traj = std::make_shared<Mat<R>>();
    const index_t heads = tp.value(alpha).cols();
    Mat<R> y =
        gdn_scan(tp.value(v), tp.value(alpha), tp.value(beta), tp.value(key), tp.value(query), traj.get());
    const bool rq = tp.requires_grad(v) || tp.requires_grad(alpha) || tp.requires_grad(beta) ||
                    tp.requires_grad(key) || tp.requires_grad(query);
    Var self = tp.push(std::move(y), rq, nullptr);
    if (!rq) return self;
    tp.set_backward(self, [v, alpha, beta, key, query, heads, self, traj](Tape<R>& t) {
        const Mat<R>& g = t.grad(self);
        const Mat<R>& vv = t.value(v);
        const Mat<R>& valpha = t.value(alpha);
        const Mat<R>& vbeta = t.value(beta);
        const Mat<R>& vkey = t.value(key);
        const Mat<R>& vquery = t.value(query);
        const index_t T = vv.rows(), C = vv.cols(), H = heads, P = C / H, S = vkey.cols() / H;

        Mat<R> lam(H, P * S);
        Mat<R> gv(T, C), galpha(T, H), gbeta(T, H), gkey(T, H * S), gquery(T, H * S);
        std::vector<R> u(static_cast<std::size_t>(P)), w(static_cast<std::size_t>(P));
        for (index_t tt = T - 1; tt >= 0; --tt) {
            for (index_t h = 0; h < H; ++h) {
                R* lh = lam.row(h);
                const R a = valpha(tt, h);
                const R b = vbeta(tt, h);
                const R* kt = vkey.row(tt) + h * S;
                const R* qt = vquery.row(tt) + h * S;
                const R* vt = vv.row(tt) + h * P;
                const R* scur = traj->row(tt + 1) + h * P * S;
                const R* sprev = traj->row(tt) + h * P * S;
                const R* gy = g.row(tt) + h * P;
                // readout y_t = S_t q_t
                for (index_t p = 0; p < P; ++p) {
                    const R gyp = gy[p];
                    const R* sp = scur + p * S;
                    R* lp = lh + p * S;
                    for (index_t s = 0; s < S; ++s) {
                        gquery(tt, h * S + s) += sp[s] * gyp;
                        lp[s] += gyp * qt[s];
                    }
                }
                // u = S_{t-1} k_t ; w = Lam k_t
                for (index_t p = 0; p < P; ++p) {
                    const R* spp = sprev + p * S;
                    const R* lp = lh + p * S;
                    R au = R(0), aw = R(0);
                    for (index_t s = 0; s < S; ++s) {
                        au += spp[s] * kt[s];
                        aw += lp[s] * kt[s];
                    }
                    u[static_cast<std::size_t>(p)] = au;
                    w[static_cast<std::size_t>(p)] = aw;
                }
                R ga = R(0), gb = R(0);
                for (index_t p = 0; p < P; ++p) {
                    const R* spp = sprev + p * S;
                    const R* lp = lh + p * S;
                    const R wp = w[static_cast<std::size_t>(p)];
                    const R up = u[static_cast<std::size_t>(p)];
                    R lam_dot_sprev = R(0);
                    for (index_t s = 0; s < S; ++s) lam_dot_sprev += lp[s] * spp[s];
                    ga += lam_dot_sprev - b * up * wp;
                    gb += (vt[p] - a * up) * wp;
                    gv(tt, h * P + p) += b * wp;
                }
                galpha(tt, h) += ga;
                gbeta(tt, h) += gb;
                // dk: Lam^T (beta v - alpha beta u) + S_{t-1}^T (-alpha beta w)
                for (index_t s = 0; s < S; ++s) {
                    R acc = R(0);
                    for (index_t p = 0; p < P; ++p) {
                        const R coef = b * vt[p] - a * b * u[static_cast<std::size_t>(p)];
                        acc += lh[p * S + s] * coef;
                        acc -= sprev[p * S + s] * a * b * w[static_cast<std::size_t>(p)];
                    }
                    gkey(tt, h * S + s) += acc;
                }
                // Lam_{t-1} = alpha (Lam - beta w (x) k)
                for (index_t p = 0; p < P; ++p) {
                    R* lp = lh + p * S;
                    const R wp = w[static_cast<std::size_t>(p)];
                    for (index_t s = 0; s < S; ++s) lp[s] = a * (lp[s] - b * wp * kt[s]);
                }
            }
        }
        if (t.requires_grad(v)) detail::add_inplace(t.grad_acc(v), gv);
        if (t.requires_grad(alpha)) detail::add_inplace(t.grad_acc(alpha), galpha);
        if (t.requires_grad(beta)) detail::add_inplace(t.grad_acc(beta), gbeta);
        if (t.requires_grad(key)) detail::add_inplace(t.grad_acc(key), gkey);
        if (t.requires_grad(query)) detail::add_inplace(t.grad_acc(query), gquery);
    });
    return self;
}

}  // namespace mambo
