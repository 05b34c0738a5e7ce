#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "mambo/backbone.hpp"
#include "mambo/checkpoint.hpp"
#include "mambo/data.hpp"

namespace mambo {

struct TrainConfig {
    double peak_lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.05;
    double warmup_frac = 0.1;
    index_t max_epochs = 20;
    index_t patience = 7;
    index_t batch_size = 32;
    double focal_gamma = 2.0;
    double focal_alpha_bonafide = 0.75;
    double focal_alpha_spoof = 0.25;
    index_t topk = 5;
    std::uint64_t seed = 1;
    double aug_noise_std = 0.0;  // optional additive-noise augmenter; 0 disables

    double alpha_for(Key k) const {
        return k == Key::Bonafide ? focal_alpha_bonafide : focal_alpha_spoof;
    }

    void validate() const {
        detail::require(peak_lr > 0, "TrainConfig: peak_lr must be positive");
        detail::require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1,
                        "TrainConfig: betas must lie in [0,1)");
        detail::require(weight_decay >= 0, "TrainConfig: weight_decay must be nonnegative");
        detail::require(warmup_frac > 0 && warmup_frac < 1,
                        "TrainConfig: warmup_frac must lie in (0,1)");
        detail::require(max_epochs >= 1, "TrainConfig: max_epochs must be >= 1");
        detail::require(patience >= 1 && patience <= max_epochs,
                        "TrainConfig: patience must lie in [1, max_epochs]");
        detail::require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
        detail::require(focal_gamma >= 0, "TrainConfig: focal_gamma must be nonnegative");
        detail::require(focal_alpha_bonafide > 0 && focal_alpha_bonafide <= 1 &&
                            focal_alpha_spoof > 0 && focal_alpha_spoof <= 1,
                        "TrainConfig: focal alphas must lie in (0,1]");
        detail::require(topk >= 1, "TrainConfig: topk must be >= 1");
        detail::require(aug_noise_std >= 0, "TrainConfig: aug_noise_std must be nonnegative");
    }
};

// ---------------------------------------------------------------------------
// Focal loss for the two-class head: with p the softmax probability of the
// true class, loss = -alpha * (1-p)^gamma * log p. Log-sum-exp stabilized.
// ---------------------------------------------------------------------------

namespace detail {

template <typename R>
struct FocalParts {
    R log_pt;  // log prob of the true class
    R pt;
    R u;  // 1 - pt via expm1 (accurate near pt = 1)
    R loss;
};

template <typename R>
FocalParts<R> focal_parts(R logit_bona, R logit_spoof, Key label, R gamma, R alpha) {
    require(std::isfinite(static_cast<double>(logit_bona)) &&
                std::isfinite(static_cast<double>(logit_spoof)),
            "focal_loss: non-finite logits");
    require(gamma >= R(0), "focal_loss: gamma must be nonnegative");
    require(alpha > R(0) && alpha <= R(1), "focal_loss: alpha must lie in (0,1]");
    const R m = std::max(logit_bona, logit_spoof);
    const R lse = m + std::log(std::exp(logit_bona - m) + std::exp(logit_spoof - m));
    const R lt = label == Key::Bonafide ? logit_bona : logit_spoof;
    FocalParts<R> f;
    f.log_pt = lt - lse;
    f.pt = std::exp(f.log_pt);
    f.u = -std::expm1(f.log_pt);
    if (f.u < R(0)) f.u = R(0);
    const R mod = gamma == R(0) ? R(1) : std::pow(f.u, gamma);
    f.loss = -alpha * mod * f.log_pt;
    return f;
}

}  // namespace detail

template <typename R>
R focal_loss(const LogitsPair<R>& logits, Key label, R gamma, R alpha) {
    return detail::focal_parts(logits.logit_bonafide, logits.logit_spoof, label, gamma, alpha).loss;
}

// Tape node with the closed-form adjoint:
//   dL/dz_j = [alpha*gamma*u^(gamma-1)*log(pt)*pt - alpha*u^gamma] * (1[j=label] - p_j)
template <typename R>
Var focal_loss_op(Tape<R>& t, Var logits, Key label, R gamma, R alpha) {
    const Mat<R>& lv = t.value(logits);
    detail::require(lv.rows() == 1 && lv.cols() == 2, "focal_loss: logits must be 1 x 2");
    const auto f = detail::focal_parts(lv(0, 0), lv(0, 1), label, gamma, alpha);
    Mat<R> out(1, 1);
    out(0, 0) = f.loss;
    const bool rq = t.requires_grad(logits);
    Var self = t.push(std::move(out), rq, nullptr);
    if (!rq) return self;
    t.set_backward(self, [logits, label, gamma, alpha, f, self](Tape<R>& tp) {
        const R g = tp.grad(self)(0, 0);
        R coef;
        if (gamma == R(0)) {
            coef = -alpha;
        } else if (f.u <= R(0)) {
            coef = R(0);  // pt -> 1 limit: modulated gradient vanishes
        } else {
            coef = alpha * gamma * std::pow(f.u, gamma - R(1)) * f.log_pt * f.pt -
                   alpha * std::pow(f.u, gamma);
        }
        const R p_true = f.pt, p_other = R(1) - f.pt;
        Mat<R>& gl = tp.grad_acc(logits);
        const index_t true_idx = label == Key::Bonafide ? 0 : 1;
        gl(0, true_idx) += g * coef * (R(1) - p_true);
        gl(0, 1 - true_idx) += g * coef * (R(0) - p_other);
    });
    return self;
}

// ---------------------------------------------------------------------------
// Learning-rate schedule: linear warmup over warmup_frac of the run, then
// cosine decay to zero. Continuous at the boundary.
// ---------------------------------------------------------------------------
inline double lr_schedule(index_t step, index_t total_steps, const TrainConfig& cfg) {
    detail::require(total_steps >= 1, "lr_schedule: total_steps must be positive");
    detail::require(step >= 0 && step <= total_steps, "lr_schedule: step out of range");
    const index_t warmup = static_cast<index_t>(std::llround(cfg.warmup_frac * double(total_steps)));
    if (warmup > 0 && step <= warmup)
        return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
    const double progress =
        static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
    return cfg.peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay (skipped for entries flagged no-decay:
// norm gains, biases, log-decay parameters).
// ---------------------------------------------------------------------------

template <typename R>
struct OptimizerState {
    std::vector<Mat<R>> m, v;
    index_t step = 0;

    static OptimizerState init(const ParamStore<R>& ps) {
        OptimizerState st;
        for (const auto& e : ps.entries) {
            st.m.emplace_back(e.value.rows(), e.value.cols());
            st.v.emplace_back(e.value.rows(), e.value.cols());
        }
        return st;
    }
};

template <typename R>
void adamw_step(ParamStore<R>& params, const std::vector<Mat<R>>& grads, OptimizerState<R>& st,
                double lr, const TrainConfig& cfg) {
    detail::require(grads.size() == params.entries.size(), "adamw_step: grad count mismatch");
    detail::require(lr >= 0, "adamw_step: negative learning rate");
    for (std::size_t i = 0; i < grads.size(); ++i) {
        detail::require(grads[i].same_shape(params.entries[i].value),
                        "adamw_step: grad shape mismatch for " + params.entries[i].name);
        detail::require(grads[i].all_finite(),
                        "adamw_step: non-finite gradient for " + params.entries[i].name +
                            "; step rejected");
    }
    st.step += 1;
    const R b1 = static_cast<R>(cfg.beta1), b2 = static_cast<R>(cfg.beta2);
    const R bc1 = R(1) - static_cast<R>(std::pow(cfg.beta1, double(st.step)));
    const R bc2 = R(1) - static_cast<R>(std::pow(cfg.beta2, double(st.step)));
    const R eps = static_cast<R>(1e-8);
    const R lr_r = static_cast<R>(lr);
    for (std::size_t i = 0; i < params.entries.size(); ++i) {
        auto& e = params.entries[i];
        const R wd = e.decay ? static_cast<R>(cfg.weight_decay) : R(0);
        R* th = e.value.data();
        R* mm = st.m[i].data();
        R* vv = st.v[i].data();
        const R* g = grads[i].data();
        const index_t n = e.value.size();
        for (index_t j = 0; j < n; ++j) {
            mm[j] = b1 * mm[j] + (R(1) - b1) * g[j];
            vv[j] = b2 * vv[j] + (R(1) - b2) * g[j] * g[j];
            const R mhat = mm[j] / bc1;
            const R vhat = vv[j] / bc2;
            th[j] -= lr_r * mhat / (std::sqrt(vhat) + eps) + lr_r * wd * th[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Loss and gradients over a batch: mean focal loss, gradients for every
// trainable parameter. One tape per utterance, accumulated sequentially so
// the reduction order (and therefore the result) is fixed.
// ---------------------------------------------------------------------------

template <typename R>
R loss_and_grads(const Model<R>& model, const std::vector<Mat<R>>& feats,
                 const std::vector<Key>& labels, const TrainConfig& cfg,
                 std::vector<Mat<R>>& grads_out) {
    detail::require(!feats.empty() && feats.size() == labels.size(),
                    "loss_and_grads: batch must be nonempty with matching labels");
    grads_out.clear();
    for (const auto& e : model.params.entries) grads_out.emplace_back(e.value.rows(), e.value.cols());
    const R inv_n = R(1) / static_cast<R>(feats.size());
    R loss_sum = R(0);
    for (std::size_t i = 0; i < feats.size(); ++i) {
        Tape<R> t;
        TapeModel<R> tm = lift_model(t, model, /*requires_grad=*/true);
        Var logits = model_logits(t, model, tm, t.leaf(feats[i]));
        Var loss = focal_loss_op(t, logits, labels[i], static_cast<R>(cfg.focal_gamma),
                                 static_cast<R>(cfg.alpha_for(labels[i])));
        const R lv = t.value(loss)(0, 0);
        detail::require(std::isfinite(static_cast<double>(lv)), "loss_and_grads: non-finite loss");
        loss_sum += lv;
        t.backward(loss);
        for (std::size_t p = 0; p < grads_out.size(); ++p)
            if (t.grad_present(tm.vars[p]))
                detail::axpy_inplace(grads_out[p], inv_n, t.grad(tm.vars[p]));
    }
    return loss_sum * inv_n;
}

// Mean focal loss without gradients (validation path; augmentation disabled
// by construction since the caller passes un-augmented features).
template <typename R>
R eval_loss(const Model<R>& model, const std::vector<Mat<R>>& feats, const std::vector<Key>& labels,
            const TrainConfig& cfg) {
    detail::require(!feats.empty() && feats.size() == labels.size(),
                    "eval_loss: batch must be nonempty with matching labels");
    R loss_sum = R(0);
    for (std::size_t i = 0; i < feats.size(); ++i) {
        LogitsPair<R> lg = utterance_logits(model, feats[i]);
        loss_sum += focal_loss(lg, labels[i], static_cast<R>(cfg.focal_gamma),
                               static_cast<R>(cfg.alpha_for(labels[i])));
    }
    return loss_sum / static_cast<R>(feats.size());
}

// ---------------------------------------------------------------------------
// Early stopping and top-k checkpoint retention
// ---------------------------------------------------------------------------

inline bool should_stop(index_t best_epoch, index_t current_epoch, index_t patience) {
    return current_epoch - best_epoch >= patience;
}

struct CheckpointRecord {
    index_t epoch = 0;
    double dev_loss = 0.0;
    std::string path;
};

// Keeps the k records with the lowest dev loss (ties keep the earlier epoch).
class TopkKeeper {
public:
    explicit TopkKeeper(index_t k) : k_(k) { detail::require(k >= 1, "TopkKeeper: k must be >= 1"); }

    // Returns the path of an evicted checkpoint, or empty if none.
    std::string add(index_t epoch, double dev_loss, std::string path) {
        kept_.push_back(CheckpointRecord{epoch, dev_loss, std::move(path)});
        std::stable_sort(kept_.begin(), kept_.end(), [](const auto& a, const auto& b) {
            return a.dev_loss != b.dev_loss ? a.dev_loss < b.dev_loss : a.epoch < b.epoch;
        });
        if (static_cast<index_t>(kept_.size()) <= k_) return {};
        std::string evicted = kept_.back().path;
        kept_.pop_back();
        return evicted;
    }

    const std::vector<CheckpointRecord>& records() const { return kept_; }

private:
    index_t k_;
    std::vector<CheckpointRecord> kept_;
};

struct EpochRecord {
    index_t epoch = 0;
    double train_loss = 0.0;
    double dev_loss = 0.0;
    double lr = 0.0;
};

struct RunLog {
    std::vector<EpochRecord> epochs;
    std::vector<CheckpointRecord> retained;  // sorted by dev loss ascending
    index_t best_epoch = 0;
    bool stopped_early = false;
};

inline std::string format_run_log_line(const EpochRecord& e) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "epoch=%lld train_loss=%.8g dev_loss=%.8g lr=%.8g\n",
                  static_cast<long long>(e.epoch), e.train_loss, e.dev_loss, e.lr);
    return buf;
}

// ---------------------------------------------------------------------------
// Training loop: seed-derived shuffling, per-step schedule, early stopping
// after `patience` epochs without dev improvement, top-k checkpoints kept on
// disk. Identical seed + config + data give byte-identical checkpoints.
// ---------------------------------------------------------------------------

template <typename R = float>
RunLog train_run(const BackboneConfig& bcfg, const TrainConfig& tcfg, const Dataset& train_set,
                 const Dataset& dev_set, const std::string& out_dir,
                 index_t t_fixed = kDefaultFixedFrames,
                 void (*epoch_callback)(const EpochRecord&) = nullptr) {
    tcfg.validate();
    detail::require(train_set.size() >= 1 && dev_set.size() >= 1,
                    "train_run: train and dev sets must be nonempty");
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw io_error(out_dir + ": cannot create run directory: " + ec.message());

    Model<R> model = assemble_backbone<R>(bcfg, Rng::derive(tcfg.seed, 0xA11CE));
    OptimizerState<R> opt = OptimizerState<R>::init(model.params);

    const index_t n = static_cast<index_t>(train_set.size());
    const index_t bs = std::min<index_t>(tcfg.batch_size, n);
    const index_t steps_per_epoch = (n + bs - 1) / bs;
    const index_t total_steps = tcfg.max_epochs * steps_per_epoch;

    // Dev features are shaped once: eval-mode crops are deterministic.
    std::vector<Mat<R>> dev_feats;
    std::vector<Key> dev_labels(dev_set.labels.begin(), dev_set.labels.end());
    for (const auto& f : dev_set.features)
        dev_feats.push_back(crop_or_pad(f, t_fixed, CropMode::Eval).template cast<R>());

    const std::string log_path = out_dir + "/run.log";
    write_file_bytes(log_path, "");  // fresh run

    RunLog log;
    TopkKeeper keeper(tcfg.topk);
    double best_dev = std::numeric_limits<double>::infinity();
    index_t best_epoch = 0;
    index_t global_step = 0;
    std::vector<Mat<R>> grads;
    char namebuf[64];

    for (index_t epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
        const auto order = Rng(Rng::derive(tcfg.seed, 0xE90C0 + static_cast<std::uint64_t>(epoch)))
                               .permutation(static_cast<std::size_t>(n));
        double loss_sum = 0.0;
        double last_lr = 0.0;
        for (index_t start = 0; start < n; start += bs) {
            const index_t count = std::min<index_t>(bs, n - start);
            std::vector<Mat<R>> feats;
            std::vector<Key> labels;
            feats.reserve(static_cast<std::size_t>(count));
            for (index_t j = 0; j < count; ++j) {
                const std::size_t idx = order[static_cast<std::size_t>(start + j)];
                const std::uint64_t item_seed =
                    Rng::derive(tcfg.seed, 0xC409 + static_cast<std::uint64_t>(epoch) * 1000003u +
                                               static_cast<std::uint64_t>(idx));
                Mat<R> f =
                    crop_or_pad(train_set.features[idx], t_fixed, CropMode::Train, item_seed)
                        .template cast<R>();
                if (tcfg.aug_noise_std > 0) {
                    Rng arng(Rng::derive(item_seed, 1));
                    for (index_t i = 0; i < f.size(); ++i)
                        f.data()[i] += static_cast<R>(tcfg.aug_noise_std * arng.normal());
                }
                feats.push_back(std::move(f));
                labels.push_back(train_set.labels[idx]);
            }
            ++global_step;
            const double lr = lr_schedule(global_step, total_steps, tcfg);
            const R batch_loss = loss_and_grads(model, feats, labels, tcfg, grads);
            adamw_step(model.params, grads, opt, lr, tcfg);
            loss_sum += static_cast<double>(batch_loss) * static_cast<double>(count);
            last_lr = lr;
        }
        const double train_loss = loss_sum / static_cast<double>(n);
        const double dev_loss = static_cast<double>(eval_loss(model, dev_feats, dev_labels, tcfg));

        EpochRecord rec{epoch, train_loss, dev_loss, last_lr};
        log.epochs.push_back(rec);
        {
            std::ofstream lf(log_path, std::ios::app);
            if (!lf) throw io_error(log_path + ": cannot append run log");
            lf << format_run_log_line(rec);
        }
        if (epoch_callback) epoch_callback(rec);

        std::snprintf(namebuf, sizeof(namebuf), "ckpt_epoch_%03lld.mbck",
                      static_cast<long long>(epoch));
        const std::string ckpt_path = out_dir + "/" + namebuf;
        save_checkpoint(ckpt_path, model);
        const std::string evicted = keeper.add(epoch, dev_loss, ckpt_path);
        if (!evicted.empty()) fs::remove(evicted, ec);

        if (dev_loss < best_dev) {
            best_dev = dev_loss;
            best_epoch = epoch;
        }
        if (should_stop(best_epoch, epoch, tcfg.patience)) {
            log.stopped_early = epoch < tcfg.max_epochs;
            break;
        }
    }
    log.best_epoch = best_epoch;
    log.retained = keeper.records();

    std::string summary;
    char line[192];
    for (const auto& r : log.retained) {
        std::snprintf(line, sizeof(line), "epoch=%lld dev_loss=%.8g file=%s\n",
                      static_cast<long long>(r.epoch), r.dev_loss,
                      fs::path(r.path).filename().string().c_str());
        summary += line;
    }
    write_file_bytes(out_dir + "/checkpoints.txt", summary);
    return log;
}

}  // namespace mambo
