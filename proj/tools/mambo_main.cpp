// mambo: hybrid SSM-attention backbones for audio anti-spoofing.
// Subcommands: synth, train, score, metrics, report, inspect.
// Exit codes: 0 success, 1 usage error, 2 data/format error.

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "mambo/mambo.hpp"

namespace {

using namespace mambo;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string require_out_dir(const std::string& flag_out, const ExperimentConfig& cfg) {
    if (!flag_out.empty()) return flag_out;
    if (!cfg.out_dir.empty()) return cfg.out_dir;
    throw UsageError("no output directory: set [run] out_dir in the config or pass --out");
}

int cmd_synth(const std::string& config_path, const std::string& out, bool seed_set,
              std::uint64_t seed, const std::string& split) {
    ExperimentConfig cfg = read_experiment_config(config_path);
    if (!cfg.has_synth)
        throw io_error(config_path + ": no [synth] section; nothing to generate");
    if (seed_set) cfg.synth.seed = seed;
    const std::string dir = require_out_dir(out, cfg);

    std::vector<SynthSplit> splits;
    if (!split.empty()) {
        long long a = 0, b = 0, c = 0;
        char extra = 0;
        if (std::sscanf(split.c_str(), "%lld,%lld,%lld%c", &a, &b, &c, &extra) != 3 || a < 0 ||
            b < 0 || c < 0)
            throw UsageError("--split expects three counts `train,dev,eval`, got '" + split + "'");
        splits = {{"train", a}, {"dev", b}, {"eval", c}};
    }

    auto utts = synth_generate(cfg.synth);
    write_synth_dataset(utts, dir, splits);
    std::printf("generated %lld bonafide + %lld spoof utterances (T=%lld, F=%lld, seed=%llu) -> %s\n",
                static_cast<long long>(cfg.synth.n_bonafide),
                static_cast<long long>(cfg.synth.n_spoof), static_cast<long long>(cfg.synth.frames),
                static_cast<long long>(cfg.synth.dims),
                static_cast<unsigned long long>(cfg.synth.seed), dir.c_str());
    if (!splits.empty())
        std::printf("splits: train=%lld dev=%lld eval=%lld (stratified by key)\n",
                    static_cast<long long>(splits[0].count), static_cast<long long>(splits[1].count),
                    static_cast<long long>(splits[2].count));
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out, bool seed_set,
              std::uint64_t seed) {
    ExperimentConfig cfg = read_experiment_config(config_path);
    if (!cfg.has_data)
        throw io_error(config_path + ": no [data] section; train needs manifests and protocols");
    if (seed_set) cfg.train.seed = seed;
    const std::string dir = require_out_dir(out, cfg);

    const std::filesystem::path base = std::filesystem::path(config_path).parent_path();
    auto resolve = [&](const std::string& p) {
        return std::filesystem::path(p).is_absolute() ? p : (base / p).string();
    };
    Dataset train_set = load_dataset(resolve(cfg.data.train_manifest), resolve(cfg.data.train_protocol));
    Dataset dev_set = load_dataset(resolve(cfg.data.dev_manifest), resolve(cfg.data.dev_protocol));

    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw io_error(dir + ": cannot create run directory: " + ec.message());
    ExperimentConfig canonical = cfg;
    canonical.out_dir = dir;
    write_file_bytes(dir + "/config.cfg", emit_experiment_config(canonical));

    std::printf("training %s/%s L=%lld N=%lld D=%lld on %zu train / %zu dev utterances\n",
                topology_name(cfg.backbone.topology), mixer_kind_name(cfg.backbone.mixer.kind),
                static_cast<long long>(cfg.backbone.n_layers),
                static_cast<long long>(cfg.backbone.ssm_per_unit),
                static_cast<long long>(cfg.backbone.hidden_dim), train_set.size(), dev_set.size());
    RunLog log = train_run<float>(cfg.backbone, cfg.train, train_set, dev_set, dir,
                                  cfg.data.t_fixed, [](const EpochRecord& r) {
                                      std::fputs(format_run_log_line(r).c_str(), stdout);
                                      std::fflush(stdout);
                                  });
    std::printf("retained top-%zu checkpoints (best epoch %lld):\n", log.retained.size(),
                static_cast<long long>(log.best_epoch));
    for (const auto& r : log.retained)
        std::printf("  epoch=%lld dev_loss=%.8g %s\n", static_cast<long long>(r.epoch), r.dev_loss,
                    r.path.c_str());
    if (log.stopped_early) std::printf("stopped early (patience)\n");
    return 0;
}

int cmd_score(const std::string& ckpt_path, const std::string& manifest_path,
              const std::string& out_path, index_t t_fixed) {
    Model<float> model = load_checkpoint(ckpt_path);
    auto manifest = read_manifest_file(manifest_path);
    const std::filesystem::path root = std::filesystem::path(manifest_path).parent_path();
    std::sort(manifest.begin(), manifest.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.utt_id < b.utt_id; });
    std::vector<ScoreEntry> scores;
    scores.reserve(manifest.size());
    for (const auto& me : manifest) {
        Mat<float> feats = read_feature_file((root / me.rel_path).string());
        Mat<float> shaped = crop_or_pad(feats, t_fixed, CropMode::Eval);
        const auto lg = utterance_logits(model, shaped);
        scores.push_back(ScoreEntry{me.utt_id, static_cast<double>(lg.score())});
    }
    write_score_file(out_path, scores);
    std::printf("scored %zu utterances -> %s\n", scores.size(), out_path.c_str());
    return 0;
}

struct TdcfFlags {
    double c0 = 0, c1 = 0, c2 = 0;
    int given = 0;
    bool active() const { return given > 0; }
    CostCoefficients coeffs() const {
        if (given != 3)
            throw UsageError("min t-DCF needs all of --tdcf-c0, --tdcf-c1, --tdcf-c2");
        return CostCoefficients{c0, c1, c2};
    }
};

int cmd_metrics(const std::string& scores_path, const std::string& protocol_path,
                const TdcfFlags& tdcf) {
    auto records = join_scores_with_protocol(read_score_file(scores_path),
                                             read_protocol_file(protocol_path), scores_path);
    const auto eer = compute_eer(records);
    std::printf("EER=%.2f\n", 100.0 * eer.eer);
    if (tdcf.active()) std::printf("min_tDCF=%.4f\n", compute_min_tdcf(records, tdcf.coeffs()));
    return 0;
}

int cmd_report(const std::vector<std::string>& score_files, const std::string& protocol_path,
               const TdcfFlags& tdcf) {
    const auto protocol = read_protocol_file(protocol_path);
    std::vector<double> eers, tdcfs;
    std::printf("# Best/Avg aggregated per evaluation set over the supplied score files "
                "(top-k checkpoints); no cross-set checkpoint selection.\n");
    std::printf("# file EER(%%)%s\n", tdcf.active() ? " min_tDCF" : "");
    for (const auto& f : score_files) {
        auto records = join_scores_with_protocol(read_score_file(f), protocol, f);
        const double eer = 100.0 * compute_eer(records).eer;
        eers.push_back(eer);
        if (tdcf.active()) {
            const double v = compute_min_tdcf(records, tdcf.coeffs());
            tdcfs.push_back(v);
            std::printf("%s %.2f %.4f\n", f.c_str(), eer, v);
        } else {
            std::printf("%s %.2f\n", f.c_str(), eer);
        }
    }
    const auto ba = best_avg(eers);
    std::printf("EER(%%) Best/Avg = %.2f / %.2f\n", ba.best, ba.avg);
    if (tdcf.active()) {
        const auto bt = best_avg(tdcfs);
        std::printf("min_tDCF Best/Avg = %.4f / %.4f\n", bt.best, bt.avg);
    }
    return 0;
}

int cmd_inspect(const std::string& ckpt_path) {
    Model<float> model = load_checkpoint(ckpt_path);
    const BackboneConfig& b = model.cfg;
    std::printf("[backbone]\n");
    std::printf("topology = %s\n", topology_name(b.topology));
    std::printf("L = %lld\n", static_cast<long long>(b.n_layers));
    std::printf("N = %lld\n", static_cast<long long>(b.ssm_per_unit));
    std::printf("D = %lld\n", static_cast<long long>(b.hidden_dim));
    std::printf("input_dim = %lld\n", static_cast<long long>(b.input_dim));
    std::printf("n_attn_heads = %lld\n", static_cast<long long>(b.n_attn_heads));
    std::printf("ffn_mult = %lld\n", static_cast<long long>(b.ffn_mult));
    std::printf("norm_eps = %g\n", b.norm_eps);
    std::printf("\n[mixer]\n");
    std::printf("kind = %s\n", mixer_kind_name(b.mixer.kind));
    std::printf("state_dim = %lld\n", static_cast<long long>(b.mixer.state_dim));
    std::printf("head_dim = %lld\n", static_cast<long long>(b.mixer.head_dim));
    std::printf("expand = %lld\n", static_cast<long long>(b.mixer.expand));
    std::printf("conv_width = %lld\n", static_cast<long long>(b.mixer.conv_width));
    std::printf("\nlayers =");
    for (LayerKind k : model.spec) std::printf(" %s", layer_kind_name(k));
    std::printf("\nparameters = %lld\n", static_cast<long long>(model.params.total_params()));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mambo: hybrid SSM-attention backbones for audio anti-spoofing"};
    app.require_subcommand(1);

    std::string config_path, out, split, ckpt, manifest, scores_out, scores_path, protocol_path;
    std::uint64_t seed = 0;
    long long t_fixed = mambo::kDefaultFixedFrames;
    std::vector<std::string> score_files;
    TdcfFlags tdcf;

    auto* synth = app.add_subcommand("synth", "generate a synthetic feature dataset");
    synth->add_option("--config", config_path, "experiment config with a [synth] section")
        ->required();
    synth->add_option("--out", out, "output dataset directory (overrides [run] out_dir)");
    auto* synth_seed = synth->add_option("--seed", seed, "override the generator seed");
    synth->add_option("--split", split, "emit stratified splits, e.g. 400,100,200");

    auto* train = app.add_subcommand("train", "train a model from a config");
    train->add_option("--config", config_path, "experiment config with [data] paths")->required();
    train->add_option("--out", out, "run directory (overrides [run] out_dir)");
    auto* train_seed = train->add_option("--seed", seed, "override the training seed");

    auto* score = app.add_subcommand("score", "score a manifest with a checkpoint");
    score->add_option("--checkpoint", ckpt, "checkpoint file (.mbck)")->required();
    score->add_option("--manifest", manifest, "utterance manifest")->required();
    score->add_option("--out", scores_out, "score file to write")->required();
    score->add_option("--t-fixed", t_fixed, "fixed frame count for evaluation crops");

    auto* metrics = app.add_subcommand("metrics", "EER (and optional min t-DCF) of a score file");
    metrics->add_option("--scores", scores_path, "score file")->required();
    metrics->add_option("--protocol", protocol_path, "protocol with bonafide/spoof keys")
        ->required();
    auto* m0 = metrics->add_option("--tdcf-c0", tdcf.c0, "tandem cost constant");
    auto* m1 = metrics->add_option("--tdcf-c1", tdcf.c1, "tandem cost miss weight");
    auto* m2 = metrics->add_option("--tdcf-c2", tdcf.c2, "tandem cost false-alarm weight");

    auto* report = app.add_subcommand("report", "Best/Avg table over several score files");
    report->add_option("--protocol", protocol_path, "protocol with bonafide/spoof keys")
        ->required();
    report->add_option("scores", score_files, "score files (one per checkpoint)")
        ->required()
        ->expected(-1);
    auto* r0 = report->add_option("--tdcf-c0", tdcf.c0, "tandem cost constant");
    auto* r1 = report->add_option("--tdcf-c1", tdcf.c1, "tandem cost miss weight");
    auto* r2 = report->add_option("--tdcf-c2", tdcf.c2, "tandem cost false-alarm weight");

    auto* inspect = app.add_subcommand("inspect", "echo a checkpoint's config and parameter count");
    inspect->add_option("--checkpoint", ckpt, "checkpoint file (.mbck)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    tdcf.given = static_cast<int>(m0->count() + m1->count() + m2->count() + r0->count() +
                                  r1->count() + r2->count());
    try {
        if (synth->parsed())
            return cmd_synth(config_path, out, synth_seed->count() > 0, seed, split);
        if (train->parsed()) return cmd_train(config_path, out, train_seed->count() > 0, seed);
        if (score->parsed())
            return cmd_score(ckpt, manifest, scores_out, static_cast<mambo::index_t>(t_fixed));
        if (metrics->parsed()) return cmd_metrics(scores_path, protocol_path, tdcf);
        if (report->parsed()) return cmd_report(score_files, protocol_path, tdcf);
        if (inspect->parsed()) return cmd_inspect(ckpt);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const mambo::io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
