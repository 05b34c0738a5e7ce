#pragma once

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "mambo/io.hpp"
#include "mambo/matrix.hpp"
#include "mambo/metrics.hpp"
#include "mambo/rng.hpp"

namespace mambo {

// 66,800 samples at the front-end's 320-sample frame stride.
constexpr index_t kDefaultFixedFrames = 208;

// ---------------------------------------------------------------------------
// Feature files ("MBFT1\0"): u32 T, u32 F, then T*F little-endian f32
// row-major. Bitwise-lossless roundtrip.
// ---------------------------------------------------------------------------

namespace detail {
inline constexpr char kFeatureMagic[6] = {'M', 'B', 'F', 'T', '1', '\0'};
}

inline std::string serialize_feature_file(const Mat<float>& x) {
    detail::require(x.rows() >= 1 && x.cols() >= 1, "feature file: empty matrix");
    detail::require(x.all_finite(), "feature file: non-finite values");
    std::string out;
    out.append(detail::kFeatureMagic, 6);
    detail::put_u32_le(out, static_cast<std::uint32_t>(x.rows()));
    detail::put_u32_le(out, static_cast<std::uint32_t>(x.cols()));
    for (index_t i = 0; i < x.size(); ++i) detail::put_f32_le(out, x.data()[i]);
    return out;
}

inline void write_feature_file(const std::string& path, const Mat<float>& x) {
    write_file_bytes(path, serialize_feature_file(x));
}

inline Mat<float> deserialize_feature_file(const std::string& bytes, const std::string& origin) {
    detail::ByteReader r(bytes, origin);
    const std::string magic = r.bytes(6, "magic");
    if (std::string(detail::kFeatureMagic, 6) != magic)
        throw io_error(origin + ": bad magic (not a MBFT1 feature file)");
    const std::uint64_t t = r.u32("frame count");
    const std::uint64_t f = r.u32("feature dim");
    if (t == 0 || f == 0) throw io_error(origin + ": zero frame or feature count");
    if (t * f > (std::uint64_t(1) << 31))
        throw io_error(origin + ": frame count * feature dim overflows the supported size");
    if (r.remaining() != t * f * 4)
        throw io_error(origin + ": payload size does not match header (expected " +
                       std::to_string(t * f * 4) + " bytes, have " + std::to_string(r.remaining()) +
                       ")");
    Mat<float> x(static_cast<index_t>(t), static_cast<index_t>(f));
    for (index_t i = 0; i < x.size(); ++i) x.data()[i] = r.f32("feature values");
    return x;
}

inline Mat<float> read_feature_file(const std::string& path) {
    return deserialize_feature_file(read_file_bytes(path), path);
}

// ---------------------------------------------------------------------------
// Protocols: ASVspoof CM trial-list convention `SPK UTT - ATTACK KEY`.
// The second field is the utterance id, the last field the key; the
// second-to-last (attack tag) is ignored. Blank lines are skipped.
// ---------------------------------------------------------------------------

struct ProtocolEntry {
    std::string utt_id;
    Key key = Key::Bonafide;
};

inline std::vector<ProtocolEntry> parse_protocol(const std::string& text,
                                                 const std::string& origin = "protocol") {
    std::vector<ProtocolEntry> out;
    std::istringstream ss(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::vector<std::string> tok;
        std::string t;
        while (ls >> t) tok.push_back(t);
        if (tok.empty()) continue;
        if (tok.size() < 2)
            throw io_error(origin + ": line " + std::to_string(line_no) +
                           ": expected at least `<speaker> <utt_id> ... <key>`");
        const std::string& key_tok = tok.back();
        Key key;
        if (key_tok == "bonafide") key = Key::Bonafide;
        else if (key_tok == "spoof") key = Key::Spoof;
        else
            throw io_error(origin + ": line " + std::to_string(line_no) + ": unknown key token '" +
                           key_tok + "' (expected bonafide or spoof)");
        out.push_back(ProtocolEntry{tok[1], key});
    }
    return out;
}

inline std::vector<ProtocolEntry> read_protocol_file(const std::string& path) {
    return parse_protocol(read_file_bytes(path), path);
}

// ---------------------------------------------------------------------------
// Manifests: `<utt_id> <relative feature path>` per line.
// ---------------------------------------------------------------------------

struct ManifestEntry {
    std::string utt_id;
    std::string rel_path;
};

inline std::vector<ManifestEntry> parse_manifest(const std::string& text,
                                                 const std::string& origin = "manifest") {
    std::vector<ManifestEntry> out;
    std::istringstream ss(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string id, path, extra;
        if (!(ls >> id)) continue;
        if (!(ls >> path) || (ls >> extra))
            throw io_error(origin + ": line " + std::to_string(line_no) +
                           ": expected `<utt_id> <relative feature path>`");
        out.push_back(ManifestEntry{id, path});
    }
    return out;
}

inline std::vector<ManifestEntry> read_manifest_file(const std::string& path) {
    return parse_manifest(read_file_bytes(path), path);
}

// ---------------------------------------------------------------------------
// Fixed-length shaping: contiguous crop for long inputs (random start in
// train mode, start 0 in eval mode), repeat-tiling for short ones.
// ---------------------------------------------------------------------------

enum class CropMode { Train, Eval };

template <typename R>
Mat<R> crop_or_pad(const Mat<R>& x, index_t t_fixed, CropMode mode, std::uint64_t seed = 0) {
    detail::require(x.rows() >= 1, "crop_or_pad: empty input");
    detail::require(t_fixed >= 1, "crop_or_pad: target length must be positive");
    const index_t T = x.rows(), C = x.cols();
    if (T == t_fixed) return x;
    Mat<R> out(t_fixed, C);
    if (T > t_fixed) {
        index_t start = 0;
        if (mode == CropMode::Train) {
            Rng rng(seed);
            start = static_cast<index_t>(rng.uniform_int(static_cast<std::uint64_t>(T - t_fixed + 1)));
        }
        for (index_t t = 0; t < t_fixed; ++t)
            for (index_t j = 0; j < C; ++j) out(t, j) = x(start + t, j);
    } else {
        for (index_t t = 0; t < t_fixed; ++t) {
            const index_t src = t % T;
            for (index_t j = 0; j < C; ++j) out(t, j) = x(src, j);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic dataset generator. Bonafide utterances are smoothed noise
// (first-order autoregressive over frames, coefficient 0.9, per-dim scales);
// spoof utterances add a local transient burst and/or a rank-1 global offset
// over a sparse dim subset. The artifact signatures (dim subsets and
// directions) are drawn once per dataset so the spoof class is systematic;
// placement and gain vary per utterance. Content is a pure function of the
// spec: the signature comes from the spec seed and every utterance derives
// its own generator from (seed, index).
// ---------------------------------------------------------------------------

struct SynthSpec {
    index_t n_bonafide = 10;
    index_t n_spoof = 10;
    index_t frames = kDefaultFixedFrames;  // T
    index_t dims = 1024;                   // F
    double local_magnitude = 5.0;
    index_t local_frames = 25;
    index_t local_dims = 16;
    double global_magnitude = 1.5;
    index_t global_dims = 16;
    double noise_level = 1.0;
    std::uint64_t seed = 1;

    void validate() const {
        detail::require(n_bonafide >= 1 && n_spoof >= 1, "SynthSpec: class counts must be >= 1");
        detail::require(frames >= 1, "SynthSpec: frames must be >= 1");
        detail::require(dims >= 1, "SynthSpec: dims must be >= 1");
        detail::require(local_magnitude >= 0 && global_magnitude >= 0,
                        "SynthSpec: artifact magnitudes must be nonnegative");
        detail::require(local_frames >= 0 && local_dims >= 0 && global_dims >= 0,
                        "SynthSpec: artifact extents must be nonnegative");
        detail::require(noise_level >= 0, "SynthSpec: noise level must be nonnegative");
    }
};

struct SynthUtterance {
    std::string id;
    Key key = Key::Bonafide;
    std::string attack = "-";  // local / global / joint for spoof
    Mat<float> features;
};

namespace detail {

inline Mat<float> synth_base(Rng& rng, index_t T, index_t F, double noise_level) {
    std::vector<double> scale(static_cast<std::size_t>(F));
    for (index_t d = 0; d < F; ++d) scale[static_cast<std::size_t>(d)] = 0.5 + rng.uniform();
    Mat<float> x(T, F);
    std::vector<double> z(static_cast<std::size_t>(F), 0.0);
    for (index_t t = 0; t < T; ++t) {
        for (index_t d = 0; d < F; ++d) {
            auto& zd = z[static_cast<std::size_t>(d)];
            zd = 0.9 * zd + noise_level * rng.normal();
            x(t, d) = static_cast<float>(zd * scale[static_cast<std::size_t>(d)]);
        }
    }
    return x;
}

}  // namespace detail

namespace detail {

// Dataset-level artifact signature: which dims carry each artifact family and
// with what direction. Drawn once from the spec seed.
struct SynthSignature {
    std::vector<index_t> local_dims;
    std::vector<double> local_dir;
    std::vector<index_t> global_dims;
    std::vector<double> global_dir;
};

inline SynthSignature synth_signature(const SynthSpec& spec) {
    Rng rng(Rng::derive(spec.seed, 0x516717ull));
    SynthSignature sig;
    for (index_t j = 0; j < spec.local_dims; ++j) {
        sig.local_dims.push_back(
            static_cast<index_t>(rng.uniform_int(static_cast<std::uint64_t>(spec.dims))));
        sig.local_dir.push_back(rng.normal());
    }
    for (index_t j = 0; j < spec.global_dims; ++j) {
        sig.global_dims.push_back(
            static_cast<index_t>(rng.uniform_int(static_cast<std::uint64_t>(spec.dims))));
        sig.global_dir.push_back(rng.normal());
    }
    return sig;
}

}  // namespace detail

inline std::vector<SynthUtterance> synth_generate(const SynthSpec& spec) {
    spec.validate();
    const detail::SynthSignature sig = detail::synth_signature(spec);
    std::vector<SynthUtterance> out;
    out.reserve(static_cast<std::size_t>(spec.n_bonafide + spec.n_spoof));
    char idbuf[32];
    for (index_t i = 0; i < spec.n_bonafide + spec.n_spoof; ++i) {
        const bool bona = i < spec.n_bonafide;
        Rng rng(Rng::derive(spec.seed, static_cast<std::uint64_t>(i)));
        SynthUtterance u;
        u.key = bona ? Key::Bonafide : Key::Spoof;
        std::snprintf(idbuf, sizeof(idbuf), "%s_%06lld", bona ? "bona" : "spoof",
                      static_cast<long long>(bona ? i : i - spec.n_bonafide));
        u.id = idbuf;
        u.features = detail::synth_base(rng, spec.frames, spec.dims, spec.noise_level);
        if (!bona) {
            // 0 = local transient only, 1 = global offset only, 2 = joint.
            const std::uint64_t type = rng.uniform_int(3);
            const bool local = type != 1, global = type != 0;
            u.attack = type == 0 ? "local" : (type == 1 ? "global" : "joint");
            const double local_gain = 0.5 + rng.uniform();
            const double global_gain = 0.5 + rng.uniform();
            std::vector<index_t> burst_frames;
            for (index_t j = 0; j < spec.local_frames; ++j)
                burst_frames.push_back(
                    static_cast<index_t>(rng.uniform_int(static_cast<std::uint64_t>(spec.frames))));
            if (local)
                for (index_t ft : burst_frames) {
                    const double jitter = 0.5 + rng.uniform();
                    for (std::size_t j = 0; j < sig.local_dims.size(); ++j)
                        u.features(ft, sig.local_dims[j]) += static_cast<float>(
                            spec.local_magnitude * local_gain * jitter * sig.local_dir[j]);
                }
            if (global)
                for (std::size_t j = 0; j < sig.global_dims.size(); ++j) {
                    const float off = static_cast<float>(spec.global_magnitude * global_gain *
                                                         sig.global_dir[j]);
                    for (index_t t = 0; t < spec.frames; ++t)
                        u.features(t, sig.global_dims[j]) += off;
                }
        }
        out.push_back(std::move(u));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Datasets on disk: features/<id>.mbft + protocol + manifest (paths relative
// to the manifest's directory).
// ---------------------------------------------------------------------------

struct Dataset {
    std::vector<std::string> ids;
    std::vector<Key> labels;
    std::vector<Mat<float>> features;

    std::size_t size() const { return ids.size(); }
};

inline Dataset load_dataset(const std::string& manifest_path, const std::string& protocol_path) {
    const auto manifest = read_manifest_file(manifest_path);
    const auto protocol = read_protocol_file(protocol_path);
    Dataset ds;
    const std::filesystem::path root = std::filesystem::path(manifest_path).parent_path();
    for (const auto& me : manifest) {
        Key key{};
        bool found = false;
        for (const auto& pe : protocol)
            if (pe.utt_id == me.utt_id) {
                key = pe.key;
                found = true;
                break;
            }
        if (!found)
            throw io_error(protocol_path + ": no key for utterance '" + me.utt_id + "' named in " +
                           manifest_path);
        ds.ids.push_back(me.utt_id);
        ds.labels.push_back(key);
        ds.features.push_back(read_feature_file((root / me.rel_path).string()));
    }
    if (ds.ids.empty()) throw io_error(manifest_path + ": empty manifest");
    return ds;
}

struct SynthSplit {
    std::string name;  // e.g. "train"
    index_t count = 0;
};

namespace detail {

inline std::string protocol_line(const SynthUtterance& u) {
    return "SYN0000 " + u.id + " - " + u.attack + " " + key_name(u.key) + "\n";
}

inline void write_dataset_files(const std::string& dir, const std::string& suffix,
                                const std::vector<const SynthUtterance*>& utts) {
    std::string protocol, manifest;
    for (const auto* u : utts) {
        protocol += protocol_line(*u);
        manifest += u->id + " features/" + u->id + ".mbft\n";
    }
    write_file_bytes(dir + "/protocol" + suffix + ".txt", protocol);
    write_file_bytes(dir + "/manifest" + suffix + ".txt", manifest);
}

}  // namespace detail

// Writes features plus protocol/manifest files. With splits, utterances are
// assigned stratified by class (largest-remainder apportionment), emitting
// protocol_<name>.txt / manifest_<name>.txt per split.
inline void write_synth_dataset(const std::vector<SynthUtterance>& utts, const std::string& dir,
                                const std::vector<SynthSplit>& splits = {}) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "features", ec);
    if (ec) throw io_error(dir + ": cannot create dataset directory: " + ec.message());

    for (const auto& u : utts) write_feature_file(dir + "/features/" + u.id + ".mbft", u.features);

    std::vector<const SynthUtterance*> all;
    for (const auto& u : utts) all.push_back(&u);
    detail::write_dataset_files(dir, "", all);

    if (splits.empty()) return;
    std::vector<const SynthUtterance*> bona, spoof;
    for (const auto& u : utts) (u.key == Key::Bonafide ? bona : spoof).push_back(&u);
    index_t total = 0;
    for (const auto& s : splits) total += s.count;
    detail::require(total <= static_cast<index_t>(utts.size()),
                    "write_synth_dataset: split counts exceed the dataset size");

    // Largest-remainder apportionment of each split's bonafide share.
    const double bona_frac = static_cast<double>(bona.size()) / static_cast<double>(utts.size());
    std::vector<index_t> bona_counts(splits.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    index_t bona_assigned = 0, bona_wanted = 0;
    for (std::size_t s = 0; s < splits.size(); ++s) {
        const double ideal = splits[s].count * bona_frac;
        bona_counts[s] = static_cast<index_t>(ideal);
        bona_assigned += bona_counts[s];
        remainders.push_back({ideal - static_cast<double>(bona_counts[s]), s});
        bona_wanted += splits[s].count;
    }
    index_t leftover =
        std::min<index_t>(static_cast<index_t>(bona.size()), bona_wanted) - bona_assigned;
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; r < remainders.size() && leftover > 0; ++r, --leftover)
        bona_counts[remainders[r].second] += 1;

    std::size_t bi = 0, si = 0;
    for (std::size_t s = 0; s < splits.size(); ++s) {
        std::vector<const SynthUtterance*> part;
        index_t nb = bona_counts[s], ns = splits[s].count - nb;
        detail::require(bi + static_cast<std::size_t>(nb) <= bona.size() &&
                            si + static_cast<std::size_t>(ns) <= spoof.size(),
                        "write_synth_dataset: split counts exceed per-class availability");
        for (index_t j = 0; j < nb; ++j) part.push_back(bona[bi++]);
        for (index_t j = 0; j < ns; ++j) part.push_back(spoof[si++]);
        detail::write_dataset_files(dir, "_" + splits[s].name, part);
    }
}

// Joins score entries with protocol keys into metric records.
inline std::vector<ScoreRecord> join_scores_with_protocol(const std::vector<ScoreEntry>& scores,
                                                          const std::vector<ProtocolEntry>& protocol,
                                                          const std::string& score_origin) {
    std::vector<ScoreRecord> records;
    records.reserve(scores.size());
    for (const auto& s : scores) {
        bool found = false;
        for (const auto& p : protocol)
            if (p.utt_id == s.utt_id) {
                records.push_back(ScoreRecord{s.utt_id, s.score, p.key});
                found = true;
                break;
            }
        if (!found)
            throw io_error(score_origin + ": utterance '" + s.utt_id + "' has no protocol key");
    }
    return records;
}

}  // namespace mambo
