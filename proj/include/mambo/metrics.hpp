#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "mambo/io.hpp"
#include "mambo/matrix.hpp"

namespace mambo {

enum class Key { Bonafide, Spoof };

inline const char* key_name(Key k) { return k == Key::Bonafide ? "bonafide" : "spoof"; }

struct ScoreRecord {
    std::string utt_id;
    double score = 0.0;  // higher => more bonafide
    Key key = Key::Bonafide;
};

struct OperatingPoint {
    double threshold = 0.0;
    double pmiss = 0.0;  // fraction of bonafide with score < threshold
    double pfa = 0.0;    // fraction of spoof with score >= threshold
};

namespace detail {

inline void check_two_classes(const std::vector<ScoreRecord>& records) {
    std::size_t nb = 0, ns = 0;
    for (const auto& r : records) {
        require(!r.utt_id.empty(), "score records must carry a nonempty utterance id");
        require(std::isfinite(r.score), "score records must be finite");
        (r.key == Key::Bonafide ? nb : ns) += 1;
    }
    require(nb >= 1 && ns >= 1,
            "metric computation needs at least one bonafide and one spoof record");
}

}  // namespace detail

// Threshold sweep over all distinct scores plus -inf/+inf sentinels. Counts
// are exact rational fractions; Pmiss is nondecreasing and Pfa nonincreasing
// as the threshold grows.
inline std::vector<OperatingPoint> det_sweep(const std::vector<ScoreRecord>& records) {
    detail::check_two_classes(records);
    std::vector<double> bona, spoof;
    for (const auto& r : records) (r.key == Key::Bonafide ? bona : spoof).push_back(r.score);
    std::sort(bona.begin(), bona.end());
    std::sort(spoof.begin(), spoof.end());

    std::vector<double> thresholds;
    thresholds.push_back(-std::numeric_limits<double>::infinity());
    {
        std::vector<double> all;
        all.reserve(records.size());
        for (const auto& r : records) all.push_back(r.score);
        std::sort(all.begin(), all.end());
        all.erase(std::unique(all.begin(), all.end()), all.end());
        thresholds.insert(thresholds.end(), all.begin(), all.end());
    }
    thresholds.push_back(std::numeric_limits<double>::infinity());

    const double nb = static_cast<double>(bona.size());
    const double ns = static_cast<double>(spoof.size());
    std::vector<OperatingPoint> points;
    points.reserve(thresholds.size());
    for (double th : thresholds) {
        const auto miss =
            std::lower_bound(bona.begin(), bona.end(), th) - bona.begin();  // scores < th
        const auto accept =
            spoof.end() - std::lower_bound(spoof.begin(), spoof.end(), th);  // scores >= th
        points.push_back(OperatingPoint{th, static_cast<double>(miss) / nb,
                                        static_cast<double>(accept) / ns});
    }
    return points;
}

struct EerResult {
    double eer = 0.0;
    double threshold = 0.0;
};

// Midpoint EER at the empirical operating point minimizing |Pmiss - Pfa|,
// ties broken toward the lower threshold. No ROC interpolation.
inline EerResult compute_eer(const std::vector<ScoreRecord>& records) {
    const auto points = det_sweep(records);
    EerResult best{1.0, 0.0};
    double best_gap = std::numeric_limits<double>::infinity();
    for (const auto& p : points) {
        const double gap = std::abs(p.pmiss - p.pfa);
        if (gap < best_gap) {
            best_gap = gap;
            best = EerResult{0.5 * (p.pmiss + p.pfa), p.threshold};
        }
    }
    return best;
}

// Constrained tandem cost: C0 + C1 * Pmiss + C2 * Pfa. Coefficients arrive
// pre-normalized from the caller; none are baked in here.
struct CostCoefficients {
    double c0 = 0.0;
    double c1 = 0.0;
    double c2 = 0.0;

    void validate() const {
        detail::require(c0 >= 0.0 && c1 >= 0.0 && c2 >= 0.0,
                        "CostCoefficients: coefficients must be nonnegative");
        detail::require(c1 > 0.0 || c2 > 0.0, "CostCoefficients: C1 or C2 must be positive");
    }
};

inline double compute_min_tdcf(const std::vector<ScoreRecord>& records, const CostCoefficients& cc) {
    cc.validate();
    const auto points = det_sweep(records);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : points) best = std::min(best, cc.c0 + cc.c1 * p.pmiss + cc.c2 * p.pfa);
    return best;
}

struct BestAvg {
    double best = 0.0;
    double avg = 0.0;
};

// Best/Avg aggregation over per-checkpoint metric values (lower is better).
inline BestAvg best_avg(const std::vector<double>& values) {
    detail::require(!values.empty(), "best_avg: empty value list");
    double mn = values[0], sum = 0.0;
    for (double v : values) {
        mn = std::min(mn, v);
        sum += v;
    }
    return BestAvg{mn, sum / static_cast<double>(values.size())};
}

// ---------------------------------------------------------------------------
// Score files: one `<utt_id> <score>` line per record, score to 6 decimals.
// ---------------------------------------------------------------------------

struct ScoreEntry {
    std::string utt_id;
    double score = 0.0;
};

inline std::string format_score_file(const std::vector<ScoreEntry>& entries) {
    std::string out;
    char buf[64];
    for (const auto& e : entries) {
        std::snprintf(buf, sizeof(buf), " %.6f\n", e.score);
        out += e.utt_id;
        out += buf;
    }
    return out;
}

inline void write_score_file(const std::string& path, const std::vector<ScoreEntry>& entries) {
    write_file_bytes(path, format_score_file(entries));
}

inline std::vector<ScoreEntry> parse_score_file(const std::string& text, const std::string& origin) {
    std::vector<ScoreEntry> out;
    std::size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
            line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        std::size_t sp = line.find_last_of(" \t");
        if (sp == std::string::npos)
            throw io_error(origin + ": line " + std::to_string(line_no) +
                           ": expected `<utt_id> <score>`");
        const std::string id = line.substr(0, line.find_first_of(" \t"));
        const std::string score_str = line.substr(sp + 1);
        try {
            std::size_t used = 0;
            const double s = std::stod(score_str, &used);
            if (used != score_str.size() || !std::isfinite(s)) throw std::invalid_argument("bad");
            out.push_back(ScoreEntry{id, s});
        } catch (const std::exception&) {
            throw io_error(origin + ": line " + std::to_string(line_no) + ": bad score value '" +
                           score_str + "'");
        }
    }
    return out;
}

inline std::vector<ScoreEntry> read_score_file(const std::string& path) {
    return parse_score_file(read_file_bytes(path), path);
}

}  // namespace mambo
