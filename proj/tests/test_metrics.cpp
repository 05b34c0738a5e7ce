#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mambo/metrics.hpp"
#include "mambo/rng.hpp"

using namespace mambo;

namespace {

std::vector<ScoreRecord> make_records(const std::vector<double>& bona,
                                      const std::vector<double>& spoof) {
    std::vector<ScoreRecord> r;
    int i = 0;
    for (double s : bona) r.push_back({"b" + std::to_string(i++), s, Key::Bonafide});
    for (double s : spoof) r.push_back({"s" + std::to_string(i++), s, Key::Spoof});
    return r;
}

// Brute-force counting oracle: evaluates (Pmiss, Pfa) at a threshold by
// direct loops over the records.
std::pair<double, double> brute_rates(const std::vector<ScoreRecord>& records, double th) {
    double nb = 0, ns = 0, miss = 0, fa = 0;
    for (const auto& r : records) {
        if (r.key == Key::Bonafide) {
            nb += 1;
            if (r.score < th) miss += 1;
        } else {
            ns += 1;
            if (r.score >= th) fa += 1;
        }
    }
    return {miss / nb, fa / ns};
}

// Brute-force EER: scan all candidate thresholds, midpoint convention.
double brute_eer(const std::vector<ScoreRecord>& records) {
    std::vector<double> ths{-std::numeric_limits<double>::infinity(),
                            std::numeric_limits<double>::infinity()};
    for (const auto& r : records) ths.push_back(r.score);
    double best_gap = 1e300, best = 1.0;
    std::sort(ths.begin(), ths.end());
    for (double th : ths) {
        auto [pm, pf] = brute_rates(records, th);
        if (std::abs(pm - pf) < best_gap) {
            best_gap = std::abs(pm - pf);
            best = 0.5 * (pm + pf);
        }
    }
    return best;
}

double brute_min_tdcf(const std::vector<ScoreRecord>& records, const CostCoefficients& cc) {
    std::vector<double> ths{-std::numeric_limits<double>::infinity(),
                            std::numeric_limits<double>::infinity()};
    for (const auto& r : records) ths.push_back(r.score);
    double best = 1e300;
    for (double th : ths) {
        auto [pm, pf] = brute_rates(records, th);
        best = std::min(best, cc.c0 + cc.c1 * pm + cc.c2 * pf);
    }
    return best;
}

std::vector<ScoreRecord> random_records(Rng& rng, std::size_t n) {
    std::vector<ScoreRecord> r;
    r.push_back({"b", rng.uniform(-2, 2), Key::Bonafide});
    r.push_back({"s", rng.uniform(-2, 2), Key::Spoof});
    for (std::size_t i = 2; i < n; ++i) {
        // quantized scores so ties actually occur
        const double s = std::round(rng.uniform(-2, 2) * 8.0) / 8.0;
        r.push_back({"u" + std::to_string(i), s,
                     rng.uniform() < 0.5 ? Key::Bonafide : Key::Spoof});
    }
    return r;
}

}  // namespace

TEST_CASE("det sweep endpoints and perfect separation") {
    auto records = make_records({1.0}, {0.0});
    auto points = det_sweep(records);
    CHECK(points.front().threshold == -std::numeric_limits<double>::infinity());
    CHECK(points.front().pmiss == 0.0);
    CHECK(points.front().pfa == 1.0);
    CHECK(points.back().threshold == std::numeric_limits<double>::infinity());
    CHECK(points.back().pmiss == 1.0);
    CHECK(points.back().pfa == 0.0);
    // the 0.5 operating point separates perfectly
    auto [pm, pf] = brute_rates(records, 0.5);
    CHECK(pm == 0.0);
    CHECK(pf == 0.0);
    CHECK(compute_eer(records).eer == 0.0);
}

TEST_CASE("det sweep is monotone and matches the brute-force counter") {
    Rng rng(90);
    for (int rep = 0; rep < 30; ++rep) {
        auto records = random_records(rng, 3 + rng.uniform_int(60));
        auto points = det_sweep(records);
        double prev_pm = -1.0, prev_pf = 2.0;
        for (const auto& p : points) {
            auto [pm, pf] = brute_rates(records, p.threshold);
            CHECK(p.pmiss == pm);
            CHECK(p.pfa == pf);
            CHECK(p.pmiss >= prev_pm);
            CHECK(p.pfa <= prev_pf);
            prev_pm = p.pmiss;
            prev_pf = p.pfa;
        }
    }
}

TEST_CASE("det sweep reproduces the brute-force counter on a 1000-record set") {
    Rng rng(96);
    auto records = random_records(rng, 1000);
    for (const auto& p : det_sweep(records)) {
        auto [pm, pf] = brute_rates(records, p.threshold);
        CHECK(p.pmiss == pm);
        CHECK(p.pfa == pf);
    }
}

TEST_CASE("det sweep rejects single-class input") {
    std::vector<ScoreRecord> only_bona = {{"a", 0.5, Key::Bonafide}, {"b", 0.2, Key::Bonafide}};
    CHECK_THROWS_AS(det_sweep(only_bona), std::invalid_argument);
    std::vector<ScoreRecord> empty;
    CHECK_THROWS_AS(det_sweep(empty), std::invalid_argument);
}

TEST_CASE("eer examples") {
    CHECK(compute_eer(make_records({0.9, 0.8}, {0.7, 0.1})).eer == 0.0);
    CHECK(compute_eer(make_records({0.9, 0.8, 0.2}, {0.7, 0.1, 0.05})).eer ==
          doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("label swap ruins a perfect detector; score negation restores it") {
    auto records = make_records({0.9, 0.8}, {0.1, 0.2});
    CHECK(compute_eer(records).eer == 0.0);
    auto swapped = records;
    for (auto& r : swapped) r.key = r.key == Key::Bonafide ? Key::Spoof : Key::Bonafide;
    CHECK(compute_eer(swapped).eer >= 0.5);
    auto negated = swapped;
    for (auto& r : negated) r.score = -r.score;
    CHECK(compute_eer(negated).eer == 0.0);
}

TEST_CASE("eer matches the brute-force sweep and is orientation-bounded") {
    Rng rng(91);
    for (int rep = 0; rep < 50; ++rep) {
        auto records = random_records(rng, 3 + rng.uniform_int(40));
        CHECK(compute_eer(records).eer == doctest::Approx(brute_eer(records)).epsilon(1e-12));
        // without interpolation the midpoint EER can exceed 1/2 by at most
        // half an empirical grid step, whatever the orientation
        double nb = 0, ns = 0;
        for (const auto& r : records) (r.key == Key::Bonafide ? nb : ns) += 1;
        auto negated = records;
        for (auto& r : negated) r.score = -r.score;
        const double slack = 0.5 * std::max(1.0 / nb, 1.0 / ns);
        CHECK(std::min(compute_eer(records).eer, compute_eer(negated).eer) <= 0.5 + slack + 1e-12);
    }
}

TEST_CASE("orientation-optimal eer is at most 1/2 on balanced untied scores") {
    Rng rng(95);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 1 + rng.uniform_int(20);
        std::vector<ScoreRecord> records;
        for (std::size_t i = 0; i < n; ++i) {
            records.push_back({"b" + std::to_string(i), rng.uniform(-3, 3), Key::Bonafide});
            records.push_back({"s" + std::to_string(i), rng.uniform(-3, 3), Key::Spoof});
        }
        auto negated = records;
        for (auto& r : negated) r.score = -r.score;
        CHECK(std::min(compute_eer(records).eer, compute_eer(negated).eer) <= 0.5 + 1e-12);
    }
}

TEST_CASE("eer is invariant under strictly increasing score transforms") {
    Rng rng(92);
    auto records = random_records(rng, 30);
    const double base = compute_eer(records).eer;
    auto affine = records;
    for (auto& r : affine) r.score = 3.0 * r.score + 11.0;
    CHECK(compute_eer(affine).eer == base);
    auto expd = records;
    for (auto& r : expd) r.score = std::exp(r.score);
    CHECK(compute_eer(expd).eer == base);
}

TEST_CASE("min t-DCF examples") {
    auto perfect = make_records({0.9, 0.8}, {0.1, 0.2});
    CHECK(compute_min_tdcf(perfect, {0.3, 1.0, 2.0}) == doctest::Approx(0.3).epsilon(1e-15));
    auto degenerate = make_records({0.5, 0.5}, {0.5});
    CHECK(compute_min_tdcf(degenerate, {0.0, 1.0, 1.0}) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("min t-DCF matches brute force, bounds and monotonicity hold") {
    Rng rng(93);
    for (int rep = 0; rep < 40; ++rep) {
        auto records = random_records(rng, 3 + rng.uniform_int(30));
        CostCoefficients cc{rng.uniform(0, 1), rng.uniform(0.1, 2), rng.uniform(0.1, 2)};
        const double v = compute_min_tdcf(records, cc);
        CHECK(v == doctest::Approx(brute_min_tdcf(records, cc)).epsilon(1e-12));
        CHECK(v >= cc.c0 - 1e-15);
        CHECK(v <= cc.c0 + std::min(cc.c1, cc.c2) + 1e-12);
        CostCoefficients bigger{cc.c0, cc.c1 + 0.5, cc.c2};
        CHECK(compute_min_tdcf(records, bigger) >= v - 1e-12);
        // invariance under a strictly increasing transform
        auto scaled = records;
        for (auto& r : scaled) r.score = 2.0 * r.score + 1.0;
        CHECK(compute_min_tdcf(scaled, cc) == doctest::Approx(v).epsilon(1e-12));
    }
}

TEST_CASE("min t-DCF on the example sweep with (0, 0.5, 2.0)") {
    Rng rng(94);
    auto records = random_records(rng, 8);
    CostCoefficients cc{0.0, 0.5, 2.0};
    CHECK(compute_min_tdcf(records, cc) ==
          doctest::Approx(brute_min_tdcf(records, cc)).epsilon(1e-12));
}

TEST_CASE("cost coefficient validation") {
    auto records = make_records({1.0}, {0.0});
    CHECK_THROWS_AS(compute_min_tdcf(records, {0.1, 0.0, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(compute_min_tdcf(records, {-0.1, 1.0, 1.0}), std::invalid_argument);
}

TEST_CASE("best/avg aggregation") {
    auto ba = best_avg({2.0, 1.0, 3.0});
    CHECK(ba.best == 1.0);
    CHECK(ba.avg == 2.0);
    auto single = best_avg({0.42});
    CHECK(single.best == 0.42);
    CHECK(single.avg == 0.42);
    // five checkpoint EERs, hand computation
    auto five = best_avg({1.19, 1.27, 2.08, 2.88, 4.65});
    CHECK(five.best == 1.19);
    CHECK(five.avg == doctest::Approx((1.19 + 1.27 + 2.08 + 2.88 + 4.65) / 5.0).epsilon(1e-15));
    CHECK_THROWS_AS(best_avg({}), std::invalid_argument);
}

TEST_CASE("score file format and parse roundtrip") {
    std::vector<ScoreEntry> entries{{"utt_a", 1.25}, {"utt_b", -0.333333}, {"utt_c", 2.0}};
    const std::string text = format_score_file(entries);
    CHECK(text == "utt_a 1.250000\nutt_b -0.333333\nutt_c 2.000000\n");
    auto parsed = parse_score_file(text, "mem");
    REQUIRE(parsed.size() == 3);
    CHECK(parsed[1].utt_id == "utt_b");
    CHECK(parsed[1].score == doctest::Approx(-0.333333));
    CHECK_THROWS_AS(parse_score_file("bad_line_without_score\n", "mem"), io_error);
    CHECK_THROWS_AS(parse_score_file("utt notanumber\n", "mem"), io_error);
}

TEST_CASE("score records validation") {
    std::vector<ScoreRecord> bad = {{"", 0.5, Key::Bonafide}, {"s", 0.1, Key::Spoof}};
    CHECK_THROWS_AS(det_sweep(bad), std::invalid_argument);
    std::vector<ScoreRecord> nan = {{"a", std::nan(""), Key::Bonafide}, {"s", 0.1, Key::Spoof}};
    CHECK_THROWS_AS(det_sweep(nan), std::invalid_argument);
}
