#include <cmath>
#include <random>

#include <catch_amalgamated.hpp>

#include "waning/strata_sim.hpp"
#include "waning/stratified.hpp"

using namespace waning;
using Catch::Approx;

namespace {

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an Error");
    return ErrorKind::PreconditionViolation;
}

TrialSummary hpylori() {
    return TrialSummary::person_time(ArmCounts{0, {36, 1416.0}, {14, 673.6}}, ArmCounts{0, {10, 1403.6}, {4, 670.7}});
}

// Oracle: adjusted p-values by direct definition, min over j >= i of the step-up term.
std::vector<double> adjust_oracle(const std::vector<double>& p, bool bh) {
    const std::size_t m = p.size();
    std::vector<double> out(m);
    for (std::size_t i = 0; i < m; ++i) {
        // rank of p[i] (1-based), ties broken by index
        std::size_t rank = 1;
        for (std::size_t k = 0; k < m; ++k)
            if (p[k] < p[i] || (p[k] == p[i] && k < i)) ++rank;
        double best = 1.0;
        for (std::size_t j = 0; j < m; ++j) {
            std::size_t rj = 1;
            for (std::size_t k = 0; k < m; ++k)
                if (p[k] < p[j] || (p[k] == p[j] && k < j)) ++rj;
            if (rj < rank) continue;
            const double factor = bh ? static_cast<double>(m) / rj : static_cast<double>(m - rj + 1);
            best = std::min(best, p[j] * factor);
        }
        out[i] = best;
    }
    return out;
}

} // namespace

TEST_CASE("Benjamini-Hochberg example", "[stratified]") {
    const std::vector<double> p{0.01, 0.04, 0.03, 0.005};
    const auto adj = adjust_pvalues(p, PAdjust::benjamini_hochberg);
    REQUIRE(adj.size() == 4);
    CHECK(adj[0] == Approx(0.02));
    CHECK(adj[1] == Approx(0.04));
    CHECK(adj[2] == Approx(0.04));
    CHECK(adj[3] == Approx(0.02));
    const std::vector<double> one{0.3};
    CHECK(adjust_pvalues(one, PAdjust::benjamini_hochberg) == one);
    CHECK(adjust_pvalues(one, PAdjust::hochberg_simes) == one);
    const std::vector<double> ones(5, 1.0);
    CHECK(adjust_pvalues(ones, PAdjust::benjamini_hochberg) == ones);
    CHECK(adjust_pvalues(ones, PAdjust::hochberg_simes) == ones);
    CHECK(kind_of([] { adjust_pvalues(std::vector<double>{0.1, 1.2}, PAdjust::benjamini_hochberg); }) ==
          ErrorKind::DomainError);
    CHECK(kind_of([] { adjust_pvalues(std::vector<double>{NAN}, PAdjust::hochberg_simes); }) == ErrorKind::DomainError);
}

TEST_CASE("adjusted p-values match the oracle and keep their properties", "[stratified][property]") {
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> p(1 + gen() % 12);
        for (auto& x : p) x = (gen() % 5 == 0) ? std::round(u(gen) * 10) / 10 : u(gen) * u(gen);
        for (bool bh : {true, false}) {
            const auto adj = adjust_pvalues(p, bh ? PAdjust::benjamini_hochberg : PAdjust::hochberg_simes);
            const auto oracle = adjust_oracle(p, bh);
            for (std::size_t i = 0; i < p.size(); ++i) {
                CHECK(adj[i] == Approx(oracle[i]).epsilon(1e-12));
                CHECK(adj[i] >= p[i]);
                CHECK(adj[i] <= 1.0);
                for (std::size_t j = 0; j < p.size(); ++j)
                    if (p[i] <= p[j]) CHECK(adj[i] <= adj[j]);
            }
        }
    }
}

TEST_CASE("per-stratum tests", "[stratified]") {
    const TrialSummary s = TrialSummary::counts(2000, 60, 40, 2000, 30, 25);
    const StratifiedSummary two({{"a", s}, {"b", s}});
    const auto results = per_stratum_tests(two, Method::direct_delta, 0.05);
    REQUIRE(results.size() == 2);
    CHECK(results[0].label == "a");
    CHECK(*results[0].result == *results[1].result);

    const StratifiedSummary one({{"hp", hpylori()}});
    const auto hp = per_stratum_tests(one, Method::direct_delta, 0.05);
    CHECK(hp[0].result->estimate == Approx(0.977).margin(0.005));
    CHECK(*hp[0].result->p_value == Approx(0.97).margin(0.01));

    const StratifiedSummary mixed({{"ok", s}, {"zero", TrialSummary::counts(100, 5, 0, 100, 3, 2)}, {"ok2", s}});
    const auto r = per_stratum_tests(mixed, Method::direct_delta, 0.05, {}, Parallelism{3});
    CHECK_FALSE(r[0].degenerate());
    CHECK(r[1].degenerate());
    CHECK_FALSE(r[1].degenerate_reason.empty());
    CHECK(*r[2].result == *r[0].result);
}

TEST_CASE("stratified summaries are validated", "[stratified]") {
    const TrialSummary s = TrialSummary::counts(100, 5, 5, 100, 5, 5);
    CHECK(kind_of([] { StratifiedSummary({}); }) == ErrorKind::EmptyInput);
    CHECK(kind_of([&] { StratifiedSummary({{"a", s}, {"a", s}}); }) == ErrorKind::MalformedInput);
    CHECK(kind_of([&] { StratifiedSummary({{"a", s}, {"b", hpylori()}}); }) == ErrorKind::InvalidCounts);
    const std::string doc = R"({"strata":{"z":)" + serialize_summary(s) + R"(,"a":)" + serialize_summary(s) + "}}";
    const StratifiedSummary parsed = parse_stratified(doc);
    CHECK(parsed.strata()[0].first == "z");
    CHECK(parse_stratified(to_json(parsed).dump()).strata() == parsed.strata());
    const std::string dup = R"({"strata":{"a":)" + serialize_summary(s) + R"(,"a":)" + serialize_summary(s) + "}}";
    CHECK(kind_of([&] { parse_stratified(dup); }) == ErrorKind::MalformedInput);
    CHECK(kind_of([] { parse_stratified(R"({"strata":[]})"); }) == ErrorKind::MalformedInput);
}

TEST_CASE("pooled test", "[stratified]") {
    const TrialSummary s = TrialSummary::counts(2000, 60, 40, 2000, 30, 25);
    const TestResult single = pooled_test(StratifiedSummary({{"only", s}}), Method::direct_delta, 0.05);
    TestResult direct = ir_ratio_test(s, Method::direct_delta, 0.05);
    CHECK(single.estimate == direct.estimate);
    CHECK(single.ci_low == direct.ci_low);
    CHECK(*single.p_value == *direct.p_value);

    // IR1 = IR2 = 0.5 in both strata.
    const StratifiedSummary null_strata({{"low", TrialSummary::counts(1000, 20, 10, 1000, 10, 5)},
                                         {"high", TrialSummary::counts(1000, 80, 40, 1000, 40, 20)}});
    CHECK(pooled_test(null_strata, Method::direct_delta, 0.05).estimate == 1.0);

    // Common IR1 = 0.65, IR2 = 0.5, so IR1/IR2 = 1.3, different baseline risks, 1:2 allocation.
    const StratifiedSummary prop({{"low", TrialSummary::counts(1000, 20, 40, 2000, 26, 40)},
                                  {"high", TrialSummary::counts(3000, 300, 120, 6000, 390, 120)}});
    const TestResult pooled = pooled_test(prop, Method::direct_delta, 0.05);
    CHECK(pooled.estimate == Approx(1.3).epsilon(1e-12));
    CHECK(std::find(pooled.notes.begin(), pooled.notes.end(), "non_proportional_allocation") == pooled.notes.end());

    const StratifiedSummary nonprop({{"low", TrialSummary::counts(1000, 20, 40, 1000, 13, 20)},
                                     {"high", TrialSummary::counts(3000, 300, 120, 6000, 390, 120)}});
    const TestResult flagged = pooled_test(nonprop, Method::direct_delta, 0.05);
    CHECK(std::find(flagged.notes.begin(), flagged.notes.end(), "non_proportional_allocation") != flagged.notes.end());

    CHECK(kind_of([] {
              pooled_test(StratifiedSummary({{"a", TrialSummary::counts(100, 5, 0, 100, 3, 0)}}), Method::direct_delta,
                          0.05);
          }) == ErrorKind::ZeroEvents);
}

TEST_CASE("pooling K scaled copies reproduces the original test", "[stratified][property]") {
    std::mt19937_64 gen(9);
    for (int trial = 0; trial < 200; ++trial) {
        const std::int64_t K = 1 + static_cast<std::int64_t>(gen() % 5);
        auto draw = [&](std::int64_t lo, std::int64_t hi) { return K * (lo + static_cast<std::int64_t>(gen() % (hi - lo))); };
        const std::int64_t n0 = draw(100, 1000), n1 = draw(100, 1000);
        const TrialSummary whole =
            TrialSummary::counts(n0, draw(1, 30), draw(1, 30), n1, draw(1, 30), draw(1, 30));
        const TrialSummary part = TrialSummary::counts(
            n0 / K, whole.events(Arm::placebo, Period::first) / K, whole.events(Arm::placebo, Period::second) / K,
            n1 / K, whole.events(Arm::vaccine, Period::first) / K, whole.events(Arm::vaccine, Period::second) / K);
        std::vector<StratifiedSummary::Entry> copies;
        for (std::int64_t k = 0; k < K; ++k) copies.emplace_back("s" + std::to_string(k), part);
        const TestResult pooled = pooled_test(StratifiedSummary(copies), Method::conservative_delta, 0.05);
        const TestResult direct = ir_ratio_test(whole, Method::conservative_delta, 0.05);
        CHECK(pooled.estimate == Approx(direct.estimate).epsilon(1e-12));
        CHECK(*pooled.log_se == Approx(*direct.log_se).epsilon(1e-12));
        CHECK(*pooled.p_value == Approx(*direct.p_value).margin(1e-12));
    }
}

TEST_CASE("strata from a records table keep first-appearance order", "[stratified]") {
    RecordTable t;
    t.records = {{Arm::placebo, Outcome::period1}, {Arm::vaccine, Outcome::none}, {Arm::vaccine, Outcome::period2}};
    t.strata = {"old", "young", "old"};
    const StratifiedSummary s = stratify_records(t);
    REQUIRE(s.size() == 2);
    CHECK(s.strata()[0].first == "old");
    CHECK(s.strata()[0].second == TrialSummary::counts(1, 1, 0, 1, 0, 1));
    t.strata.clear();
    CHECK(kind_of([&] { stratify_records(t); }) == ErrorKind::MalformedInput);
}

TEST_CASE("stratified CSV report", "[stratified]") {
    const TrialSummary s = TrialSummary::counts(2000, 60, 40, 2000, 30, 25);
    const StratifiedSummary strata({{"a", s}, {"b,c", TrialSummary::counts(100, 5, 0, 100, 3, 2)}});
    const std::string csv = stratified_csv(stratified_analysis(strata, Method::direct_delta, 0.05));
    CHECK(csv.starts_with("stratum,status,estimate,ci_low,ci_high,p_value,p_bh,p_hochberg,notes\na,ok,"));
    CHECK(csv.find("\n\"b,c\",degenerate,NA,") != std::string::npos);
    CHECK(csv.find("\npooled,ok,") != std::string::npos);
}

TEST_CASE("BH controls the false discovery rate under the global null", "[stratified][montecarlo]") {
    constexpr int reps = 1000;
    constexpr double alpha = 0.05;
    int any_rejection = 0;
    for (int rep = 0; rep < reps; ++rep) {
        std::vector<StratifiedSummary::Entry> strata;
        for (int k = 0; k < 5; ++k) {
            SimConfig c;
            c.n = 2000;
            c.dist = StratumDist(0.1 + 0.05 * k, 0.5, 0.1, 0.3 - 0.05 * k);
            c.p_e1 = c.p_e2 = 0.5;
            c.seed = rng::derive_key(2024, {static_cast<std::uint64_t>(rep), static_cast<std::uint64_t>(k)});
            strata.emplace_back("s" + std::to_string(k), aggregate(simulate_trial(c, Parallelism{1})));
        }
        const auto report = stratified_analysis(StratifiedSummary(std::move(strata)), Method::direct_delta, alpha);
        bool rejected = false;
        for (const auto& p : report.p_bh) rejected = rejected || (p && *p <= alpha);
        any_rejection += rejected;
    }
    // Every rejection is false here, so FDR equals the family-wise rejection rate.
    CHECK(static_cast<double>(any_rejection) / reps <= alpha + 0.02);
}
