#include <cmath>
#include <random>

#include <catch_amalgamated.hpp>

#include "waning/bounds.hpp"
#include "waning/strata_sim.hpp"

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

// r1 placebo = 0.02, r2 placebo = 0.01, r2 vaccine = 0.003.
TrialSummary synthetic() { return TrialSummary::counts(10000, 200, 100, 10000, 80, 30); }

TrialSummary hpylori() {
    return TrialSummary::person_time(ArmCounts{0, {36, 1416.0}, {14, 673.6}}, ArmCounts{0, {10, 1403.6}, {4, 670.7}});
}

} // namespace

TEST_CASE("period-1 challenge effect", "[bounds]") {
    CHECK(ve1_challenge(TrialSummary::counts(100, 20, 0, 100, 10, 0)) == Approx(0.5));
    CHECK(ve1_challenge(hpylori()) == Approx(1 - (10 / 1403.6) / (36 / 1416.0)).epsilon(1e-14));
    CHECK(ve1_challenge(hpylori()) == Approx(0.72).margin(0.005));
    CHECK(ve1_challenge(TrialSummary::counts(100, 10, 0, 100, 20, 0)) == Approx(-1.0));
    CHECK(kind_of([] { ve1_challenge(TrialSummary::counts(100, 0, 5, 100, 3, 0)); }) == ErrorKind::ZeroEvents);
}

TEST_CASE("upper bound on the period-2 challenge effect", "[bounds]") {
    const TrialSummary s = synthetic();
    CHECK(ve2_upper_bound(s, 0.5) == Approx(0.85).epsilon(1e-12));
    CHECK(ve2_upper_bound(s, 1.0) == Approx(0.90).epsilon(1e-12));
    CHECK(ve2_upper_bound(s, 1.0) == Approx(1 - 0.003 / (0.02 + 0.01)).epsilon(1e-12));
    CHECK(ve2_upper_bound(s, 0.0) == Approx(1 - incidence_ratio(s, Period::second)).epsilon(1e-12));
    CHECK(kind_of([&] { ve2_upper_bound(s, 1.1); }) == ErrorKind::DomainError);
    CHECK(kind_of([&] { ve2_upper_bound(s, -0.1); }) == ErrorKind::DomainError);
    CHECK(kind_of([] { ve2_upper_bound(TrialSummary::counts(100, 0, 0, 100, 0, 1), 0.5); }) == ErrorKind::ZeroEvents);
}

TEST_CASE("bound curve", "[bounds]") {
    const std::vector<double> grid{0.0, 0.5, 1.0};
    const auto curve = ve2_bound_curve(synthetic(), grid, 0.05, BootstrapOptions{});
    REQUIRE(curve.size() == 3);
    CHECK(curve[0].upper_bound == Approx(0.70).epsilon(1e-12));
    CHECK(curve[1].upper_bound == Approx(0.85).epsilon(1e-12));
    CHECK(curve[2].upper_bound == Approx(0.90).epsilon(1e-12));
    for (const auto& b : curve) {
        CHECK(b.ci_upper_onesided >= b.upper_bound);
        CHECK(b.ci_upper_onesided <= 1.0);
        CHECK(b.ci_method == BoundCiMethod::delta);
    }
    const std::vector<double> one{1.0};
    CHECK(ve2_bound_curve(synthetic(), one, 0.05, BootstrapOptions{})[0].upper_bound == ve2_upper_bound(synthetic(), 1.0));
    const std::vector<double> unsorted{0.5, 0.1};
    CHECK(kind_of([&] { ve2_bound_curve(synthetic(), unsorted, 0.05, BootstrapOptions{}); }) == ErrorKind::DomainError);
    CHECK(kind_of([&] { ve2_bound_curve(synthetic(), std::vector<double>{}, 0.05, BootstrapOptions{}); }) ==
          ErrorKind::DomainError);
    CHECK(bound_curve_csv(curve).starts_with("p12,upper_bound,ci_upper\n0,0.7"));
}

TEST_CASE("delta-method limit matches a hand computation", "[bounds]") {
    const TrialSummary s = synthetic();
    const double r10 = 0.02, r20 = 0.01, r21 = 0.003, n = 10000, p = 0.5;
    const double denom = r20 + p * r10;
    const double var = (1 / 30.0 - 1 / n) + (r20 * (1 - r20) / n + p * p * r10 * (1 - r10) / n) / (denom * denom);
    const double expected = 1 - std::exp(std::log(r21 / denom) - 1.6448536269514722 * std::sqrt(var));
    const std::vector<double> grid{p};
    CHECK(ve2_bound_curve(s, grid, 0.05, BootstrapOptions{})[0].ci_upper_onesided == Approx(expected).epsilon(1e-9));
}

TEST_CASE("bootstrap limits over records are reproducible", "[bounds]") {
    SimConfig c;
    c.n = 20000;
    c.p_e1 = c.p_e2 = 0.5;
    c.seed = 3;
    const auto records = simulate_trial(c);
    const TrialSummary s = aggregate(records);
    const std::vector<double> grid{0.0, 0.25, 0.5, 0.75, 1.0};
    BootstrapOptions opt;
    opt.replicates = 1000;
    opt.seed = 9;
    opt.parallelism = Parallelism{1};
    const auto a = ve2_bound_curve(s, grid, 0.05, opt, std::span<const IndividualRecord>(records));
    opt.parallelism = Parallelism{5};
    const auto b = ve2_bound_curve(s, grid, 0.05, opt, std::span<const IndividualRecord>(records));
    CHECK(bound_curve_csv(a) == bound_curve_csv(b));
    const auto delta = ve2_bound_curve(s, grid, 0.05, opt);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        CHECK(a[i].ci_method == BoundCiMethod::bootstrap);
        CHECK(a[i].ci_upper_onesided >= a[i].upper_bound);
        CHECK(a[i].ci_upper_onesided == Approx(delta[i].ci_upper_onesided).margin(0.03));
    }
}

TEST_CASE("person-time bounds are flagged approximate", "[bounds]") {
    const std::vector<double> grid{0.0, 1.0};
    for (const auto& b : ve2_bound_curve(hpylori(), grid, 0.05, BootstrapOptions{})) CHECK(b.approximate);
    for (const auto& b : ve2_bound_curve(synthetic(), grid, 0.05, BootstrapOptions{})) CHECK_FALSE(b.approximate);
}

TEST_CASE("bound is monotone in p12 with the endpoint identity", "[bounds][property]") {
    std::mt19937_64 gen(31);
    std::vector<double> grid(21);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = static_cast<double>(i) / 20.0;
    for (int trial = 0; trial < 1000; ++trial) {
        ArmCounts a[2];
        for (auto& arm : a) {
            arm.n = 100 + static_cast<std::int64_t>(gen() % 10000);
            arm.p1.events = 1 + static_cast<std::int64_t>(gen() % (arm.n / 2));
            arm.p2.events = 1 + static_cast<std::int64_t>(gen() % (arm.n / 2 - 1));
        }
        const TrialSummary s = TrialSummary::counts(a[0], a[1]);
        double previous = -INFINITY;
        for (double p : grid) {
            const double ub = ve2_upper_bound(s, p);
            CHECK(ub >= previous);
            previous = ub;
        }
        const double r10 = s.rate(Arm::placebo, Period::first);
        const double r20 = s.rate(Arm::placebo, Period::second);
        const double r21 = s.rate(Arm::vaccine, Period::second);
        const double identity = 1 - r21 / (r10 + r20);
        CHECK(std::fabs(ve2_upper_bound(s, 1.0) - identity) <= 1e-12 * std::max(1.0, std::fabs(identity)));
    }
}

TEST_CASE("the bound covers the true period-2 challenge effect", "[bounds][montecarlo]") {
    std::mt19937_64 gen(77);
    std::uniform_real_distribution<double> u(0.1, 0.95);
    int configs = 0;
    while (configs < 20) {
        SimConfig c;
        c.n = 1'000'000;
        const double doomed = 0.05 + 0.2 * u(gen) / 0.95;
        const double helped = 0.1 + 0.4 * u(gen) / 0.95;
        const double harmed = 0.05 * u(gen);
        c.dist = StratumDist(doomed, helped, harmed, 1 - doomed - helped - harmed);
        c.p_e1 = u(gen);
        c.p_e2 = u(gen);
        c.w = 1.0 + 0.5 * (u(gen) - 0.1);
        c.scenario = static_cast<Scenario>(configs % 3);
        if (configs % 4 == 3) c.confounding = ExposureConfounding{u(gen), u(gen)};
        c.seed = 500 + static_cast<std::uint64_t>(configs);
        try {
            transition_rates(c.dist, c.w, c.scenario);
        } catch (const Error&) {
            continue;
        }
        ++configs;
        const PopulationRates truth = population_rates(c);
        const TrialSummary s = aggregate(simulate_trial(c));
        INFO("config " << configs);
        CHECK(truth.ve2_challenge() <= ve2_upper_bound(s, truth.p12) + 0.01);
    }
}
