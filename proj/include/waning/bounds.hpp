#pragma once

// Challenge-effect bounds. VE1^challenge is point identified as 1 - IR1. For
// period 2 only an upper bound is available; given the probability p12 of
// period-2 exposure among those exposed and event-free in period 1 it is
//
//   UB(p12) = 1 - r2_vaccine / (r2_placebo + p12 * r1_placebo),
//
// where r_k^a is the arm-a period-k incidence. UB(1) is the bound that needs
// no exposure knowledge.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "waning/errors.hpp"
#include "waning/format.hpp"
#include "waning/normal.hpp"
#include "waning/resample.hpp"
#include "waning/trial_data.hpp"
#include "waning/waning_test.hpp"

namespace waning {

enum class BoundCiMethod { delta, bootstrap };

constexpr std::string_view to_string(BoundCiMethod m) { return m == BoundCiMethod::delta ? "delta" : "bootstrap"; }

struct BoundResult {
    double p12 = 0.0;
    double upper_bound = 1.0;
    double ci_upper_onesided = 1.0;
    double alpha = 0.05;
    BoundCiMethod ci_method = BoundCiMethod::delta;
    bool approximate = false; // rates are per person-time, not proportions
};

inline double ve1_challenge(const TrialSummary& s) { return 1.0 - incidence_ratio(s, Period::first); }

namespace detail {

inline void check_p12(double p12) {
    if (!(p12 >= 0.0 && p12 <= 1.0)) throw Error(ErrorKind::DomainError, "p12 must lie in [0, 1]");
}

struct BoundRates {
    double r1_placebo;
    double r2_placebo;
    double r2_vaccine;
};

inline std::optional<double> upper_bound(const BoundRates& r, double p12) {
    const double denom = r.r2_placebo + p12 * r.r1_placebo;
    if (!(denom > 0.0)) return std::nullopt;
    return 1.0 - r.r2_vaccine / denom;
}

inline BoundRates bound_rates(const TrialSummary& s) {
    return {s.rate(Arm::placebo, Period::first), s.rate(Arm::placebo, Period::second),
            s.rate(Arm::vaccine, Period::second)};
}

inline BoundRates bound_rates(const CellTable& t) {
    const auto n0 = static_cast<double>(t.arm_size(Arm::placebo));
    const auto n1 = static_cast<double>(t.arm_size(Arm::vaccine));
    if (n0 == 0.0 || n1 == 0.0) return {0.0, 0.0, 0.0};
    return {static_cast<double>(t.at(Arm::placebo, Outcome::period1)) / n0,
            static_cast<double>(t.at(Arm::placebo, Outcome::period2)) / n0,
            static_cast<double>(t.at(Arm::vaccine, Outcome::period2)) / n1};
}

// One-sided upper limit from the delta method on
// log(r2_vaccine) - log(r2_placebo + p12 * r1_placebo), treating the three
// rates as independent.
inline double delta_upper_limit(const TrialSummary& s, double p12, double alpha) {
    const BoundRates r = bound_rates(s);
    const double m2_1 = static_cast<double>(s.events(Arm::vaccine, Period::second));
    if (m2_1 == 0.0) return 1.0;
    const double denom = r.r2_placebo + p12 * r.r1_placebo;

    double var_log_numerator;
    double var_denom;
    if (s.mode() == Mode::count) {
        const auto n0 = static_cast<double>(s.n(Arm::placebo));
        const auto n1 = static_cast<double>(s.n(Arm::vaccine));
        var_log_numerator = 1.0 / m2_1 - 1.0 / n1;
        var_denom = r.r2_placebo * (1.0 - r.r2_placebo) / n0 + p12 * p12 * r.r1_placebo * (1.0 - r.r1_placebo) / n0;
    } else {
        var_log_numerator = 1.0 / m2_1;
        const double pt10 = s.denominator(Arm::placebo, Period::first);
        const double pt20 = s.denominator(Arm::placebo, Period::second);
        var_denom = r.r2_placebo / pt20 + p12 * p12 * r.r1_placebo / pt10;
    }
    const double se = std::sqrt(var_log_numerator + var_denom / (denom * denom));
    const double log_ratio = std::log(r.r2_vaccine) - std::log(denom);
    return 1.0 - std::exp(log_ratio - normal::quantile(1.0 - alpha) * se);
}

} // namespace detail

inline double ve2_upper_bound(const TrialSummary& s, double p12) {
    detail::check_p12(p12);
    const auto ub = detail::upper_bound(detail::bound_rates(s), p12);
    if (!ub) {
        throw Error(ErrorKind::ZeroEvents, "placebo arm has no events in the periods entering the bound denominator");
    }
    return *ub;
}

// Bound curve over a sorted p12 grid with one-sided (1 - alpha) upper
// confidence limits: percentile bootstrap over `records` when given,
// otherwise the delta method on the summary.
inline std::vector<BoundResult> ve2_bound_curve(const TrialSummary& s, std::span<const double> grid, double alpha,
                                                const BootstrapOptions& options,
                                                std::optional<std::span<const IndividualRecord>> records = std::nullopt) {
    if (grid.empty()) throw Error(ErrorKind::DomainError, "p12 grid is empty");
    if (!std::is_sorted(grid.begin(), grid.end())) throw Error(ErrorKind::DomainError, "p12 grid must be sorted ascending");
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::DomainError, "alpha must lie in (0, 1)");

    std::vector<BoundResult> curve;
    curve.reserve(grid.size());
    for (double p12 : grid) {
        BoundResult b;
        b.p12 = p12;
        b.alpha = alpha;
        b.upper_bound = ve2_upper_bound(s, p12);
        b.approximate = s.mode() == Mode::person_time;
        curve.push_back(b);
    }

    if (!records) {
        for (auto& b : curve) b.ci_upper_onesided = detail::delta_upper_limit(s, b.p12, alpha);
        return curve;
    }

    if (records->empty()) throw Error(ErrorKind::EmptyInput, "no individual records");
    const std::vector<double> points(grid.begin(), grid.end());
    auto draws = bootstrap_draws(tally(*records), options, [&](const CellTable& t) -> std::optional<std::vector<double>> {
        const detail::BoundRates r = detail::bound_rates(t);
        std::vector<double> values;
        values.reserve(points.size());
        for (double p12 : points) {
            const auto ub = detail::upper_bound(r, p12);
            if (!ub) return std::nullopt;
            values.push_back(*ub);
        }
        return values;
    });
    std::vector<double> column(draws.values.size());
    for (std::size_t g = 0; g < curve.size(); ++g) {
        for (std::size_t i = 0; i < draws.values.size(); ++i) column[i] = draws.values[i][g];
        std::sort(column.begin(), column.end());
        curve[g].ci_upper_onesided = quantile_sorted(column, 1.0 - alpha);
        curve[g].ci_method = BoundCiMethod::bootstrap;
    }
    return curve;
}

inline std::string bound_curve_csv(std::span<const BoundResult> curve) {
    std::ostringstream out;
    out << "p12,upper_bound,ci_upper\n";
    for (const auto& b : curve) {
        out << format_double(b.p12) << ',' << format_double(b.upper_bound) << ',' << format_double(b.ci_upper_onesided)
            << '\n';
    }
    return out.str();
}

} // namespace waning
