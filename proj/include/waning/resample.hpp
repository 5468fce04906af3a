#pragma once

// Non-parametric bootstrap over two-period trial records.
//
// Drawing n records with replacement from a record set and tallying them is
// the same in distribution as one multinomial draw over the six
// (arm, outcome) cells with the observed cell frequencies, so resampling is
// done on the cell table directly. Stratified resampling draws each arm's
// three cells separately with the arm size held fixed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <type_traits>
#include <vector>

#include "waning/errors.hpp"
#include "waning/parallel.hpp"
#include "waning/rng.hpp"
#include "waning/trial_data.hpp"

namespace waning {

enum class ResampleScheme { pooled, stratified_by_arm };

struct BootstrapOptions {
    std::int64_t replicates = 2000;
    std::uint64_t seed = 0;
    ResampleScheme scheme = ResampleScheme::pooled;
    int max_attempts_per_replicate = 100;
    Parallelism parallelism{};
};

// Conditional-binomial multinomial sampler. The last category with positive
// probability absorbs the remainder, so zero-probability cells stay empty.
inline void sample_multinomial(rng::Stream& stream, std::int64_t trials, std::span<const double> probs,
                               std::span<std::int64_t> out) {
    std::fill(out.begin(), out.end(), 0);
    std::size_t last = probs.size();
    for (std::size_t k = 0; k < probs.size(); ++k)
        if (probs[k] > 0.0) last = k;
    if (last == probs.size()) return;

    double remaining_mass = 1.0;
    std::int64_t remaining = trials;
    for (std::size_t k = 0; k < last && remaining > 0; ++k) {
        if (probs[k] > 0.0) {
            const double p = std::clamp(probs[k] / remaining_mass, 0.0, 1.0);
            out[k] = p >= 1.0 ? remaining : std::binomial_distribution<std::int64_t>(remaining, p)(stream);
            remaining -= out[k];
        }
        remaining_mass -= probs[k];
    }
    out[last] = remaining;
}

inline CellTable resample_cells(const CellTable& observed, rng::Stream& stream, ResampleScheme scheme) {
    CellTable draw;
    if (scheme == ResampleScheme::pooled) {
        const auto total = static_cast<double>(observed.total());
        std::array<double, 6> probs{};
        for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t o = 0; o < 3; ++o) probs[a * 3 + o] = static_cast<double>(observed.cells[a][o]) / total;
        std::array<std::int64_t, 6> counts{};
        sample_multinomial(stream, observed.total(), probs, counts);
        for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t o = 0; o < 3; ++o) draw.cells[a][o] = counts[a * 3 + o];
        return draw;
    }
    for (Arm arm : {Arm::placebo, Arm::vaccine}) {
        const std::int64_t n = observed.arm_size(arm);
        if (n == 0) continue;
        std::array<double, 3> probs{};
        for (std::size_t o = 0; o < 3; ++o) {
            probs[o] = static_cast<double>(observed.cells[index(arm)][o]) / static_cast<double>(n);
        }
        sample_multinomial(stream, n, probs, draw.cells[index(arm)]);
    }
    return draw;
}

// Linear-interpolation sample quantile (Hyndman-Fan type 7) of sorted data.
inline double quantile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw Error(ErrorKind::EmptyInput, "quantile of an empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * std::clamp(q, 0.0, 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct PercentileInterval {
    double low;
    double high;
};

inline PercentileInterval percentile_interval(std::span<const double> sorted, double alpha) {
    return {quantile_sorted(sorted, alpha / 2.0), quantile_sorted(sorted, 1.0 - alpha / 2.0)};
}

// Smallest level on the 0.001 grid at which the percentile interval excludes
// `null_value`; 1 when no grid level does.
inline double percentile_pvalue(std::span<const double> sorted, double null_value = 1.0) {
    for (int k = 1; k <= 1000; ++k) {
        const double level = k / 1000.0;
        const auto ci = percentile_interval(sorted, level);
        if (ci.low > null_value || ci.high < null_value) return level;
    }
    return 1.0;
}

template <class T>
struct BootstrapDraws {
    std::vector<T> values; // indexed by replicate
    std::int64_t rejected = 0;
};

// Draws `replicates` resamples; `statistic` returns an empty optional for a
// resample that must be rejected (e.g. a zero cell), which is then redrawn
// from the same replicate stream. Replicate i always uses stream (seed, i).
template <class Statistic>
auto bootstrap_draws(const CellTable& observed, const BootstrapOptions& options, Statistic&& statistic) {
    using Value = typename std::invoke_result_t<Statistic&, const CellTable&>::value_type;
    if (options.replicates < 1) {
        throw Error(ErrorKind::PreconditionViolation, "bootstrap replicate count must be at least 1");
    }
    if (observed.total() == 0) throw Error(ErrorKind::EmptyInput, "no records to resample");

    const auto count = static_cast<std::size_t>(options.replicates);
    BootstrapDraws<Value> draws;
    draws.values.resize(count);
    std::vector<std::int64_t> rejections(count, 0);
    std::vector<char> failed(count, 0);

    parallel_for(count, options.parallelism, [&](std::size_t i) {
        rng::Stream stream(options.seed, {0x626f6f74ULL, static_cast<std::uint64_t>(i)});
        for (int attempt = 0; attempt < options.max_attempts_per_replicate; ++attempt) {
            const CellTable draw = resample_cells(observed, stream, options.scheme);
            if (auto value = statistic(draw)) {
                draws.values[i] = std::move(*value);
                return;
            }
            ++rejections[i];
        }
        failed[i] = 1;
    });

    for (std::size_t i = 0; i < count; ++i) draws.rejected += rejections[i];
    const bool any_failed = std::find(failed.begin(), failed.end(), 1) != failed.end();
    if (any_failed || draws.rejected > options.replicates) {
        throw Error(ErrorKind::DegenerateResampling,
                    std::to_string(draws.rejected) + " resamples rejected for " +
                        std::to_string(options.replicates) + " accepted (limit: 50% of draws)");
    }
    return draws;
}

struct BootstrapSample {
    std::vector<double> sorted_statistics;
    std::int64_t rejected = 0;
};

template <class Statistic>
BootstrapSample bootstrap_statistics(const CellTable& observed, const BootstrapOptions& options, Statistic&& statistic) {
    auto draws = bootstrap_draws(observed, options, statistic);
    std::sort(draws.values.begin(), draws.values.end());
    return {std::move(draws.values), draws.rejected};
}

} // namespace waning
