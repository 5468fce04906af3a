#pragma once

// Monte Carlo rejection rates of the waning tests over grids of sample size,
// exposure probability and waning factor.

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "waning/errors.hpp"
#include "waning/format.hpp"
#include "waning/parallel.hpp"
#include "waning/rng.hpp"
#include "waning/strata_sim.hpp"
#include "waning/trial_data.hpp"
#include "waning/waning_test.hpp"

namespace waning {

struct PowerGrid {
    std::vector<std::int64_t> n_values;
    std::vector<double> exposure_values; // p_e1 = p_e2, or p_e_high when confounded
    std::vector<double> w_values;
    std::vector<Method> methods{Method::direct_delta, Method::conservative_delta, Method::bootstrap};
    Scenario scenario = Scenario::helped_to_doomed;
    int replications = 100;
    double alpha = 0.05;
    std::uint64_t base_seed = 0;
    std::int64_t bootstrap_replicates = 1000;
    double p_treat = 0.5;
    // When set, exposure follows the U_E mechanism with this p_e_low and the
    // grid's exposure value as p_e_high.
    std::optional<double> confounded_p_e_low;
};

struct PowerCell {
    std::int64_t n = 0;
    double exposure = 0.0;
    double w = 1.0;
    Method method = Method::direct_delta;
    double rejection_rate = 0.0; // NaN when every run was degenerate
    int rejections = 0;
    int replications_used = 0;
    int degenerate_runs = 0;
};

namespace detail {

inline void check_grid(const PowerGrid& g) {
    if (g.n_values.empty() || g.exposure_values.empty() || g.w_values.empty() || g.methods.empty()) {
        throw Error(ErrorKind::DomainError, "power grid dimensions must be nonempty");
    }
    if (g.replications < 1) throw Error(ErrorKind::DomainError, "replications must be at least 1");
    check_alpha(g.alpha);
}

enum class RunOutcome : std::uint8_t { accept, reject, degenerate };

inline RunOutcome analyze(Method method, const CellTable& table, double alpha, const BootstrapOptions& boot) {
    try {
        TestResult r;
        switch (method) {
            case Method::direct_delta:
            case Method::conservative_delta: r = ir_ratio_test(table.to_summary(), method, alpha); break;
            case Method::bootstrap: r = bootstrap_ir_test(table, alpha, boot); break;
            case Method::hr_bootstrap: r = hr_ratio_test(table, alpha, boot); break;
        }
        return r.rejects_null() ? RunOutcome::reject : RunOutcome::accept;
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::ZeroEvents || e.kind() == ErrorKind::DegenerateResampling) {
            return RunOutcome::degenerate;
        }
        throw;
    }
}

// Seed of one simulated trial; depends only on the cell coordinates and the
// replicate index.
inline std::uint64_t replicate_seed(std::uint64_t base_seed, std::int64_t n, double exposure, double w, int replicate) {
    return rng::derive_key(base_seed, {static_cast<std::uint64_t>(n), rng::key_of(exposure), rng::key_of(w),
                                       static_cast<std::uint64_t>(replicate)});
}

inline SimConfig cell_config(const PowerGrid& g, const StratumDist& dist, std::int64_t n, double exposure, double w,
                             int replicate) {
    SimConfig c;
    c.n = n;
    c.p_treat = g.p_treat;
    c.dist = dist;
    c.p_e1 = c.p_e2 = exposure;
    c.w = w;
    c.scenario = g.scenario;
    if (g.confounded_p_e_low) c.confounding = ExposureConfounding{exposure, *g.confounded_p_e_low};
    c.seed = replicate_seed(g.base_seed, n, exposure, w, replicate);
    return c;
}

inline std::vector<PowerCell> run_grid(const PowerGrid& g, const StratumDist& dist, std::span<const Method> methods,
                                       Parallelism par) {
    check_grid(g);
    for (double w : g.w_values) transition_rates(dist, w, g.scenario); // fail fast on infeasible w

    struct DataCell {
        std::int64_t n;
        double exposure;
        double w;
    };
    std::vector<DataCell> cells;
    for (auto n : g.n_values)
        for (double e : g.exposure_values)
            for (double w : g.w_values) cells.push_back({n, e, w});

    const std::size_t reps = static_cast<std::size_t>(g.replications);
    const std::size_t m = methods.size();
    std::vector<RunOutcome> outcomes(cells.size() * reps * m);

    parallel_for(cells.size() * reps, par, [&](std::size_t task) {
        const DataCell& cell = cells[task / reps];
        const int replicate = static_cast<int>(task % reps);
        const SimConfig config = cell_config(g, dist, cell.n, cell.exposure, cell.w, replicate);
        const CellTable table = tally(simulate_trial(config, Parallelism{1}));
        for (std::size_t k = 0; k < m; ++k) {
            BootstrapOptions boot;
            boot.replicates = g.bootstrap_replicates;
            boot.seed = rng::derive_key(config.seed, {static_cast<std::uint64_t>(methods[k])});
            boot.parallelism = Parallelism{1};
            outcomes[task * m + k] = analyze(methods[k], table, g.alpha, boot);
        }
    });

    std::vector<PowerCell> result;
    result.reserve(cells.size() * m);
    for (std::size_t c = 0; c < cells.size(); ++c) {
        for (std::size_t k = 0; k < m; ++k) {
            PowerCell pc{cells[c].n, cells[c].exposure, cells[c].w, methods[k]};
            for (std::size_t r = 0; r < reps; ++r) {
                switch (outcomes[(c * reps + r) * m + k]) {
                    case RunOutcome::reject: ++pc.rejections; ++pc.replications_used; break;
                    case RunOutcome::accept: ++pc.replications_used; break;
                    case RunOutcome::degenerate: ++pc.degenerate_runs; break;
                }
            }
            pc.rejection_rate = pc.replications_used > 0
                                    ? static_cast<double>(pc.rejections) / pc.replications_used
                                    : std::numeric_limits<double>::quiet_NaN();
            result.push_back(pc);
        }
    }
    return result;
}

} // namespace detail

inline std::vector<PowerCell> run_power_grid(const PowerGrid& grid, const StratumDist& dist, Parallelism par = {}) {
    for (Method m : grid.methods) {
        if (m == Method::hr_bootstrap) {
            throw Error(ErrorKind::DomainError, "hazard-ratio grids are run with run_hr_power_grid");
        }
    }
    return detail::run_grid(grid, dist, grid.methods, par);
}

inline std::vector<PowerCell> run_hr_power_grid(const PowerGrid& grid, const StratumDist& dist, Parallelism par = {}) {
    const Method hr[] = {Method::hr_bootstrap};
    return detail::run_grid(grid, dist, hr, par);
}

inline std::string emit_table(std::span<const PowerCell> cells) {
    if (cells.empty()) throw Error(ErrorKind::EmptyInput, "no power cells to emit");
    std::ostringstream out;
    out << "n,exposure,w,method,rejection_rate,reps,degenerate\n";
    for (const auto& c : cells) {
        out << c.n << ',' << format_double(c.exposure) << ',' << format_double(c.w) << ',' << to_string(c.method) << ','
            << format_double(c.rejection_rate) << ',' << c.replications_used << ',' << c.degenerate_runs << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Grid JSON:
// {"n_values": [...], "exposure_values": [...], "w_values": [...],
//  "methods": ["direct_delta", ...], "scenario": "helped_to_doomed",
//  "replications": 100, "alpha": 0.05, "base_seed": 1, "bootstrap_replicates": 1000,
//  "p_treat": 0.5, "confounded_p_e_low": 0.1, "dist": [0.2, 0.6, 0.2, 0.0]}
// ---------------------------------------------------------------------------

struct PowerStudy {
    PowerGrid grid;
    StratumDist dist{0.2, 0.6, 0.2, 0.0};
};

template <class Json>
PowerStudy power_study_from_json(const Json& j) {
    try {
        PowerStudy s;
        PowerGrid& g = s.grid;
        g.n_values = j.at("n_values").template get<std::vector<std::int64_t>>();
        g.exposure_values = j.at("exposure_values").template get<std::vector<double>>();
        g.w_values = j.at("w_values").template get<std::vector<double>>();
        if (j.contains("methods")) {
            g.methods.clear();
            for (const auto& m : j.at("methods")) g.methods.push_back(method_from_string(m.template get<std::string>()));
        }
        g.scenario = scenario_from_string(j.value("scenario", std::string("helped_to_doomed")));
        g.replications = j.value("replications", 100);
        g.alpha = j.value("alpha", 0.05);
        g.base_seed = j.value("base_seed", std::uint64_t{0});
        g.bootstrap_replicates = j.value("bootstrap_replicates", std::int64_t{1000});
        g.p_treat = j.value("p_treat", 0.5);
        if (j.contains("confounded_p_e_low")) g.confounded_p_e_low = j.at("confounded_p_e_low").template get<double>();
        if (j.contains("dist")) s.dist = stratum_dist_from_json(j.at("dist"));
        detail::check_grid(g);
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::MalformedInput, std::string("power grid JSON: ") + e.what());
    }
}

} // namespace waning
