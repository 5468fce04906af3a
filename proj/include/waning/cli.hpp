#pragma once

// Command-line front end. run() never reads environment variables; every
// setting comes from flags or input files.

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "waning/bounds.hpp"
#include "waning/errors.hpp"
#include "waning/power_study.hpp"
#include "waning/stratified.hpp"
#include "waning/strata_sim.hpp"
#include "waning/svg.hpp"
#include "waning/trial_data.hpp"
#include "waning/waning_test.hpp"

namespace waning::cli {

// Seed used by randomized subcommands when neither --seed nor the input file gives one.
inline constexpr std::uint64_t default_seed = 20240611;

enum ExitCode : int { ok = 0, data_error = 1, usage_error = 2 };

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::MalformedInput, "cannot read '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline nlohmann::json read_json(const std::string& path) {
    try {
        return nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::MalformedInput, path + ": " + e.what());
    }
}

inline RecordTable read_records(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::MalformedInput, "cannot read '" + path + "'");
    return read_records_csv(in);
}

// Writes to `path`, or to `out` when path is empty.
inline void emit(const std::string& text, const std::string& path, std::ostream& out) {
    if (path.empty()) {
        out << text;
        return;
    }
    std::ofstream file(path, std::ios::binary);
    if (!file) throw Error(ErrorKind::MalformedInput, "cannot write '" + path + "'");
    file << text;
    if (!file) throw Error(ErrorKind::MalformedInput, "write failed for '" + path + "'");
}

// "a,b,c" or "start:stop:step" (inclusive of stop up to rounding).
inline std::vector<double> parse_grid(const std::string& spec) {
    std::vector<double> grid;
    auto number = [&](const std::string& s) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != s.size()) throw UsageError("--p12-grid: cannot parse '" + s + "'");
        return v;
    };
    if (spec.find(':') != std::string::npos) {
        std::vector<std::string> parts;
        std::stringstream ss(spec);
        for (std::string part; std::getline(ss, part, ':');) parts.push_back(part);
        if (parts.size() != 3) throw UsageError("--p12-grid: expected start:stop:step");
        const double start = number(parts[0]), stop = number(parts[1]), step = number(parts[2]);
        if (!(step > 0.0) || stop < start) throw UsageError("--p12-grid: need step > 0 and stop >= start");
        const auto count = static_cast<std::int64_t>(std::floor((stop - start) / step + 1e-9));
        for (std::int64_t k = 0; k <= count; ++k) grid.push_back(std::min(stop, start + static_cast<double>(k) * step));
        return grid;
    }
    std::stringstream ss(spec);
    for (std::string part; std::getline(ss, part, ',');) grid.push_back(number(part));
    if (grid.empty()) throw UsageError("--p12-grid: empty grid");
    return grid;
}

inline std::string pretty_result(const TestResult& r) {
    std::ostringstream out;
    out << "method      " << to_string(r.method) << '\n'
        << "IR1/IR2     " << format_double(r.estimate) << '\n'
        << "CI          [" << format_double(r.ci_low) << ", " << format_double(r.ci_high) << "] at level "
        << format_double(1.0 - r.alpha) << '\n'
        << "p-value     " << (r.p_value ? format_double(*r.p_value) : "NA") << '\n';
    if (r.log_se) out << "log SE      " << format_double(*r.log_se) << '\n';
    for (const auto& n : r.notes) out << "note        " << n << '\n';
    return out.str();
}

// Space-aligned rendering of a simple (unquoted) CSV table.
inline std::string pretty_csv(const std::string& csv) {
    std::vector<std::vector<std::string>> rows;
    std::stringstream in(csv);
    for (std::string line; std::getline(in, line);) {
        std::vector<std::string> row;
        std::stringstream ls(line);
        for (std::string f; std::getline(ls, f, ',');) row.push_back(f);
        rows.push_back(std::move(row));
    }
    std::vector<std::size_t> width;
    for (const auto& r : rows)
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (width.size() <= i) width.push_back(0);
            width[i] = std::max(width[i], r[i].size());
        }
    std::ostringstream out;
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            out << std::left << std::setw(static_cast<int>(width[i]) + (i + 1 < r.size() ? 2 : 0)) << r[i];
        }
        out << '\n';
    }
    return out.str();
}

} // namespace detail

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Two-period vaccine waning tests, bounds and simulation", "waning"};
    app.require_subcommand(1);
    app.fallthrough(); // global flags may follow the subcommand
    app.set_help_all_flag("--help-all", "Print help for every subcommand");

    unsigned threads = 0;
    bool pretty = false;
    app.add_option("--threads", threads, "Worker threads for parallel work (0 = all cores)")->capture_default_str();
    app.add_flag("--pretty", pretty, "Human-readable output instead of JSON/CSV");

    // test ------------------------------------------------------------------
    struct {
        std::string summary, records, out, method;
        bool bootstrap = false, continuity = false, stratified = false;
        double alpha = 0.05;
        std::int64_t B = 2000;
        std::optional<std::uint64_t> seed;
    } t;
    auto* test = app.add_subcommand("test", "Test equality of period-1 and period-2 incidence ratios");
    auto* t_summary = test->add_option("--summary", t.summary, "Summary JSON file")->check(CLI::ExistingFile);
    auto* t_records = test->add_option("--records", t.records, "Individual records CSV (arm,outcome)")->check(CLI::ExistingFile);
    t_summary->excludes(t_records);
    auto* t_boot = test->add_flag("--bootstrap", t.bootstrap, "Percentile bootstrap over records");
    t_boot->needs(t_records);
    test->add_option("--method", t.method, "direct-delta | conservative-delta | bootstrap (default direct-delta)");
    test->add_option("--alpha", t.alpha, "Significance level")->capture_default_str();
    test->add_option("--B", t.B, "Bootstrap replicates")->capture_default_str();
    test->add_option("--seed", t.seed, "Bootstrap seed (default " + std::to_string(default_seed) + ")");
    test->add_flag("--continuity-correction", t.continuity, "Add 0.5 to every cell when some event count is zero");
    test->add_flag("--stratified-bootstrap", t.stratified, "Resample within arms, arm sizes fixed");
    test->add_option("--out", t.out, "Output file (default stdout)");

    // hr-test ---------------------------------------------------------------
    struct {
        std::string summary, records, out;
        bool stratified = false;
        double alpha = 0.05;
        std::int64_t B = 2000;
        std::optional<std::uint64_t> seed;
    } h;
    auto* hr = app.add_subcommand("hr-test", "Bootstrap comparison of period-1 and period-2 hazard ratios (biased)");
    auto* h_summary = hr->add_option("--summary", h.summary, "Count-mode summary JSON file")->check(CLI::ExistingFile);
    auto* h_records = hr->add_option("--records", h.records, "Individual records CSV")->check(CLI::ExistingFile);
    h_summary->excludes(h_records);
    hr->add_option("--alpha", h.alpha, "Significance level")->capture_default_str();
    hr->add_option("--B", h.B, "Bootstrap replicates")->capture_default_str();
    hr->add_option("--seed", h.seed, "Bootstrap seed (default " + std::to_string(default_seed) + ")");
    hr->add_flag("--stratified-bootstrap", h.stratified, "Resample within arms, arm sizes fixed");
    hr->add_option("--out", h.out, "Output file (default stdout)");

    // bound -----------------------------------------------------------------
    struct {
        std::string summary, records, grid = "0:1:0.05", svg, out;
        double alpha = 0.05;
        std::int64_t B = 2000;
        std::optional<std::uint64_t> seed;
    } b;
    auto* bound = app.add_subcommand("bound", "Upper bound on the period-2 challenge effect as a function of p12");
    bound->add_option("--summary", b.summary, "Summary JSON file")->required()->check(CLI::ExistingFile);
    bound->add_option("--records", b.records, "Records CSV; switches the confidence limit to the bootstrap")
        ->check(CLI::ExistingFile);
    bound->add_option("--p12-grid", b.grid, "Comma list or start:stop:step")->capture_default_str();
    bound->add_option("--alpha", b.alpha, "One-sided level of the confidence limit")->capture_default_str();
    bound->add_option("--B", b.B, "Bootstrap replicates (with --records)")->capture_default_str();
    bound->add_option("--seed", b.seed, "Bootstrap seed (default " + std::to_string(default_seed) + ")");
    bound->add_option("--svg", b.svg, "Also write the curve as SVG to this path");
    bound->add_option("--out", b.out, "Output CSV file (default stdout)");

    // simulate --------------------------------------------------------------
    struct {
        std::string config, out;
        std::optional<std::uint64_t> seed;
    } s;
    auto* simulate = app.add_subcommand("simulate", "Simulate a two-period trial from principal strata");
    simulate->add_option("--config", s.config, "Simulation config JSON")->required()->check(CLI::ExistingFile);
    simulate->add_option("--seed", s.seed, "Overrides the config seed (default " + std::to_string(default_seed) + ")");
    simulate->add_option("--out", s.out, "Output records CSV (default stdout)");

    // power / hr-power ------------------------------------------------------
    struct {
        std::string grid, out, svg;
        std::optional<std::uint64_t> seed;
    } p;
    auto add_power = [&](const char* name, const char* desc) {
        auto* sub = app.add_subcommand(name, desc);
        sub->add_option("--grid", p.grid, "Power grid JSON")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", p.seed, "Overrides base_seed (default " + std::to_string(default_seed) + ")");
        sub->add_option("--out", p.out, "Output table CSV (default stdout)");
        sub->add_option("--svg", p.svg, "Also write a rejection-rate plot to this path");
        return sub;
    };
    auto* power = add_power("power", "Rejection rates of the incidence-ratio tests over a grid");
    auto* hr_power = add_power("hr-power", "Rejection rates of the hazard-ratio test over a grid");

    // stratified ------------------------------------------------------------
    struct {
        std::string summary, records, out, method = "direct-delta";
        double alpha = 0.05;
        bool continuity = false;
    } st;
    auto* strat = app.add_subcommand("stratified", "Per-stratum tests with multiplicity adjustment and a pooled test");
    auto* st_summary = strat->add_option("--summary", st.summary, "Stratified JSON file")->check(CLI::ExistingFile);
    auto* st_records = strat->add_option("--records", st.records, "Records CSV with a stratum column")
                           ->check(CLI::ExistingFile);
    st_summary->excludes(st_records);
    strat->add_option("--method", st.method, "direct-delta | conservative-delta")->capture_default_str();
    strat->add_option("--alpha", st.alpha, "Significance level")->capture_default_str();
    strat->add_flag("--continuity-correction", st.continuity, "Add 0.5 to every cell when some event count is zero");
    strat->add_option("--out", st.out, "Output CSV file (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return ok;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << " (see --help)\n";
        return usage_error;
    }

    const Parallelism par{threads};
    auto check_alpha = [](double alpha) {
        if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("--alpha must lie in (0, 1)");
    };
    auto check_b = [](std::int64_t B) {
        if (B < 1) throw UsageError("--B must be at least 1");
    };

    try {
        if (test->parsed()) {
            check_alpha(t.alpha);
            check_b(t.B);
            if (t.summary.empty() && t.records.empty()) throw UsageError("test: one of --summary or --records is required");
            std::optional<Method> method;
            if (!t.method.empty()) {
                try {
                    method = method_from_string(t.method);
                } catch (const Error&) {
                    throw UsageError("--method: unknown method '" + t.method + "'");
                }
            }
            if (method == Method::hr_bootstrap) throw UsageError("--method: use the hr-test subcommand");
            const bool use_bootstrap = t.bootstrap || method == Method::bootstrap;
            if (use_bootstrap && t.records.empty()) throw UsageError("--method bootstrap needs --records");
            if (t.bootstrap && method && method != Method::bootstrap) {
                throw UsageError("--bootstrap conflicts with --method " + t.method);
            }
            TestResult r;
            if (use_bootstrap) {
                const RecordTable records = detail::read_records(t.records);
                BootstrapOptions opt;
                opt.replicates = t.B;
                opt.seed = t.seed.value_or(default_seed);
                opt.scheme = t.stratified ? ResampleScheme::stratified_by_arm : ResampleScheme::pooled;
                opt.parallelism = par;
                r = bootstrap_ir_test(records.records, t.alpha, opt);
            } else {
                const TrialSummary summary = t.summary.empty()
                                                 ? aggregate(detail::read_records(t.records).records)
                                                 : summary_from_json(detail::read_json(t.summary), t.summary);
                r = ir_ratio_test(summary, method.value_or(Method::direct_delta), t.alpha,
                                  TestOptions{t.continuity});
            }
            detail::emit(pretty ? detail::pretty_result(r) : serialize_test_result(r) + "\n", t.out, out);
        } else if (hr->parsed()) {
            check_alpha(h.alpha);
            check_b(h.B);
            if (h.summary.empty() && h.records.empty()) throw UsageError("hr-test: one of --summary or --records is required");
            const CellTable table = h.summary.empty()
                                        ? tally(detail::read_records(h.records).records)
                                        : CellTable::from_summary(summary_from_json(detail::read_json(h.summary), h.summary));
            if (table.total() == 0) throw Error(ErrorKind::EmptyInput, "no individual records");
            BootstrapOptions opt;
            opt.replicates = h.B;
            opt.seed = h.seed.value_or(default_seed);
            opt.scheme = h.stratified ? ResampleScheme::stratified_by_arm : ResampleScheme::pooled;
            opt.parallelism = par;
            const TestResult r = hr_ratio_test(table, h.alpha, opt);
            detail::emit(pretty ? detail::pretty_result(r) : serialize_test_result(r) + "\n", h.out, out);
        } else if (bound->parsed()) {
            check_alpha(b.alpha);
            check_b(b.B);
            const std::vector<double> grid = detail::parse_grid(b.grid);
            const TrialSummary summary = summary_from_json(detail::read_json(b.summary), b.summary);
            BootstrapOptions opt;
            opt.replicates = b.B;
            opt.seed = b.seed.value_or(default_seed);
            opt.parallelism = par;
            std::vector<BoundResult> curve;
            if (b.records.empty()) {
                curve = ve2_bound_curve(summary, grid, b.alpha, opt);
            } else {
                const RecordTable records = detail::read_records(b.records);
                curve = ve2_bound_curve(summary, grid, b.alpha, opt,
                                        std::span<const IndividualRecord>(records.records));
            }
            if (summary.mode() == Mode::person_time) {
                err << "note: person-time rates stand in for risks; the bound is approximate\n";
            }
            const std::string csv = bound_curve_csv(curve);
            detail::emit(pretty ? detail::pretty_csv(csv) : csv, b.out, out);
            if (!b.svg.empty()) detail::emit(svg::bound_plot(curve), b.svg, out);
        } else if (simulate->parsed()) {
            const nlohmann::json doc = detail::read_json(s.config);
            SimConfig config = sim_config_from_json(doc);
            if (s.seed) {
                config.seed = *s.seed;
            } else if (!doc.contains("seed")) {
                config.seed = default_seed;
            }
            const auto records = simulate_trial(config, par);
            std::ostringstream csv;
            write_records_csv(csv, records);
            detail::emit(csv.str(), s.out, out);
        } else if (power->parsed() || hr_power->parsed()) {
            const nlohmann::json doc = detail::read_json(p.grid);
            PowerStudy study = power_study_from_json(doc);
            if (p.seed) {
                study.grid.base_seed = *p.seed;
            } else if (!doc.contains("base_seed")) {
                study.grid.base_seed = default_seed;
            }
            const auto cells = power->parsed() ? run_power_grid(study.grid, study.dist, par)
                                               : run_hr_power_grid(study.grid, study.dist, par);
            const std::string csv = emit_table(cells);
            detail::emit(pretty ? detail::pretty_csv(csv) : csv, p.out, out);
            if (!p.svg.empty()) detail::emit(svg::emit_plot(cells), p.svg, out);
        } else if (strat->parsed()) {
            check_alpha(st.alpha);
            if (st.summary.empty() && st.records.empty()) {
                throw UsageError("stratified: one of --summary or --records is required");
            }
            Method method;
            try {
                method = method_from_string(st.method);
            } catch (const Error&) {
                throw UsageError("--method: unknown method '" + st.method + "'");
            }
            if (method != Method::direct_delta && method != Method::conservative_delta) {
                throw UsageError("--method: stratified tests use direct-delta or conservative-delta");
            }
            const StratifiedSummary summary = st.summary.empty()
                                                  ? stratify_records(detail::read_records(st.records))
                                                  : parse_stratified(detail::read_file(st.summary));
            const auto report = stratified_analysis(summary, method, st.alpha, TestOptions{st.continuity}, par);
            const std::string csv = stratified_csv(report);
            detail::emit(pretty ? detail::pretty_csv(csv) : csv, st.out, out);
        }
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << " (see --help)\n";
        return usage_error;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return data_error;
    }
    return ok;
}

} // namespace waning::cli
