#pragma once

// Covariate-stratified waning tests: one test per stratum with multiplicity
// adjustment, and a pooled test on summed cells.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "waning/errors.hpp"
#include "waning/format.hpp"
#include "waning/parallel.hpp"
#include "waning/trial_data.hpp"
#include "waning/waning_test.hpp"

namespace waning {

class StratifiedSummary {
public:
    using Entry = std::pair<std::string, TrialSummary>;

    explicit StratifiedSummary(std::vector<Entry> strata) : strata_(std::move(strata)) {
        if (strata_.empty()) throw Error(ErrorKind::EmptyInput, "stratified summary has no strata");
        std::set<std::string_view> seen;
        for (const auto& [label, s] : strata_) {
            if (!seen.insert(label).second) {
                throw Error(ErrorKind::MalformedInput, "duplicate stratum label '" + label + "'");
            }
            if (s.mode() != strata_.front().second.mode()) {
                throw Error(ErrorKind::InvalidCounts, "stratum '" + label + "': all strata must share one mode");
            }
        }
    }

    const std::vector<Entry>& strata() const { return strata_; }
    std::size_t size() const { return strata_.size(); }
    Mode mode() const { return strata_.front().second.mode(); }

private:
    std::vector<Entry> strata_; // input order
};

// ---------------------------------------------------------------------------
// Per-stratum tests
// ---------------------------------------------------------------------------

struct StratumResult {
    std::string label;
    std::optional<TestResult> result; // empty for a degenerate stratum
    std::string degenerate_reason;

    bool degenerate() const { return !result.has_value(); }
};

inline std::vector<StratumResult> per_stratum_tests(const StratifiedSummary& s, Method method, double alpha,
                                                    TestOptions options = {}, Parallelism par = {}) {
    detail::check_alpha(alpha);
    const auto& strata = s.strata();
    std::vector<StratumResult> out(strata.size());
    parallel_for(strata.size(), par, [&](std::size_t i) {
        out[i].label = strata[i].first;
        try {
            out[i].result = ir_ratio_test(strata[i].second, method, alpha, options);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::ZeroEvents) throw;
            out[i].degenerate_reason = e.what();
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Multiplicity adjustment
// ---------------------------------------------------------------------------

enum class PAdjust { benjamini_hochberg, hochberg_simes };

inline std::vector<double> adjust_pvalues(std::span<const double> p, PAdjust method) {
    for (double x : p) {
        if (!(x >= 0.0 && x <= 1.0)) throw Error(ErrorKind::DomainError, "p-values must lie in [0, 1]");
    }
    const std::size_t m = p.size();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });

    std::vector<double> adjusted(m);
    double running = 1.0;
    for (std::size_t r = m; r-- > 0;) {
        const double rank = static_cast<double>(r + 1);
        const double factor = method == PAdjust::benjamini_hochberg ? static_cast<double>(m) / rank
                                                                     : static_cast<double>(m) - rank + 1.0;
        running = std::min(running, p[order[r]] * factor);
        adjusted[order[r]] = std::min(1.0, running);
    }
    return adjusted;
}

// ---------------------------------------------------------------------------
// Pooled test
// ---------------------------------------------------------------------------

inline TrialSummary pool_strata(const StratifiedSummary& s) {
    ArmCounts arms[2]{};
    for (const auto& [label, t] : s.strata()) {
        for (Arm a : {Arm::placebo, Arm::vaccine}) {
            ArmCounts& acc = arms[index(a)];
            const ArmCounts& c = t.arm(a);
            acc.n += c.n;
            acc.p1.events += c.p1.events;
            acc.p2.events += c.p2.events;
            acc.p1.person_time += c.p1.person_time;
            acc.p2.person_time += c.p2.person_time;
        }
    }
    return s.mode() == Mode::count ? TrialSummary::counts(arms[0], arms[1]) : TrialSummary::person_time(arms[0], arms[1]);
}

// True when the vaccine:placebo denominator ratio is the same in every stratum
// and period (relative tolerance 1e-9).
inline bool proportional_allocation(const StratifiedSummary& s) {
    std::optional<double> ratio;
    for (const auto& [label, t] : s.strata()) {
        for (Period p : {Period::first, Period::second}) {
            const double d0 = t.denominator(Arm::placebo, p);
            const double d1 = t.denominator(Arm::vaccine, p);
            if (d0 == 0.0) return false;
            const double r = d1 / d0;
            if (!ratio) {
                ratio = r;
            } else if (std::fabs(r - *ratio) > 1e-9 * std::fabs(*ratio)) {
                return false;
            }
        }
    }
    return true;
}

inline TestResult pooled_test(const StratifiedSummary& s, Method method, double alpha, TestOptions options = {}) {
    TestResult r = ir_ratio_test(pool_strata(s), method, alpha, options);
    r.notes.emplace_back("pooled_raw_cells_assumes_constant_incidence_ratios");
    if (!proportional_allocation(s)) r.notes.emplace_back("non_proportional_allocation");
    return r;
}

// ---------------------------------------------------------------------------
// I/O
// ---------------------------------------------------------------------------

namespace detail {

// Parser callback that rejects duplicate keys within any JSON object.
struct DuplicateKeyGuard {
    std::vector<std::set<std::string>> open;

    bool operator()(int, nlohmann::ordered_json::parse_event_t event, nlohmann::ordered_json& parsed) {
        using E = nlohmann::ordered_json::parse_event_t;
        if (event == E::object_start) open.emplace_back();
        if (event == E::object_end && !open.empty()) open.pop_back();
        if (event == E::key && !open.empty()) {
            const auto key = parsed.get<std::string>();
            if (!open.back().insert(key).second) {
                throw Error(ErrorKind::MalformedInput, "duplicate key '" + key + "'");
            }
        }
        return true;
    }
};

} // namespace detail

inline StratifiedSummary parse_stratified(std::string_view text) {
    nlohmann::ordered_json doc;
    try {
        detail::DuplicateKeyGuard guard;
        doc = nlohmann::ordered_json::parse(text, std::ref(guard));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::MalformedInput, std::string("stratified JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("strata") || !doc.at("strata").is_object()) {
        throw Error(ErrorKind::MalformedInput, "stratified JSON: expected {\"strata\": {label: summary, ...}}");
    }
    std::vector<StratifiedSummary::Entry> strata;
    for (const auto& [label, summary] : doc.at("strata").items()) {
        strata.emplace_back(label, summary_from_json(summary, "strata." + label));
    }
    return StratifiedSummary(std::move(strata));
}

inline nlohmann::ordered_json to_json(const StratifiedSummary& s) {
    nlohmann::ordered_json strata = nlohmann::ordered_json::object();
    for (const auto& [label, t] : s.strata()) strata[label] = to_json(t);
    return {{"strata", strata}};
}

// Groups records by their stratum label, in order of first appearance.
inline StratifiedSummary stratify_records(const RecordTable& table) {
    if (table.strata.size() != table.records.size() || table.records.empty()) {
        throw Error(ErrorKind::MalformedInput, "records have no stratum column");
    }
    std::vector<std::string> labels;
    std::vector<CellTable> cells;
    for (std::size_t i = 0; i < table.records.size(); ++i) {
        const auto it = std::find(labels.begin(), labels.end(), table.strata[i]);
        const std::size_t k = static_cast<std::size_t>(it - labels.begin());
        if (it == labels.end()) {
            labels.push_back(table.strata[i]);
            cells.emplace_back();
        }
        const IndividualRecord& r = table.records[i];
        ++cells[k].cells[index(r.arm)][index(r.outcome)];
    }
    std::vector<StratifiedSummary::Entry> strata;
    for (std::size_t k = 0; k < labels.size(); ++k) strata.emplace_back(labels[k], cells[k].to_summary());
    return StratifiedSummary(std::move(strata));
}

struct StratifiedReport {
    std::vector<StratumResult> strata;
    std::vector<std::optional<double>> p_bh;       // per stratum, empty if degenerate
    std::vector<std::optional<double>> p_hochberg; // per stratum, empty if degenerate
    std::optional<TestResult> pooled;
    std::string pooled_failure;
};

// Adjustment runs over the non-degenerate strata only.
inline StratifiedReport stratified_analysis(const StratifiedSummary& s, Method method, double alpha,
                                            TestOptions options = {}, Parallelism par = {}) {
    StratifiedReport report;
    report.strata = per_stratum_tests(s, method, alpha, options, par);
    std::vector<double> p;
    for (const auto& r : report.strata)
        if (r.result) p.push_back(*r.result->p_value);
    const auto bh = adjust_pvalues(p, PAdjust::benjamini_hochberg);
    const auto hs = adjust_pvalues(p, PAdjust::hochberg_simes);
    std::size_t k = 0;
    for (const auto& r : report.strata) {
        if (r.result) {
            report.p_bh.emplace_back(bh[k]);
            report.p_hochberg.emplace_back(hs[k]);
            ++k;
        } else {
            report.p_bh.emplace_back();
            report.p_hochberg.emplace_back();
        }
    }
    try {
        report.pooled = pooled_test(s, method, alpha, options);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::ZeroEvents) throw;
        report.pooled_failure = e.what();
    }
    return report;
}

namespace detail {

inline std::string csv_field(std::string_view text) {
    if (text.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(text);
    std::string quoted = "\"";
    for (char c : text) {
        if (c == '"') quoted += '"';
        quoted += c;
    }
    return quoted + '"';
}

inline std::string join_notes(const std::vector<std::string>& notes) {
    std::string out;
    for (const auto& n : notes) out += (out.empty() ? "" : ";") + n;
    return out;
}

inline std::string opt(const std::optional<double>& x) { return x ? format_double(*x) : "NA"; }

} // namespace detail

inline std::string stratified_csv(const StratifiedReport& report) {
    std::ostringstream out;
    out << "stratum,status,estimate,ci_low,ci_high,p_value,p_bh,p_hochberg,notes\n";
    auto row = [&](std::string_view label, const std::optional<TestResult>& r, std::string_view failure,
                   const std::optional<double>& bh, const std::optional<double>& hs) {
        out << detail::csv_field(label) << ',';
        if (r) {
            out << "ok," << format_double(r->estimate) << ',' << format_double(r->ci_low) << ','
                << format_double(r->ci_high) << ',' << detail::opt(r->p_value) << ',' << detail::opt(bh) << ','
                << detail::opt(hs) << ',' << detail::csv_field(detail::join_notes(r->notes)) << '\n';
        } else {
            out << "degenerate,NA,NA,NA,NA,NA,NA," << detail::csv_field(failure) << '\n';
        }
    };
    for (std::size_t i = 0; i < report.strata.size(); ++i) {
        const auto& s = report.strata[i];
        row(s.label, s.result, s.degenerate_reason, report.p_bh[i], report.p_hochberg[i]);
    }
    row("pooled", report.pooled, report.pooled_failure, std::nullopt, std::nullopt);
    return out.str();
}

} // namespace waning
