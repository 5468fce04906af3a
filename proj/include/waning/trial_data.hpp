#pragma once

// Two-period, two-arm trial data: summary tables, individual records and
// their on-disk formats (summary JSON, individual CSV).

#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "waning/errors.hpp"

namespace waning {

enum class Arm : std::uint8_t { placebo = 0, vaccine = 1 };
enum class Period : std::uint8_t { first = 1, second = 2 };
enum class Outcome : std::uint8_t { none = 0, period1 = 1, period2 = 2 };
enum class Mode { count, person_time };

constexpr std::size_t index(Arm a) { return static_cast<std::size_t>(a); }
constexpr std::size_t index(Period p) { return static_cast<std::size_t>(p) - 1; }
constexpr std::size_t index(Outcome o) { return static_cast<std::size_t>(o); }

constexpr Arm other(Arm a) { return a == Arm::placebo ? Arm::vaccine : Arm::placebo; }

inline std::string cell_name(Arm a, Period p) {
    return "arm" + std::to_string(index(a)) + ".p" + std::to_string(index(p) + 1);
}

struct ArmPeriodCounts {
    std::int64_t events = 0;
    double person_time = 0.0; // person_time mode only

    bool operator==(const ArmPeriodCounts&) const = default;
};

struct ArmCounts {
    std::int64_t n = 0; // randomized to the arm; count mode only
    ArmPeriodCounts p1;
    ArmPeriodCounts p2;

    const ArmPeriodCounts& period(Period p) const { return p == Period::first ? p1 : p2; }
    bool operator==(const ArmCounts&) const = default;
};

class TrialSummary {
public:
    static TrialSummary counts(const ArmCounts& placebo, const ArmCounts& vaccine) {
        TrialSummary s(Mode::count, placebo, vaccine);
        s.validate();
        return s;
    }

    static TrialSummary person_time(const ArmCounts& placebo, const ArmCounts& vaccine) {
        TrialSummary s(Mode::person_time, placebo, vaccine);
        s.validate();
        return s;
    }

    // Count-mode shorthand: arm sizes and period-1/period-2 event counts.
    static TrialSummary counts(std::int64_t n0, std::int64_t m1_0, std::int64_t m2_0, std::int64_t n1,
                               std::int64_t m1_1, std::int64_t m2_1) {
        return counts(ArmCounts{n0, {m1_0, 0.0}, {m2_0, 0.0}}, ArmCounts{n1, {m1_1, 0.0}, {m2_1, 0.0}});
    }

    Mode mode() const { return mode_; }
    const ArmCounts& arm(Arm a) const { return arms_[index(a)]; }
    std::int64_t events(Arm a, Period p) const { return arm(a).period(p).events; }

    std::int64_t n(Arm a) const {
        if (mode_ != Mode::count) {
            throw Error(ErrorKind::WrongMode, "arm size is undefined for person-time summaries");
        }
        return arm(a).n;
    }

    // Incidence denominator: arm size (count) or person-time at risk.
    double denominator(Arm a, Period p) const {
        return mode_ == Mode::count ? static_cast<double>(arm(a).n) : arm(a).period(p).person_time;
    }

    double rate(Arm a, Period p) const { return static_cast<double>(events(a, p)) / denominator(a, p); }

    TrialSummary with_arms_swapped() const { return TrialSummary(mode_, arms_[1], arms_[0]); }

    bool operator==(const TrialSummary&) const = default;

private:
    TrialSummary(Mode mode, const ArmCounts& placebo, const ArmCounts& vaccine)
        : mode_(mode), arms_{placebo, vaccine} {}

    void validate() const {
        for (Arm a : {Arm::placebo, Arm::vaccine}) {
            const ArmCounts& c = arm(a);
            const std::string arm_name = "arm" + std::to_string(index(a));
            for (Period p : {Period::first, Period::second}) {
                const ArmPeriodCounts& cell = c.period(p);
                if (cell.events < 0) {
                    throw Error(ErrorKind::InvalidCounts, cell_name(a, p) + ": negative event count");
                }
                if (mode_ == Mode::count && cell.events > c.n) {
                    throw Error(ErrorKind::InvalidCounts, cell_name(a, p) + ": events exceed arm size n");
                }
                if (mode_ == Mode::person_time && !(std::isfinite(cell.person_time) && cell.person_time > 0.0)) {
                    throw Error(ErrorKind::InvalidCounts, cell_name(a, p) + ": person-time must be positive");
                }
            }
            if (mode_ == Mode::count) {
                if (c.n < 0) throw Error(ErrorKind::InvalidCounts, arm_name + ": negative arm size");
                if (c.p1.events + c.p2.events > c.n) {
                    throw Error(ErrorKind::InvalidCounts,
                                arm_name + ": period-1 plus period-2 events exceed arm size n");
                }
            }
        }
    }

    Mode mode_;
    std::array<ArmCounts, 2> arms_;
};

struct IndividualRecord {
    Arm arm = Arm::placebo;
    Outcome outcome = Outcome::none;

    bool operator==(const IndividualRecord&) const = default;
};

// Multinomial cell counts M^a = (no event, period-1 event, period-2 event) per arm.
struct CellTable {
    std::array<std::array<std::int64_t, 3>, 2> cells{};

    std::int64_t& at(Arm a, Outcome o) { return cells[index(a)][index(o)]; }
    std::int64_t at(Arm a, Outcome o) const { return cells[index(a)][index(o)]; }
    std::int64_t arm_size(Arm a) const {
        const auto& c = cells[index(a)];
        return c[0] + c[1] + c[2];
    }
    std::int64_t total() const { return arm_size(Arm::placebo) + arm_size(Arm::vaccine); }

    CellTable& operator+=(const CellTable& other) {
        for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t o = 0; o < 3; ++o) cells[a][o] += other.cells[a][o];
        return *this;
    }

    TrialSummary to_summary() const {
        return TrialSummary::counts(arm_size(Arm::placebo), at(Arm::placebo, Outcome::period1),
                                    at(Arm::placebo, Outcome::period2), arm_size(Arm::vaccine),
                                    at(Arm::vaccine, Outcome::period1), at(Arm::vaccine, Outcome::period2));
    }

    static CellTable from_summary(const TrialSummary& s) {
        CellTable t;
        for (Arm a : {Arm::placebo, Arm::vaccine}) {
            t.at(a, Outcome::period1) = s.events(a, Period::first);
            t.at(a, Outcome::period2) = s.events(a, Period::second);
            t.at(a, Outcome::none) = s.n(a) - s.events(a, Period::first) - s.events(a, Period::second);
        }
        return t;
    }

    bool operator==(const CellTable&) const = default;
};

inline CellTable tally(std::span<const IndividualRecord> records) {
    CellTable t;
    for (const auto& r : records) ++t.at(r.arm, r.outcome);
    return t;
}

inline TrialSummary aggregate(std::span<const IndividualRecord> records) {
    if (records.empty()) throw Error(ErrorKind::EmptyInput, "no individual records");
    return tally(records).to_summary();
}

// ---------------------------------------------------------------------------
// Summary JSON
// ---------------------------------------------------------------------------

namespace detail {

template <class Json>
const Json& require(const Json& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) {
        throw Error(ErrorKind::MalformedInput, where + ": missing field '" + key + "'");
    }
    return obj.at(key);
}

template <class Json>
std::int64_t require_integer(const Json& obj, const char* key, const std::string& where) {
    const Json& v = require(obj, key, where);
    if (!v.is_number_integer()) {
        throw Error(ErrorKind::MalformedInput, where + "." + key + ": expected an integer");
    }
    return v.template get<std::int64_t>();
}

template <class Json>
double require_number(const Json& obj, const char* key, const std::string& where) {
    const Json& v = require(obj, key, where);
    if (!v.is_number()) throw Error(ErrorKind::MalformedInput, where + "." + key + ": expected a number");
    return v.template get<double>();
}

} // namespace detail

template <class Json>
TrialSummary summary_from_json(const Json& doc, const std::string& where = "summary") {
    if (!doc.is_object()) throw Error(ErrorKind::MalformedInput, where + ": expected a JSON object");
    const Json& mode_field = detail::require(doc, "mode", where);
    if (!mode_field.is_string()) throw Error(ErrorKind::MalformedInput, where + ".mode: expected a string");
    const auto mode_name = mode_field.template get<std::string>();
    Mode mode;
    if (mode_name == "count") {
        mode = Mode::count;
    } else if (mode_name == "person_time") {
        mode = Mode::person_time;
    } else {
        throw Error(ErrorKind::MalformedInput, where + ".mode: expected \"count\" or \"person_time\"");
    }

    auto read_arm = [&](const char* key) {
        const std::string arm_where = where + "." + key;
        const Json& a = detail::require(doc, key, where);
        if (!a.is_object()) throw Error(ErrorKind::MalformedInput, arm_where + ": expected an object");
        ArmCounts counts;
        if (mode == Mode::count) {
            counts.n = detail::require_integer(a, "n", arm_where);
        } else if (a.contains("n")) {
            throw Error(ErrorKind::MalformedInput, arm_where + ".n: not allowed in person_time mode");
        }
        auto read_period = [&](const char* pkey) {
            const std::string pwhere = arm_where + "." + pkey;
            const Json& p = detail::require(a, pkey, arm_where);
            if (!p.is_object()) throw Error(ErrorKind::MalformedInput, pwhere + ": expected an object");
            ArmPeriodCounts cell;
            cell.events = detail::require_integer(p, "events", pwhere);
            if (mode == Mode::person_time) {
                cell.person_time = detail::require_number(p, "pt", pwhere);
            } else if (p.contains("pt")) {
                throw Error(ErrorKind::MalformedInput, pwhere + ".pt: not allowed in count mode");
            }
            return cell;
        };
        counts.p1 = read_period("p1");
        counts.p2 = read_period("p2");
        return counts;
    };

    const ArmCounts arm0 = read_arm("arm0");
    const ArmCounts arm1 = read_arm("arm1");
    return mode == Mode::count ? TrialSummary::counts(arm0, arm1) : TrialSummary::person_time(arm0, arm1);
}

inline TrialSummary parse_summary(std::string_view text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::MalformedInput, std::string("summary JSON: ") + e.what());
    }
    return summary_from_json(doc);
}

inline nlohmann::ordered_json to_json(const TrialSummary& s) {
    nlohmann::ordered_json doc;
    doc["mode"] = s.mode() == Mode::count ? "count" : "person_time";
    for (Arm a : {Arm::placebo, Arm::vaccine}) {
        nlohmann::ordered_json arm;
        const ArmCounts& c = s.arm(a);
        if (s.mode() == Mode::count) arm["n"] = c.n;
        for (Period p : {Period::first, Period::second}) {
            nlohmann::ordered_json cell;
            cell["events"] = c.period(p).events;
            if (s.mode() == Mode::person_time) cell["pt"] = c.period(p).person_time;
            arm[p == Period::first ? "p1" : "p2"] = cell;
        }
        doc[a == Arm::placebo ? "arm0" : "arm1"] = arm;
    }
    return doc;
}

inline std::string serialize_summary(const TrialSummary& s) { return to_json(s).dump(); }

// ---------------------------------------------------------------------------
// Individual CSV: header with `arm` and `outcome` columns (any order); an
// optional `stratum` column is kept; other columns are ignored.
// ---------------------------------------------------------------------------

struct RecordTable {
    std::vector<IndividualRecord> records;
    std::vector<std::string> strata; // empty when the file has no stratum column
};

namespace detail {

inline std::vector<std::string> split_csv_line(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) {
        const auto first = field.find_first_not_of(" \t");
        const auto last = field.find_last_not_of(" \t");
        fields.push_back(first == std::string::npos ? std::string{} : field.substr(first, last - first + 1));
    }
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

} // namespace detail

inline RecordTable read_records_csv(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    while (header.empty() && std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
        auto fields = detail::split_csv_line(line);
        if (fields.size() == 1 && fields[0].empty()) continue;
        header = std::move(fields);
    }
    if (header.empty()) throw Error(ErrorKind::MalformedInput, "records CSV: missing header");

    std::optional<std::size_t> arm_col, outcome_col, stratum_col;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == "arm") arm_col = i;
        if (header[i] == "outcome") outcome_col = i;
        if (header[i] == "stratum") stratum_col = i;
    }
    if (!arm_col || !outcome_col) {
        throw Error(ErrorKind::MalformedInput, "records CSV: header must contain 'arm' and 'outcome'");
    }

    RecordTable table;
    while (std::getline(in, line)) {
        ++line_no;
        auto fields = detail::split_csv_line(line);
        if (fields.empty() || (fields.size() == 1 && fields[0].empty())) continue;
        const std::string where = "records CSV line " + std::to_string(line_no);
        if (fields.size() != header.size()) {
            throw Error(ErrorKind::MalformedInput, where + ": expected " + std::to_string(header.size()) + " fields");
        }
        const std::string& arm = fields[*arm_col];
        const std::string& outcome = fields[*outcome_col];
        if (arm != "0" && arm != "1") throw Error(ErrorKind::MalformedInput, where + ": arm must be 0 or 1");
        if (outcome != "0" && outcome != "1" && outcome != "2") {
            throw Error(ErrorKind::MalformedInput, where + ": outcome must be 0, 1 or 2");
        }
        table.records.push_back({static_cast<Arm>(arm[0] - '0'), static_cast<Outcome>(outcome[0] - '0')});
        if (stratum_col) table.strata.push_back(fields[*stratum_col]);
    }
    return table;
}

inline void write_records_csv(std::ostream& out, std::span<const IndividualRecord> records) {
    std::string buffer = "arm,outcome\n";
    buffer.reserve(buffer.size() + records.size() * 4);
    for (const auto& r : records) {
        buffer += static_cast<char>('0' + index(r.arm));
        buffer += ',';
        buffer += static_cast<char>('0' + index(r.outcome));
        buffer += '\n';
    }
    out << buffer;
}

} // namespace waning
