#pragma once

// Principal-strata simulator for two-period vaccine trials.
//
// Each individual carries a period-1 response type (doomed, helped, harmed,
// immune) and a period-2 type obtained by the waning transitions
// helped -> doomed and immune -> harmed. Placebo responses never change, so
// every simulated (T1, T2) pair is reachable under placebo sharp no-waning.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "waning/errors.hpp"
#include "waning/parallel.hpp"
#include "waning/rng.hpp"
#include "waning/trial_data.hpp"

namespace waning {

enum class Stratum : std::uint8_t { doomed = 0, helped = 1, harmed = 2, immune = 3 };

// Event under exposure for the given arm.
constexpr bool responds(Stratum t, Arm a) {
    switch (t) {
        case Stratum::doomed: return true;
        case Stratum::helped: return a == Arm::placebo;
        case Stratum::harmed: return a == Arm::vaccine;
        case Stratum::immune: return false;
    }
    return false;
}

class StratumDist {
public:
    StratumDist(double doomed, double helped, double harmed, double immune) : p_{doomed, helped, harmed, immune} {
        double total = 0.0;
        for (double p : p_) {
            if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::DomainError, "stratum probabilities must lie in [0, 1]");
            total += p;
        }
        if (std::fabs(total - 1.0) > 1e-12) throw Error(ErrorKind::DomainError, "stratum probabilities must sum to 1");
    }

    double doomed() const { return p_[0]; }
    double helped() const { return p_[1]; }
    double harmed() const { return p_[2]; }
    double immune() const { return p_[3]; }
    double operator[](Stratum t) const { return p_[static_cast<std::size_t>(t)]; }

    // Probability of an event under exposure in arm a.
    double responder_mass(Arm a) const { return a == Arm::placebo ? doomed() + helped() : doomed() + harmed(); }

    bool operator==(const StratumDist&) const = default;

private:
    std::array<double, 4> p_;
};

enum class Scenario { helped_to_doomed, immune_to_harmed, equal_mix };

constexpr std::string_view to_string(Scenario s) {
    switch (s) {
        case Scenario::helped_to_doomed: return "helped_to_doomed";
        case Scenario::immune_to_harmed: return "immune_to_harmed";
        case Scenario::equal_mix: return "equal_mix";
    }
    return "unknown";
}

inline Scenario scenario_from_string(std::string_view name) {
    for (Scenario s : {Scenario::helped_to_doomed, Scenario::immune_to_harmed, Scenario::equal_mix}) {
        if (name == to_string(s)) return s;
    }
    throw Error(ErrorKind::DomainError, "unknown scenario '" + std::string(name) + "'");
}

// Exposure-seeking confounder U_E ~ Bernoulli(0.5): both periods' exposure
// probabilities are p_e_high when U_E = 1 and p_e_low otherwise.
struct ExposureConfounding {
    double p_e_high = 0.9;
    double p_e_low = 0.1;

    bool operator==(const ExposureConfounding&) const = default;
};

struct SimConfig {
    std::int64_t n = 1000;
    double p_treat = 0.5;
    StratumDist dist{0.2, 0.6, 0.2, 0.0};
    double p_e1 = 0.5;
    double p_e2 = 0.5;
    double w = 1.0;
    Scenario scenario = Scenario::helped_to_doomed;
    std::optional<ExposureConfounding> confounding;
    std::uint64_t seed = 0;

    bool operator==(const SimConfig&) const = default;
};

struct TransitionRates {
    double w_star_helped = 0.0;
    double w_star_immune = 0.0;

    bool operator==(const TransitionRates&) const = default;
};

// Per-stratum transition probabilities that raise the challenge incidence
// ratio by the factor w:
//   w*_helped * p_helped + w*_immune * p_immune = (w - 1)(p_doomed + p_harmed).
inline TransitionRates transition_rates(const StratumDist& dist, double w, Scenario scenario) {
    if (!(w >= 1.0) || !std::isfinite(w)) throw Error(ErrorKind::DomainError, "waning factor w must be >= 1");
    if (w == 1.0) return {};

    const double required = (w - 1.0) * (dist.doomed() + dist.harmed());
    double source = 0.0;
    switch (scenario) {
        case Scenario::helped_to_doomed: source = dist.helped(); break;
        case Scenario::immune_to_harmed: source = dist.immune(); break;
        case Scenario::equal_mix: source = dist.helped() + dist.immune(); break;
    }
    if (source == 0.0) {
        throw Error(ErrorKind::ZeroStratum,
                    std::string(to_string(scenario)) + ": source stratum has probability 0");
    }
    double rate = required / source;
    if (rate > 1.0 + 1e-12) {
        const double w_cap = 1.0 + source / (dist.doomed() + dist.harmed());
        throw Error(ErrorKind::Infeasible, std::string(to_string(scenario)) + ": transition rate " +
                                               std::to_string(rate) + " exceeds 1; feasible w <= " +
                                               std::to_string(w_cap));
    }
    rate = std::min(rate, 1.0); // roundoff at the cap
    switch (scenario) {
        case Scenario::helped_to_doomed: return {rate, 0.0};
        case Scenario::immune_to_harmed: return {0.0, rate};
        case Scenario::equal_mix: return {rate, rate};
    }
    return {};
}

// Challenge incidence ratio (1 - VE^challenge) for a stratum distribution.
inline double challenge_ir(const StratumDist& dist) {
    const double denom = dist.doomed() + dist.helped();
    if (!(denom > 0.0)) throw Error(ErrorKind::ZeroDenominator, "p_doomed + p_helped must be positive");
    return (dist.doomed() + dist.harmed()) / denom;
}

// Ratio HR2 / (challenge IR) under the null with unconfounded exposures.
inline double hr2_bias_factor(const StratumDist& dist, double p_e1) {
    if (!(p_e1 >= 0.0 && p_e1 <= 1.0)) throw Error(ErrorKind::DomainError, "p_e1 must lie in [0, 1]");
    const double survive0 = 1.0 - dist.responder_mass(Arm::placebo);
    const double survive1 = 1.0 - dist.responder_mass(Arm::vaccine);
    return (survive0 * p_e1 + (1.0 - p_e1)) / (survive1 * p_e1 + (1.0 - p_e1));
}

// Period-2 stratum distribution after the waning transitions.
inline StratumDist period2_dist(const StratumDist& dist, const TransitionRates& rates) {
    const double moved_helped = rates.w_star_helped * dist.helped();
    const double moved_immune = rates.w_star_immune * dist.immune();
    return StratumDist(dist.doomed() + moved_helped, dist.helped() - moved_helped, dist.harmed() + moved_immune,
                       dist.immune() - moved_immune);
}

// Closed-form population quantities implied by a SimConfig; the Monte Carlo
// output converges to these.
struct PopulationRates {
    std::array<std::array<double, 2>, 2> incidence{}; // [arm][period], per randomized individual
    std::array<double, 2> period2_hazard{};           // [arm], among period-1 survivors
    double challenge_ir1 = 0.0;
    double challenge_ir2 = 0.0;
    double p12 = 0.0; // P(E2 = 1 | E1 = 1, no period-1 event)

    double ir(Period p) const { return incidence[1][index(p)] / incidence[0][index(p)]; }
    double hr2() const { return period2_hazard[1] / period2_hazard[0]; }
    double ve2_challenge() const { return 1.0 - challenge_ir2; }
};

inline PopulationRates population_rates(const SimConfig& config) {
    const TransitionRates rates = transition_rates(config.dist, config.w, config.scenario);
    const StratumDist& d = config.dist;
    const StratumDist d2 = period2_dist(d, rates);

    // Exposure probability per confounder level, with weights.
    std::vector<std::pair<double, double>> levels; // (weight, q)
    if (config.confounding) {
        levels = {{0.5, config.confounding->p_e_high}, {0.5, config.confounding->p_e_low}};
    }

    PopulationRates out;
    out.challenge_ir1 = challenge_ir(d);
    out.challenge_ir2 = challenge_ir(d2);
    double e_q1 = 0.0, e_q1q2 = 0.0;
    for (Arm a : {Arm::placebo, Arm::vaccine}) {
        const double respond1 = d.responder_mass(a);
        // Non-responders in period 1 who respond in period 2.
        const double newly = d2.responder_mass(a) - respond1;
        double r1 = 0.0, r2 = 0.0;
        auto accumulate = [&](double weight, double q1, double q2) {
            r1 += weight * q1 * respond1;
            r2 += weight * q2 * ((1.0 - q1) * d2.responder_mass(a) + q1 * newly);
        };
        if (levels.empty()) {
            accumulate(1.0, config.p_e1, config.p_e2);
        } else {
            for (auto [weight, q] : levels) accumulate(weight, q, q);
        }
        out.incidence[index(a)] = {r1, r2};
        out.period2_hazard[index(a)] = r2 / (1.0 - r1);
    }
    if (levels.empty()) {
        out.p12 = config.p_e2;
    } else {
        for (auto [weight, q] : levels) {
            e_q1 += weight * q;
            e_q1q2 += weight * q * q;
        }
        // Survival after exposure does not depend on U_E, so it cancels.
        out.p12 = e_q1 > 0.0 ? e_q1q2 / e_q1 : 0.0;
    }
    return out;
}

struct SimulatedIndividual {
    Arm arm = Arm::placebo;
    Stratum t1 = Stratum::immune;
    Stratum t2 = Stratum::immune;
    bool e1 = false;
    bool e2 = false;
    Outcome outcome = Outcome::none;
};

namespace detail {

inline Stratum draw_stratum(const StratumDist& d, double u) {
    if (u < d.doomed()) return Stratum::doomed;
    if (u < d.doomed() + d.helped()) return Stratum::helped;
    if (u < d.doomed() + d.helped() + d.harmed()) return Stratum::harmed;
    return Stratum::immune;
}

// Every individual consumes the same fixed sequence of uniforms from its own
// stream (seed, index), so individuals are reproducible in isolation.
inline SimulatedIndividual simulate_individual(const SimConfig& c, const TransitionRates& rates, std::uint64_t i) {
    rng::Stream s(c.seed, {0x73696dULL, i});
    const double u_arm = s.uniform();
    const double u_stratum = s.uniform();
    const double u_confounder = s.uniform();
    const double u_e1 = s.uniform();
    const double u_transition = s.uniform();
    const double u_e2 = s.uniform();

    SimulatedIndividual x;
    x.arm = u_arm < c.p_treat ? Arm::vaccine : Arm::placebo;
    x.t1 = draw_stratum(c.dist, u_stratum);

    double q1 = c.p_e1;
    double q2 = c.p_e2;
    if (c.confounding) {
        q1 = q2 = u_confounder < 0.5 ? c.confounding->p_e_high : c.confounding->p_e_low;
    }
    x.e1 = u_e1 < q1;
    const bool event1 = x.e1 && responds(x.t1, x.arm);

    x.t2 = x.t1;
    if (x.t1 == Stratum::helped && u_transition < rates.w_star_helped) x.t2 = Stratum::doomed;
    if (x.t1 == Stratum::immune && u_transition < rates.w_star_immune) x.t2 = Stratum::harmed;

    x.e2 = !event1 && u_e2 < q2;
    const bool event2 = x.e2 && responds(x.t2, x.arm);
    x.outcome = event1 ? Outcome::period1 : (event2 ? Outcome::period2 : Outcome::none);
    return x;
}

inline void check_config(const SimConfig& c) {
    if (c.n < 1) throw Error(ErrorKind::DomainError, "n must be positive");
    if (!(c.p_treat > 0.0 && c.p_treat < 1.0)) throw Error(ErrorKind::DomainError, "p_treat must lie in (0, 1)");
    for (double p : {c.p_e1, c.p_e2}) {
        if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::DomainError, "exposure probabilities must lie in [0, 1]");
    }
    if (c.confounding) {
        for (double p : {c.confounding->p_e_high, c.confounding->p_e_low}) {
            if (!(p >= 0.0 && p <= 1.0)) {
                throw Error(ErrorKind::DomainError, "confounded exposure probabilities must lie in [0, 1]");
            }
        }
    }
}

} // namespace detail

inline std::vector<SimulatedIndividual> simulate_individuals(const SimConfig& config, Parallelism par = {}) {
    detail::check_config(config);
    const TransitionRates rates = transition_rates(config.dist, config.w, config.scenario);
    std::vector<SimulatedIndividual> people(static_cast<std::size_t>(config.n));
    constexpr std::size_t chunk = 4096;
    const std::size_t chunks = (people.size() + chunk - 1) / chunk;
    parallel_for(chunks, par, [&](std::size_t c) {
        const std::size_t end = std::min(people.size(), (c + 1) * chunk);
        for (std::size_t i = c * chunk; i < end; ++i) people[i] = detail::simulate_individual(config, rates, i);
    });
    return people;
}

inline std::vector<IndividualRecord> simulate_trial(const SimConfig& config, Parallelism par = {}) {
    detail::check_config(config);
    const TransitionRates rates = transition_rates(config.dist, config.w, config.scenario);
    std::vector<IndividualRecord> records(static_cast<std::size_t>(config.n));
    constexpr std::size_t chunk = 4096;
    const std::size_t chunks = (records.size() + chunk - 1) / chunk;
    parallel_for(chunks, par, [&](std::size_t c) {
        const std::size_t end = std::min(records.size(), (c + 1) * chunk);
        for (std::size_t i = c * chunk; i < end; ++i) {
            const SimulatedIndividual x = detail::simulate_individual(config, rates, i);
            records[i] = {x.arm, x.outcome};
        }
    });
    return records;
}

// (T1, T2) joint counts, row = T1, column = T2.
using StrataTally = std::array<std::array<std::int64_t, 4>, 4>;

inline StrataTally tally_strata(const std::vector<SimulatedIndividual>& people) {
    StrataTally t{};
    for (const auto& x : people) ++t[static_cast<std::size_t>(x.t1)][static_cast<std::size_t>(x.t2)];
    return t;
}

// ---------------------------------------------------------------------------
// SimConfig JSON (field names mirror SimConfig)
// ---------------------------------------------------------------------------

template <class Json>
StratumDist stratum_dist_from_json(const Json& j) {
    if (j.is_array()) {
        if (j.size() != 4) throw Error(ErrorKind::MalformedInput, "dist: expected four probabilities");
        return StratumDist(j[0].template get<double>(), j[1].template get<double>(), j[2].template get<double>(),
                           j[3].template get<double>());
    }
    return StratumDist(j.at("p_doomed").template get<double>(), j.at("p_helped").template get<double>(),
                       j.at("p_harmed").template get<double>(), j.at("p_immune").template get<double>());
}

inline nlohmann::ordered_json to_json(const StratumDist& d) {
    return {{"p_doomed", d.doomed()}, {"p_helped", d.helped()}, {"p_harmed", d.harmed()}, {"p_immune", d.immune()}};
}

template <class Json>
SimConfig sim_config_from_json(const Json& j) {
    try {
        SimConfig c;
        c.n = j.at("n").template get<std::int64_t>();
        c.p_treat = j.value("p_treat", 0.5);
        c.dist = stratum_dist_from_json(j.at("dist"));
        c.p_e1 = j.value("p_e1", 0.0);
        c.p_e2 = j.value("p_e2", 0.0);
        c.w = j.value("w", 1.0);
        c.scenario = scenario_from_string(j.value("scenario", std::string("helped_to_doomed")));
        if (j.contains("confounding") && !j.at("confounding").is_null()) {
            const auto& k = j.at("confounding");
            c.confounding = ExposureConfounding{k.at("p_e_high").template get<double>(),
                                                k.at("p_e_low").template get<double>()};
        } else if (!j.contains("p_e1") || !j.contains("p_e2")) {
            throw Error(ErrorKind::MalformedInput, "sim config: p_e1 and p_e2 are required without confounding");
        }
        c.seed = j.value("seed", std::uint64_t{0});
        detail::check_config(c);
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::MalformedInput, std::string("sim config JSON: ") + e.what());
    }
}

inline nlohmann::ordered_json to_json(const SimConfig& c) {
    nlohmann::ordered_json j;
    j["n"] = c.n;
    j["p_treat"] = c.p_treat;
    j["dist"] = to_json(c.dist);
    j["p_e1"] = c.p_e1;
    j["p_e2"] = c.p_e2;
    j["w"] = c.w;
    j["scenario"] = to_string(c.scenario);
    if (c.confounding) {
        j["confounding"] = {{"p_e_high", c.confounding->p_e_high}, {"p_e_low", c.confounding->p_e_low}};
    }
    j["seed"] = c.seed;
    return j;
}

} // namespace waning
