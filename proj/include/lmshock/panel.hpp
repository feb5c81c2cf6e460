#pragma once

// Longitudinal worker spells and everything needed to turn them into
// estimator inputs: transition classification, FTE-weighted flow aggregates,
// censored-wage and non-employed baseline imputation, and occupation task
// classification.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lmshock/common.hpp"
#include "lmshock/rng.hpp"
#include "lmshock/stats.hpp"

namespace lmshock {

enum class TaskClass { Routine, Abstract };
enum class HoursBand { FullTime, Part18to30, PartUnder18 };
enum class Education { None, Apprenticeship, University };
enum class Nationality { Native, Commuter };

struct SpellRecord {
    std::int64_t worker_id = 0;
    int year = 0;
    bool employed = false;
    std::optional<std::int64_t> muni_id;
    std::optional<std::int64_t> district_id;
    std::optional<std::int64_t> occupation_code;
    std::optional<TaskClass> task_class;
    std::optional<double> log_daily_wage;
    bool censored = false;
    std::optional<HoursBand> hours_band;
    int age = 0;
    bool female = false;
    Education education = Education::None;
    bool apprentice = false;
    Nationality nationality = Nationality::Native;
};

inline double fte_weight(HoursBand band) {
    switch (band) {
        case HoursBand::FullTime: return 1.0;
        case HoursBand::Part18to30: return 0.67;
        case HoursBand::PartUnder18: return 0.5;
    }
    throw input_error("unknown hours band");
}

enum class TransitionClass {
    Stayer,
    Displaced,
    Relocated,
    InflowFromNonEmp,
    InflowFromOtherRegion,
    NonEmployedBoth,
};

struct TransitionRecord {
    std::int64_t worker_id = 0;
    int base_year = 0;
    int end_year = 0;
    std::optional<std::int64_t> origin;       // base-period muni; empty = non-employed
    std::optional<std::int64_t> destination;  // end-period muni; empty = non-employed
    std::optional<TaskClass> task0, task1;
    TransitionClass classification = TransitionClass::NonEmployedBoth;
    std::optional<double> wage0, wage1;       // full-time spells only
    double fte0 = 0.0, fte1 = 0.0;
};

// Classifies one worker's pair of periods relative to municipality r. Either
// side may be absent (non-employed). The pair must involve r, or be
// non-employed on both sides.
inline TransitionRecord classify_transition(const std::optional<SpellRecord>& s0,
                                            const std::optional<SpellRecord>& s1,
                                            std::int64_t base_muni) {
    require(s0.has_value() || s1.has_value(), "transition needs at least one spell");
    if (s0 && s1) {
        require(s0->worker_id == s1->worker_id, "transition spells belong to different workers");
        require(s0->year < s1->year, "transition spells are not in period order");
    }
    auto occupied = [](const std::optional<SpellRecord>& s) {
        return s.has_value() && s->employed;
    };

    TransitionRecord t;
    t.worker_id = s0 ? s0->worker_id : s1->worker_id;
    if (s0) t.base_year = s0->year;
    if (s1) t.end_year = s1->year;
    if (occupied(s0)) {
        t.origin = s0->muni_id;
        t.task0 = s0->task_class;
        t.fte0 = fte_weight(*s0->hours_band);
        if (*s0->hours_band == HoursBand::FullTime) t.wage0 = s0->log_daily_wage;
    }
    if (occupied(s1)) {
        t.destination = s1->muni_id;
        t.task1 = s1->task_class;
        t.fte1 = fte_weight(*s1->hours_band);
        if (*s1->hours_band == HoursBand::FullTime) t.wage1 = s1->log_daily_wage;
    }

    if (t.origin == base_muni && t.destination == base_muni)
        t.classification = TransitionClass::Stayer;
    else if (t.origin == base_muni && !t.destination)
        t.classification = TransitionClass::Displaced;
    else if (t.origin == base_muni)
        t.classification = TransitionClass::Relocated;
    else if (t.destination == base_muni && !t.origin)
        t.classification = TransitionClass::InflowFromNonEmp;
    else if (t.destination == base_muni)
        t.classification = TransitionClass::InflowFromOtherRegion;
    else if (!t.origin && !t.destination)
        t.classification = TransitionClass::NonEmployedBoth;
    else
        throw input_error("transition does not involve the given municipality");
    return t;
}

// Pairs every native worker's base- and end-year spells and emits the
// transitions relative to each municipality they touch: a mover contributes
// an outflow record at the origin and an inflow record at the destination.
// A worker with no row in a year counts as non-employed that year.
inline std::vector<TransitionRecord> build_transitions(const std::vector<SpellRecord>& spells,
                                                       int base_year, int end_year) {
    require(base_year < end_year, "base year must precede end year");
    std::unordered_map<std::int64_t, std::pair<const SpellRecord*, const SpellRecord*>> by_worker;
    for (const auto& s : spells) {
        if (s.nationality != Nationality::Native) continue;
        if (s.year != base_year && s.year != end_year) continue;
        auto& slot = by_worker[s.worker_id];
        (s.year == base_year ? slot.first : slot.second) = &s;
    }

    std::vector<TransitionRecord> out;
    out.reserve(by_worker.size());
    for (const auto& [wid, pair] : by_worker) {
        std::optional<SpellRecord> s0, s1;
        if (pair.first) s0 = *pair.first;
        if (pair.second) s1 = *pair.second;
        bool emp0 = s0 && s0->employed;
        bool emp1 = s1 && s1->employed;
        if (emp0) {
            out.push_back(classify_transition(s0, s1, *s0->muni_id));
            if (emp1 && *s1->muni_id != *s0->muni_id)
                out.push_back(classify_transition(s0, s1, *s1->muni_id));
        } else if (emp1) {
            out.push_back(classify_transition(s0, s1, *s1->muni_id));
        } else if (s0 || s1) {
            TransitionRecord t;
            t.worker_id = wid;
            if (s0) t.base_year = s0->year;
            if (s1) t.end_year = s1->year;
            t.classification = TransitionClass::NonEmployedBoth;
            out.push_back(t);
        }
    }
    std::sort(out.begin(), out.end(), [](const TransitionRecord& a, const TransitionRecord& b) {
        if (a.worker_id != b.worker_id) return a.worker_id < b.worker_id;
        return static_cast<int>(a.classification) < static_cast<int>(b.classification);
    });
    return out;
}

struct FlowAggregate {
    std::int64_t muni_id = 0;
    // Stayer terms are measured at base-period FTE, inflows at end-period
    // FTE, so both accounting identities below hold exactly by construction:
    //   E0 = e_stay + e_exit + e_relocate
    //   E1 = e_stay + e_inflow_nonemp + e_inflow_other
    // E1 equals measured end-period FTE employment whenever stayers keep
    // their hours band across the window.
    double E0 = 0, E1 = 0;
    double e_stay = 0, e_exit = 0, e_relocate = 0;
    double e_inflow_nonemp = 0, e_inflow_other = 0;

    // Task split (base class for outflows and stayers, end class for inflows).
    double E0_routine = 0, E1_routine = 0;
    double E0_abstract = 0, E1_abstract = 0;
    double e_stay_routine = 0, e_stay_abstract = 0;
    double e_exit_routine = 0, e_relocate_routine = 0, e_inflow_routine = 0;
    double e_exit_abstract = 0, e_relocate_abstract = 0, e_inflow_abstract = 0;
    double e_upgrade = 0;    // routine -> abstract stayers
    double e_downgrade = 0;  // abstract -> routine stayers

    double inflow() const { return e_inflow_nonemp + e_inflow_other; }
};

struct FlowResultSet {
    std::vector<FlowAggregate> flows;            // sorted by muni_id
    std::vector<std::int64_t> excluded_no_base;  // municipalities with E0 = 0
};

inline FlowResultSet aggregate_flows(const std::vector<TransitionRecord>& transitions,
                                     bool task_split = false) {
    int base_year = 0, end_year = 0;
    bool seen_years = false;
    std::map<std::int64_t, FlowAggregate> by_muni;
    for (const auto& t : transitions) {
        if (t.classification == TransitionClass::NonEmployedBoth) continue;
        if (!seen_years) {
            base_year = t.base_year;
            end_year = t.end_year;
            seen_years = true;
        } else if (t.fte0 > 0 && t.base_year != base_year) {
            throw input_error("transitions mix different base years");
        } else if (t.fte1 > 0 && t.end_year != end_year) {
            throw input_error("transitions mix different end years");
        }

        std::int64_t muni =
            (t.classification == TransitionClass::InflowFromNonEmp ||
             t.classification == TransitionClass::InflowFromOtherRegion)
                ? *t.destination
                : *t.origin;
        FlowAggregate& f = by_muni[muni];
        f.muni_id = muni;

        bool base_routine = t.task0 == TaskClass::Routine;
        bool base_abstract = t.task0 == TaskClass::Abstract;
        bool end_routine = t.task1 == TaskClass::Routine;
        bool end_abstract = t.task1 == TaskClass::Abstract;
        if (task_split) {
            if (t.fte0 > 0 && t.classification != TransitionClass::InflowFromNonEmp &&
                t.classification != TransitionClass::InflowFromOtherRegion)
                require(t.task0.has_value(), "task split requested but a base spell has no task class");
            if ((t.classification == TransitionClass::InflowFromNonEmp ||
                 t.classification == TransitionClass::InflowFromOtherRegion))
                require(t.task1.has_value(), "task split requested but an end spell has no task class");
        }

        switch (t.classification) {
            case TransitionClass::Stayer:
                f.E0 += t.fte0;
                f.E1 += t.fte0;
                f.e_stay += t.fte0;
                if (base_routine) {
                    f.E0_routine += t.fte0;
                    if (end_abstract) {
                        f.e_upgrade += t.fte0;
                        f.E1_abstract += t.fte0;
                    } else {
                        f.e_stay_routine += t.fte0;
                        f.E1_routine += t.fte0;
                    }
                } else if (base_abstract) {
                    f.E0_abstract += t.fte0;
                    if (end_routine) {
                        f.e_downgrade += t.fte0;
                        f.E1_routine += t.fte0;
                    } else {
                        f.e_stay_abstract += t.fte0;
                        f.E1_abstract += t.fte0;
                    }
                }
                break;
            case TransitionClass::Displaced:
                f.E0 += t.fte0;
                f.e_exit += t.fte0;
                if (base_routine) {
                    f.E0_routine += t.fte0;
                    f.e_exit_routine += t.fte0;
                } else if (base_abstract) {
                    f.E0_abstract += t.fte0;
                    f.e_exit_abstract += t.fte0;
                }
                break;
            case TransitionClass::Relocated:
                f.E0 += t.fte0;
                f.e_relocate += t.fte0;
                if (base_routine) {
                    f.E0_routine += t.fte0;
                    f.e_relocate_routine += t.fte0;
                } else if (base_abstract) {
                    f.E0_abstract += t.fte0;
                    f.e_relocate_abstract += t.fte0;
                }
                break;
            case TransitionClass::InflowFromNonEmp:
            case TransitionClass::InflowFromOtherRegion:
                f.E1 += t.fte1;
                if (t.classification == TransitionClass::InflowFromNonEmp)
                    f.e_inflow_nonemp += t.fte1;
                else
                    f.e_inflow_other += t.fte1;
                if (end_routine) {
                    f.E1_routine += t.fte1;
                    f.e_inflow_routine += t.fte1;
                } else if (end_abstract) {
                    f.E1_abstract += t.fte1;
                    f.e_inflow_abstract += t.fte1;
                }
                break;
            case TransitionClass::NonEmployedBoth:
                break;
        }
    }

    FlowResultSet out;
    for (auto& [muni, f] : by_muni) {
        if (f.E0 <= 0.0)
            out.excluded_no_base.push_back(muni);
        else
            out.flows.push_back(f);
    }
    return out;
}

// Censored-wage imputation. Wages are fit cell by cell (gender x district)
// as a normal with right-censoring at the limit, via EM; censored entries are
// replaced by the fitted mean conditional on exceeding the limit. Cells with
// fewer than 30 uncensored wages fall back to a pooled fit.
struct CensorImputationReport {
    std::size_t imputed = 0;
    std::size_t fallback_cells = 0;
    std::vector<std::pair<bool, std::int64_t>> fallback_keys;  // (female, district)
};

namespace detail {

struct CensoredFit {
    double mu = 0.0, sigma = 1.0;
};

inline CensoredFit fit_censored_normal(const std::vector<double>& uncensored,
                                       std::size_t n_censored, double limit) {
    require(!uncensored.empty(), "censored-normal fit needs at least one uncensored wage");
    double n_u = static_cast<double>(uncensored.size());
    double n = n_u + static_cast<double>(n_censored);
    double mean = 0.0;
    for (double w : uncensored) mean += w;
    mean /= n_u;
    double ss = 0.0;
    for (double w : uncensored) ss += (w - mean) * (w - mean);
    CensoredFit fit{mean, std::max(std::sqrt(ss / std::max(n_u - 1.0, 1.0)), 1e-3)};
    if (n_censored == 0) return fit;

    for (int iter = 0; iter < 500; ++iter) {
        double z = (limit - fit.mu) / fit.sigma;
        double lam = mills_lambda(-z);  // phi(z) / (1 - Phi(z))
        double m_c = fit.mu + fit.sigma * lam;                       // E[w | w > limit]
        double v_c = fit.sigma * fit.sigma * (1.0 + z * lam - lam * lam);
        double mu_new = (mean * n_u + m_c * static_cast<double>(n_censored)) / n;
        double ss_new = 0.0;
        for (double w : uncensored) ss_new += (w - mu_new) * (w - mu_new);
        ss_new += static_cast<double>(n_censored) * ((m_c - mu_new) * (m_c - mu_new) + v_c);
        double sigma_new = std::max(std::sqrt(ss_new / n), 1e-6);
        bool done = std::abs(mu_new - fit.mu) < 1e-12 && std::abs(sigma_new - fit.sigma) < 1e-12;
        fit.mu = mu_new;
        fit.sigma = sigma_new;
        if (done) break;
    }
    return fit;
}

inline double censored_mean_above(const CensoredFit& fit, double limit) {
    double z = (limit - fit.mu) / fit.sigma;
    return fit.mu + fit.sigma * mills_lambda(-z);
}

}  // namespace detail

// Replaces censored wages by the fitted conditional mean above the limit.
// When stochastic_seed is set, each record instead receives a draw from the
// fitted upper tail, keyed by (seed, worker, year) so the result does not
// depend on record order.
inline void impute_censored(std::vector<SpellRecord>& records, double censor_limit,
                            CensorImputationReport* report = nullptr,
                            std::optional<std::uint64_t> stochastic_seed = std::nullopt) {
    struct Cell {
        std::vector<double> uncensored;
        std::size_t n_censored = 0;
    };
    std::map<std::pair<bool, std::int64_t>, Cell> cells;
    Cell pooled;
    for (const auto& r : records) {
        if (!r.employed || !r.log_daily_wage) continue;
        auto key = std::make_pair(r.female, r.district_id.value_or(-1));
        Cell& c = cells[key];
        if (r.censored) {
            ++c.n_censored;
            ++pooled.n_censored;
        } else {
            c.uncensored.push_back(*r.log_daily_wage);
            pooled.uncensored.push_back(*r.log_daily_wage);
        }
    }

    bool any_censored = pooled.n_censored > 0;
    if (!any_censored) return;
    if (pooled.uncensored.empty())
        throw numeric_error("cannot impute: every wage observation is censored");

    // Summing in record order would let the input ordering perturb the fit by
    // a rounding ulp; sort first so the fit depends only on the wage multiset.
    std::sort(pooled.uncensored.begin(), pooled.uncensored.end());
    for (auto& [key, cell] : cells) std::sort(cell.uncensored.begin(), cell.uncensored.end());

    std::map<std::pair<bool, std::int64_t>, detail::CensoredFit> cell_fit;
    std::optional<detail::CensoredFit> pooled_fit;
    for (auto& [key, cell] : cells) {
        if (cell.n_censored == 0) continue;
        if (cell.uncensored.size() >= 30) {
            cell_fit[key] =
                detail::fit_censored_normal(cell.uncensored, cell.n_censored, censor_limit);
        } else {
            if (!pooled_fit)
                pooled_fit = detail::fit_censored_normal(pooled.uncensored, pooled.n_censored,
                                                         censor_limit);
            cell_fit[key] = *pooled_fit;
            if (report) {
                ++report->fallback_cells;
                report->fallback_keys.push_back(key);
            }
        }
    }

    for (auto& r : records) {
        if (!r.employed || !r.log_daily_wage || !r.censored) continue;
        auto key = std::make_pair(r.female, r.district_id.value_or(-1));
        const auto& fit = cell_fit.at(key);
        if (stochastic_seed) {
            Rng rng(stream_seed(*stochastic_seed, 0x1A9u,
                                static_cast<std::uint64_t>(r.worker_id),
                                static_cast<std::uint64_t>(r.year)));
            double z = (censor_limit - fit.mu) / fit.sigma;
            double lo = norm_cdf(z);
            double u = lo + rng.uniform() * (1.0 - lo);
            r.log_daily_wage = fit.mu + fit.sigma * norm_ppf(u);
        } else {
            r.log_daily_wage = detail::censored_mean_above(fit, censor_limit);
        }
        r.censored = false;
        if (report) ++report->imputed;
    }
}

// Mean log wage of full-time employed natives, by year; the aggregate series
// used to roll a non-employed worker's last observed wage forward.
inline std::map<int, double> mean_log_wage_by_year(const std::vector<SpellRecord>& records) {
    std::map<int, std::pair<double, std::size_t>> acc;
    for (const auto& r : records) {
        if (!r.employed || r.nationality != Nationality::Native) continue;
        if (r.hours_band != HoursBand::FullTime || !r.log_daily_wage) continue;
        auto& a = acc[r.year];
        a.first += *r.log_daily_wage;
        a.second += 1;
    }
    std::map<int, double> out;
    for (const auto& [year, a] : acc)
        out[year] = a.first / static_cast<double>(a.second);
    return out;
}

// Baseline wage for a worker who is non-employed in the base period: the last
// full-time wage observed in the preceding four years, shifted by aggregate
// wage growth since that year.
inline double impute_nonemployed_baseline(const std::vector<SpellRecord>& history,
                                          const std::map<int, double>& year_means,
                                          int base_year) {
    const SpellRecord* last = nullptr;
    for (const auto& s : history) {
        if (!s.employed || s.hours_band != HoursBand::FullTime || !s.log_daily_wage) continue;
        if (s.year < base_year - 4 || s.year >= base_year) continue;
        if (!last || s.year > last->year) last = &s;
    }
    if (!last)
        throw input_error("worker has no full-time spell in the four years before the base period");
    auto it_base = year_means.find(base_year);
    auto it_last = year_means.find(last->year);
    require(it_base != year_means.end() && it_last != year_means.end(),
            "aggregate wage series does not cover the required years");
    return *last->log_daily_wage + (it_base->second - it_last->second);
}

struct NonEmployedWorker {
    std::int64_t worker_id = 0;
    std::int64_t origin_muni = 0;
    std::int64_t origin_district = 0;
    int last_spell_year = 0;
    std::optional<double> imputed_log_wage;
    int age = 0;
    bool female = false;
    Education education = Education::None;
};

// Workers without employment in the base year whose last spell in the
// preceding four years pins them to an origin municipality.
inline std::vector<NonEmployedWorker> build_nonemployed_sample(
    const std::vector<SpellRecord>& records, int base_year) {
    std::unordered_map<std::int64_t, std::vector<const SpellRecord*>> by_worker;
    for (const auto& r : records) {
        if (r.nationality != Nationality::Native) continue;
        if (r.year < base_year - 4 || r.year > base_year) continue;
        by_worker[r.worker_id].push_back(&r);
    }
    auto year_means = mean_log_wage_by_year(records);

    std::vector<NonEmployedWorker> out;
    for (auto& [wid, hist] : by_worker) {
        const SpellRecord* base = nullptr;
        const SpellRecord* last_emp = nullptr;
        for (const auto* s : hist) {
            if (s->year == base_year) base = s;
            if (s->employed && s->year < base_year && s->year >= base_year - 4 &&
                (!last_emp || s->year > last_emp->year))
                last_emp = s;
        }
        if (!base || base->employed || !last_emp) continue;

        NonEmployedWorker w;
        w.worker_id = wid;
        w.origin_muni = *last_emp->muni_id;
        w.origin_district = *last_emp->district_id;
        w.last_spell_year = last_emp->year;
        w.age = base->age;
        w.female = base->female;
        w.education = base->education;
        std::vector<SpellRecord> own;
        for (const auto* s : hist) own.push_back(*s);
        try {
            w.imputed_log_wage = impute_nonemployed_baseline(own, year_means, base_year);
        } catch (const input_error&) {
            // No full-time spell in the window: keep the worker for the
            // employment margin, without a baseline wage.
        }
        out.push_back(w);
    }
    std::sort(out.begin(), out.end(),
              [](const NonEmployedWorker& a, const NonEmployedWorker& b) {
                  return a.worker_id < b.worker_id;
              });
    return out;
}

struct TaskSurveyRow {
    std::int64_t occupation_code = 0;
    std::int64_t individual_id = 0;
    int n_routine = 0;
    int n_abstract = 0;
};

struct OccupationClass {
    TaskClass task_class = TaskClass::Routine;
    double abstract_intensity = 0.0;  // occupation mean of per-individual abstract shares
    bool tie = false;
    std::size_t n_individuals = 0;
};

// Per-individual task shares are averaged within each occupation; the class
// is the task type with the larger mean share. Exact ties go to Routine and
// are flagged.
inline std::map<std::int64_t, OccupationClass> classify_occupations(
    const std::vector<TaskSurveyRow>& rows) {
    struct Acc {
        double routine_sum = 0.0, abstract_sum = 0.0;
        std::size_t n = 0;
    };
    std::map<std::int64_t, Acc> acc;
    for (const auto& r : rows) {
        require(r.n_routine >= 0 && r.n_abstract >= 0, "task counts must be non-negative");
        int total = r.n_routine + r.n_abstract;
        require(total >= 1, "surveyed individual " + std::to_string(r.individual_id) +
                                " reports no tasks");
        auto& a = acc[r.occupation_code];
        a.routine_sum += static_cast<double>(r.n_routine) / total;
        a.abstract_sum += static_cast<double>(r.n_abstract) / total;
        a.n += 1;
    }
    std::map<std::int64_t, OccupationClass> out;
    for (const auto& [code, a] : acc) {
        OccupationClass c;
        c.n_individuals = a.n;
        double routine = a.routine_sum / static_cast<double>(a.n);
        double abstract_mean = a.abstract_sum / static_cast<double>(a.n);
        c.abstract_intensity = abstract_mean;
        c.tie = routine == abstract_mean;
        c.task_class = abstract_mean > routine ? TaskClass::Abstract : TaskClass::Routine;
        out[code] = c;
    }
    return out;
}

struct Municipality {
    std::int64_t muni_id = 0;
    std::int64_t district_id = 0;
    bool is_border = false;
    double distance_km = 0.0;  // distance to the nearest border crossing
};

}  // namespace lmshock
