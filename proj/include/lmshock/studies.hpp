#pragma once

// Municipality-level studies on the spell panel: the employment decomposition,
// the wage decomposition with its selection terms, the routine/abstract task
// decomposition, per-year event studies, the grouped (pseudo-panel) wage
// regression, and subgroup analyses. Every study regresses outcomes on the
// measured commuter shock with the border-distance instruments, weighted and
// clustered at the levels the tables use. Components of one decomposition
// share a single design (rows, regressor, instruments, weights), so their
// signed coefficient sum reproduces the total up to rounding.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lmshock/common.hpp"
#include "lmshock/estimation.hpp"
#include "lmshock/panel.hpp"

namespace lmshock {

struct StudyWindow {
    int base_year = 1990;
    int end_year = 1993;
};

// Per-municipality commuter exposure: the growth of commuter full-time
// equivalents from the base year to two years later, relative to base-year
// native employment. The onset variant stops one year after base and is the
// regressor for the first post year, whose inflow was still building up.
struct ShockMeasure {
    std::int64_t muni_id = 0;
    std::int64_t district_id = 0;
    bool is_border = false;
    double distance_km = 0.0;
    double total_base = 0.0;  // native FTE in the base year (the denominator)
    double shock = 0.0;
    double shock_onset = 0.0;
};

struct ShockMeasureSet {
    int base_year = 0;
    std::vector<ShockMeasure> measures;          // sorted by muni_id
    std::vector<std::int64_t> excluded_no_base;  // no native employment in the base year
};

inline ShockMeasureSet build_shock_measures(const std::vector<SpellRecord>& spells,
                                            const std::vector<Municipality>& municipalities,
                                            int base_year) {
    require(!municipalities.empty(), "shock construction needs municipality metadata");
    std::map<std::int64_t, const Municipality*> meta;
    for (const auto& m : municipalities)
        require(meta.emplace(m.muni_id, &m).second, "duplicate municipality id in metadata");

    std::unordered_map<std::int64_t, double> native_base;
    std::unordered_map<std::int64_t, std::array<double, 3>> commuter;  // base, +1, +2
    for (const auto& s : spells) {
        if (!s.employed || !s.muni_id) continue;
        require(meta.count(*s.muni_id) > 0, "spell references a municipality absent from the metadata");
        double fte = fte_weight(*s.hours_band);
        if (s.nationality == Nationality::Native) {
            if (s.year == base_year) native_base[*s.muni_id] += fte;
        } else if (s.year >= base_year && s.year <= base_year + 2) {
            commuter[*s.muni_id][static_cast<std::size_t>(s.year - base_year)] += fte;
        }
    }

    ShockMeasureSet out;
    out.base_year = base_year;
    for (const auto& [id, m] : meta) {
        auto it = native_base.find(id);
        if (it == native_base.end() || it->second <= 0.0) {
            out.excluded_no_base.push_back(id);
            continue;
        }
        ShockMeasure sm;
        sm.muni_id = id;
        sm.district_id = m->district_id;
        sm.is_border = m->is_border;
        sm.distance_km = m->distance_km;
        sm.total_base = it->second;
        auto cz = commuter.count(id) ? commuter[id] : std::array<double, 3>{0, 0, 0};
        sm.shock = (cz[2] - cz[0]) / sm.total_base;
        sm.shock_onset = (cz[1] - cz[0]) / sm.total_base;
        out.measures.push_back(sm);
    }
    require(!out.measures.empty(), "no municipality has native employment in the base year");
    return out;
}

struct InferenceOptions {
    std::size_t bootstrap_reps = 0;  // 0 = analytic cluster-robust errors only
    std::uint64_t seed = 0;
    bool use_instruments = true;     // border-distance 2SLS; false = weighted least squares
};

// Locates the shock column of a study regression (intercept comes first).
inline Eigen::Index shock_index(const RegressionResult& r) {
    for (std::size_t i = 0; i < r.column_names.size(); ++i)
        if (r.column_names[i] == "shock") return static_cast<Eigen::Index>(i);
    throw input_error("regression result has no shock column");
}

inline double shock_coefficient(const RegressionResult& r) {
    return r.coefficients[shock_index(r)];
}

inline double shock_se(const RegressionResult& r) {
    Eigen::Index i = shock_index(r);
    if (r.bootstrap_reps > 0) return r.bootstrap_se[i];
    return std::sqrt(r.covariance(i, i));
}

// 95% interval: percentile bootstrap when replications ran, normal otherwise.
inline std::pair<double, double> shock_interval(const RegressionResult& r) {
    Eigen::Index i = shock_index(r);
    if (r.bootstrap_reps > 0) return {r.ci_low[i], r.ci_high[i]};
    double half = 1.959963984540054 * std::sqrt(r.covariance(i, i));
    return {r.coefficients[i] - half, r.coefficients[i] + half};
}

struct StudyComponent {
    std::string label;
    int sign = 0;  // the sign the component enters the total with; 0 = memo row
    RegressionResult result;
};

struct DecompositionReport {
    std::string study;
    std::vector<StudyComponent> components;  // the total comes first
    double additivity_residual = std::numeric_limits<double>::quiet_NaN();
    std::size_t n_municipalities = 0;
    std::vector<std::int64_t> excluded;  // in the shock set but unusable for this study
};

namespace studydetail {

// One shared cross-municipality design; component regressions differ only in
// the outcome vector, which is what makes their coefficients exactly additive.
struct MuniFrame {
    std::vector<const ShockMeasure*> rows;
    Eigen::VectorXd shock;
    Eigen::MatrixXd instruments;  // border level, border x distance, border x distance^2
    Eigen::VectorXd weights;
    std::vector<std::int64_t> clusters;
};

inline Eigen::MatrixXd border_instruments(const std::vector<const ShockMeasure*>& rows) {
    Eigen::MatrixXd z(static_cast<Eigen::Index>(rows.size()), 3);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        double b = rows[i]->is_border ? 1.0 : 0.0;
        double d = rows[i]->distance_km / 100.0;
        z(static_cast<Eigen::Index>(i), 0) = b;
        z(static_cast<Eigen::Index>(i), 1) = b * d;
        z(static_cast<Eigen::Index>(i), 2) = b * d * d;
    }
    return z;
}

inline MuniFrame make_frame(std::vector<const ShockMeasure*> rows, std::vector<double> weights,
                            bool onset_regressor = false) {
    require(!rows.empty(), "study frame has no municipalities");
    MuniFrame f;
    f.rows = std::move(rows);
    const auto n = static_cast<Eigen::Index>(f.rows.size());
    f.shock.resize(n);
    f.weights.resize(n);
    f.clusters.reserve(f.rows.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        const ShockMeasure* m = f.rows[static_cast<std::size_t>(i)];
        f.shock[i] = onset_regressor ? m->shock_onset : m->shock;
        f.weights[i] = weights[static_cast<std::size_t>(i)];
        f.clusters.push_back(m->district_id);
    }
    f.instruments = border_instruments(f.rows);
    return f;
}

inline RegressionResult run_spec(EstimationSpec spec, const InferenceOptions& opts) {
    Estimator which = opts.use_instruments ? Estimator::tsls : Estimator::wls;
    if (opts.bootstrap_reps > 0)
        return wild_cluster_bootstrap(spec, which, opts.bootstrap_reps, opts.seed);
    return which == Estimator::tsls ? tsls(spec) : wls(spec);
}

inline RegressionResult frame_regression(const MuniFrame& f, const std::vector<double>& outcome,
                                         const InferenceOptions& opts) {
    require(outcome.size() == f.rows.size(), "outcome rows do not match the frame");
    EstimationSpec spec;
    spec.outcome = Eigen::Map<const Eigen::VectorXd>(outcome.data(),
                                                     static_cast<Eigen::Index>(outcome.size()));
    spec.regressors = f.shock;
    spec.endogenous = {opts.use_instruments};
    if (opts.use_instruments) spec.instruments = f.instruments;
    spec.weights = f.weights;
    spec.cluster_ids = f.clusters;
    spec.column_names = {"shock"};
    return run_spec(std::move(spec), opts);
}

// Individual-level variant: one row per worker, shock and instruments taken
// from the worker's municipality, base age and its square as controls.
inline RegressionResult individual_regression(const std::vector<double>& outcome,
                                              const std::vector<const ShockMeasure*>& munis,
                                              const std::vector<double>& base_age,
                                              const InferenceOptions& opts) {
    require(!outcome.empty(), "individual regression has no observations");
    require(outcome.size() == munis.size() && outcome.size() == base_age.size(),
            "individual regression rows are misaligned");
    const auto n = static_cast<Eigen::Index>(outcome.size());
    EstimationSpec spec;
    spec.outcome = Eigen::Map<const Eigen::VectorXd>(outcome.data(), n);
    spec.regressors.resize(n, 3);
    spec.cluster_ids.reserve(outcome.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        const ShockMeasure* m = munis[static_cast<std::size_t>(i)];
        double age = base_age[static_cast<std::size_t>(i)];
        spec.regressors(i, 0) = m->shock;
        spec.regressors(i, 1) = age;
        spec.regressors(i, 2) = age * age;
        spec.cluster_ids.push_back(m->district_id);
    }
    spec.endogenous = {opts.use_instruments, false, false};
    if (opts.use_instruments) spec.instruments = border_instruments(munis);
    spec.column_names = {"shock", "age", "age squared"};
    return run_spec(std::move(spec), opts);
}

// Base- and end-year spells of each native worker, paired.
struct PairedSpells {
    const SpellRecord* base = nullptr;
    const SpellRecord* end = nullptr;
};

inline std::unordered_map<std::int64_t, PairedSpells> pair_spells(
    const std::vector<SpellRecord>& spells, int base_year, int end_year) {
    require(base_year < end_year, "base year must precede end year");
    std::unordered_map<std::int64_t, PairedSpells> by_worker;
    for (const auto& s : spells) {
        if (s.nationality != Nationality::Native) continue;
        if (s.year != base_year && s.year != end_year) continue;
        auto& slot = by_worker[s.worker_id];
        (s.year == base_year ? slot.base : slot.end) = &s;
    }
    return by_worker;
}

inline bool fulltime_wage(const SpellRecord* s) {
    return s && s->employed && s->hours_band == HoursBand::FullTime &&
           s->log_daily_wage.has_value();
}

inline const ShockMeasure* find_measure(const ShockMeasureSet& shocks, std::int64_t muni_id) {
    auto it = std::lower_bound(shocks.measures.begin(), shocks.measures.end(), muni_id,
                               [](const ShockMeasure& m, std::int64_t id) { return m.muni_id < id; });
    if (it == shocks.measures.end() || it->muni_id != muni_id) return nullptr;
    return &*it;
}

inline void check_window(const ShockMeasureSet& shocks, const StudyWindow& w) {
    require(w.base_year < w.end_year, "study window is not in increasing order");
    require(shocks.base_year == w.base_year,
            "shock measures were built for a different base year");
}

inline double signed_component_sum(const DecompositionReport& rep) {
    double sum = 0.0;
    for (std::size_t i = 1; i < rep.components.size(); ++i)
        if (rep.components[i].sign != 0)
            sum += rep.components[i].sign * shock_coefficient(rep.components[i].result);
    return sum;
}

}  // namespace studydetail

// First-stage profile of the shock in border status and distance: the fitted
// exposure at the border itself, its decay per 100 km, the curvature, and the
// joint F of the three border terms.
struct FirstStageProfile {
    double level = 0.0;          // fitted shock for a border municipality at distance zero
    double slope = 0.0;          // per 100 km of distance
    double curvature = 0.0;
    double control_level = 0.0;  // fitted shock away from the border
    double F = 0.0;
    std::size_t n = 0;
};

inline FirstStageProfile first_stage_profile(const ShockMeasureSet& shocks) {
    std::vector<const ShockMeasure*> rows;
    rows.reserve(shocks.measures.size());
    std::size_t n_border = 0;
    for (const auto& m : shocks.measures) {
        rows.push_back(&m);
        if (m.is_border) ++n_border;
    }
    require(n_border > 0 && n_border < rows.size(),
            "first stage needs both border and control municipalities");

    EstimationSpec spec;
    const auto n = static_cast<Eigen::Index>(rows.size());
    spec.outcome.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) spec.outcome[i] = rows[static_cast<std::size_t>(i)]->shock;
    spec.regressors = studydetail::border_instruments(rows);
    spec.column_names = {"border", "border x distance", "border x distance^2"};
    for (const auto* m : rows) spec.cluster_ids.push_back(m->district_id);
    RegressionResult r = wls(spec);

    FirstStageProfile p;
    p.control_level = r.coefficients[0];
    p.level = r.coefficients[0] + r.coefficients[1];
    p.slope = r.coefficients[2];
    p.curvature = r.coefficients[3];
    p.n = r.n_obs;
    // Joint Wald test on the three border terms.
    Eigen::Vector3d b = r.coefficients.segment(1, 3);
    Eigen::Matrix3d v = r.covariance.block(1, 1, 3, 3);
    p.F = b.dot(v.ldlt().solve(b)) / 3.0;
    return p;
}

// Employment decomposition: regressions of the total native employment growth
// share and its three flow components on the shock, sharing rows, weights and
// instruments, so total = -displacement + inflow - relocation exactly.
inline DecompositionReport decompose_employment(const std::vector<SpellRecord>& spells,
                                                const ShockMeasureSet& shocks,
                                                const StudyWindow& window,
                                                const InferenceOptions& opts = {}) {
    studydetail::check_window(shocks, window);
    auto transitions = build_transitions(spells, window.base_year, window.end_year);
    auto flow_set = aggregate_flows(transitions);
    std::map<std::int64_t, const FlowAggregate*> by_muni;
    for (const auto& f : flow_set.flows) by_muni[f.muni_id] = &f;

    DecompositionReport rep;
    rep.study = "employment";
    std::vector<const ShockMeasure*> rows;
    std::vector<double> weights, total, displacement, inflow, relocation;
    for (const auto& m : shocks.measures) {
        auto it = by_muni.find(m.muni_id);
        if (it == by_muni.end()) {
            rep.excluded.push_back(m.muni_id);
            continue;
        }
        const FlowAggregate& f = *it->second;
        rows.push_back(&m);
        weights.push_back(f.E0);
        total.push_back((f.E1 - f.E0) / f.E0);
        displacement.push_back(f.e_exit / f.E0);
        inflow.push_back(f.inflow() / f.E0);
        relocation.push_back(f.e_relocate / f.E0);
    }
    auto frame = studydetail::make_frame(std::move(rows), std::move(weights));
    rep.n_municipalities = frame.rows.size();
    rep.components.push_back({"total employment growth", 0,
                              studydetail::frame_regression(frame, total, opts)});
    rep.components.push_back({"displacement to non-employment", -1,
                              studydetail::frame_regression(frame, displacement, opts)});
    rep.components.push_back({"inflows into employment", +1,
                              studydetail::frame_regression(frame, inflow, opts)});
    rep.components.push_back({"relocation to other regions", -1,
                              studydetail::frame_regression(frame, relocation, opts)});
    rep.additivity_residual =
        shock_coefficient(rep.components[0].result) - studydetail::signed_component_sum(rep);
    return rep;
}

// Wage growth of full-time stayers at the individual level, with base age and
// its square as controls. This is the headline price-of-labor estimate.
inline RegressionResult pure_wage_effect(const std::vector<SpellRecord>& spells,
                                         const ShockMeasureSet& shocks,
                                         const StudyWindow& window,
                                         const InferenceOptions& opts = {}) {
    studydetail::check_window(shocks, window);
    auto paired = studydetail::pair_spells(spells, window.base_year, window.end_year);
    std::vector<double> outcome, age;
    std::vector<const ShockMeasure*> munis;
    for (const auto& [wid, p] : paired) {
        if (!studydetail::fulltime_wage(p.base) || !studydetail::fulltime_wage(p.end)) continue;
        if (*p.base->muni_id != *p.end->muni_id) continue;
        const ShockMeasure* m = studydetail::find_measure(shocks, *p.base->muni_id);
        if (!m) continue;
        outcome.push_back(*p.end->log_daily_wage - *p.base->log_daily_wage);
        age.push_back(static_cast<double>(p.base->age));
        munis.push_back(m);
    }
    require(!outcome.empty(), "no full-time stayers with wages in both periods");
    return studydetail::individual_regression(outcome, munis, age, opts);
}

// Per-municipality pieces of the mean-wage decomposition. The mean change of
// full-time log wages splits exactly into the stayers' growth, an entrant
// selection term, and a leaver selection term:
//   total = stayer + inflow - outflow
// because each period's mean is the stayer mean plus the other group's gap
// times its share. The age_profile column is the stayers' mean predicted
// wage growth from the age profile alone (profile fitted once, pooled).
struct WageDecompositionRow {
    std::int64_t muni_id = 0;
    double total = 0.0;
    double stayer = 0.0;
    double inflow = 0.0;
    double outflow = 0.0;
    double age_profile = 0.0;
    std::size_t n_base = 0, n_end = 0, n_stayers = 0;
};

struct WageRowSet {
    std::vector<WageDecompositionRow> rows;  // sorted by muni_id
    std::vector<std::int64_t> excluded;      // missing wages in a period, or no stayers
    double age_slope = 0.0;  // fitted growth-on-base-age slope of the profile
};

inline WageRowSet build_wage_rows(const std::vector<SpellRecord>& spells,
                                  const StudyWindow& window) {
    auto paired = studydetail::pair_spells(spells, window.base_year, window.end_year);

    struct Cell {
        double stay0 = 0, stay1 = 0, leave0 = 0, enter1 = 0;
        std::size_t n_stay = 0, n_leave = 0, n_enter = 0;
        double stay_age = 0;     // base ages of stayers, for the profile term
        double stay_growth = 0;  // their wage growth, for fitting the profile
    };
    std::map<std::int64_t, Cell> cells;
    for (const auto& [wid, p] : paired) {
        bool ft0 = studydetail::fulltime_wage(p.base);
        bool ft1 = studydetail::fulltime_wage(p.end);
        if (ft0 && ft1 && *p.base->muni_id == *p.end->muni_id) {
            Cell& c = cells[*p.base->muni_id];
            c.stay0 += *p.base->log_daily_wage;
            c.stay1 += *p.end->log_daily_wage;
            c.stay_age += p.base->age;
            c.stay_growth += *p.end->log_daily_wage - *p.base->log_daily_wage;
            ++c.n_stay;
            continue;
        }
        if (ft0) {
            Cell& c = cells[*p.base->muni_id];
            c.leave0 += *p.base->log_daily_wage;
            ++c.n_leave;
        }
        if (ft1) {
            Cell& c = cells[*p.end->muni_id];
            c.enter1 += *p.end->log_daily_wage;
            ++c.n_enter;
        }
    }

    // Age profile of stayer wage growth, fitted once on the pooled sample.
    // Everyone ages by the same window length, so only the base-age slope of
    // the growth profile is identified; that slope carries the entire
    // municipality-level variation of the predicted component.
    double sw = 0, sa = 0, sg = 0, saa = 0, sag = 0;
    for (const auto& [id, c] : cells) {
        (void)id;
        sw += static_cast<double>(c.n_stay);
        sa += c.stay_age;
        sg += c.stay_growth;
    }
    WageRowSet out;
    if (sw > 0) {
        // Second pass for the centered moments needs individual rows; reuse
        // the pairing instead of storing them.
        double mean_age = sa / sw, mean_growth = sg / sw;
        for (const auto& [wid, p] : paired) {
            if (!studydetail::fulltime_wage(p.base) || !studydetail::fulltime_wage(p.end)) continue;
            if (*p.base->muni_id != *p.end->muni_id) continue;
            double da = p.base->age - mean_age;
            saa += da * da;
            sag += da * (*p.end->log_daily_wage - *p.base->log_daily_wage - mean_growth);
        }
        out.age_slope = saa > 0 ? sag / saa : 0.0;
    }

    for (const auto& [id, c] : cells) {
        std::size_t n0 = c.n_stay + c.n_leave;
        std::size_t n1 = c.n_stay + c.n_enter;
        if (n0 == 0 || n1 == 0 || c.n_stay == 0) {
            out.excluded.push_back(id);
            continue;
        }
        WageDecompositionRow r;
        r.muni_id = id;
        r.n_base = n0;
        r.n_end = n1;
        r.n_stayers = c.n_stay;
        double stay0 = c.stay0 / static_cast<double>(c.n_stay);
        double stay1 = c.stay1 / static_cast<double>(c.n_stay);
        r.total = (c.stay1 + c.enter1) / static_cast<double>(n1) -
                  (c.stay0 + c.leave0) / static_cast<double>(n0);
        r.stayer = stay1 - stay0;
        r.inflow = c.n_enter == 0
                       ? 0.0
                       : (c.enter1 / static_cast<double>(c.n_enter) - stay1) *
                             (static_cast<double>(c.n_enter) / static_cast<double>(n1));
        r.outflow = c.n_leave == 0
                        ? 0.0
                        : (c.leave0 / static_cast<double>(c.n_leave) - stay0) *
                              (static_cast<double>(c.n_leave) / static_cast<double>(n0));
        r.age_profile = out.age_slope * (c.stay_age / static_cast<double>(c.n_stay));
        out.rows.push_back(r);
    }
    return out;
}

// Wage decomposition: the regional mean-wage response and its regressions of
// the stayer, entrant-selection and leaver-selection pieces, sharing one
// design. Memo rows carry the derived composition term, the age-profile
// channel, and the individual-level stayer estimate.
inline DecompositionReport decompose_wages(const std::vector<SpellRecord>& spells,
                                           const ShockMeasureSet& shocks,
                                           const StudyWindow& window,
                                           const InferenceOptions& opts = {}) {
    studydetail::check_window(shocks, window);
    WageRowSet rows = build_wage_rows(spells, window);

    DecompositionReport rep;
    rep.study = "wages";
    rep.excluded = rows.excluded;
    std::vector<const ShockMeasure*> frame_rows;
    std::vector<double> weights, total, stayer, inflow, outflow, composition, age_profile;
    for (const auto& r : rows.rows) {
        const ShockMeasure* m = studydetail::find_measure(shocks, r.muni_id);
        if (!m) {
            rep.excluded.push_back(r.muni_id);
            continue;
        }
        frame_rows.push_back(m);
        weights.push_back(static_cast<double>(r.n_base));
        total.push_back(r.total);
        stayer.push_back(r.stayer);
        inflow.push_back(r.inflow);
        outflow.push_back(r.outflow);
        composition.push_back(r.inflow - r.outflow);
        age_profile.push_back(r.age_profile);
    }
    auto frame = studydetail::make_frame(std::move(frame_rows), std::move(weights));
    rep.n_municipalities = frame.rows.size();
    rep.components.push_back({"regional wage effect", 0,
                              studydetail::frame_regression(frame, total, opts)});
    rep.components.push_back({"stayer wage growth", +1,
                              studydetail::frame_regression(frame, stayer, opts)});
    rep.components.push_back({"inflow selection", +1,
                              studydetail::frame_regression(frame, inflow, opts)});
    rep.components.push_back({"outflow selection", -1,
                              studydetail::frame_regression(frame, outflow, opts)});
    rep.components.push_back({"composition (inflow - outflow)", 0,
                              studydetail::frame_regression(frame, composition, opts)});
    rep.components.push_back({"age profile selection", 0,
                              studydetail::frame_regression(frame, age_profile, opts)});
    rep.components.push_back({"pure wage effect (individual)", 0,
                              pure_wage_effect(spells, shocks, window, opts)});
    rep.additivity_residual =
        shock_coefficient(rep.components[0].result) - studydetail::signed_component_sum(rep);
    return rep;
}

// Routine-task decomposition: growth of routine employment split into its
// five flows. Upgrading (routine to abstract) leaves the routine stock and
// enters with a minus; downgrading is the reverse. Memo rows carry the
// abstract-employment total on its own sample and the stayers' mean change
// in abstract task intensity.
inline DecompositionReport decompose_routine(
    const std::vector<SpellRecord>& spells, const ShockMeasureSet& shocks,
    const StudyWindow& window, const std::map<std::int64_t, OccupationClass>& occupations,
    const InferenceOptions& opts = {}) {
    studydetail::check_window(shocks, window);
    auto transitions = build_transitions(spells, window.base_year, window.end_year);
    auto flow_set = aggregate_flows(transitions, true);
    std::map<std::int64_t, const FlowAggregate*> by_muni;
    for (const auto& f : flow_set.flows) by_muni[f.muni_id] = &f;

    DecompositionReport rep;
    rep.study = "routine";
    std::vector<const ShockMeasure*> rows, rows_abs;
    std::vector<double> weights, weights_abs;
    std::vector<double> total, exits, inflow, relocation, upgrade, downgrade, total_abs;
    for (const auto& m : shocks.measures) {
        auto it = by_muni.find(m.muni_id);
        const FlowAggregate* f = it == by_muni.end() ? nullptr : it->second;
        if (f && f->E0_abstract > 0) {
            rows_abs.push_back(&m);
            weights_abs.push_back(f->E0_abstract);
            total_abs.push_back((f->E1_abstract - f->E0_abstract) / f->E0_abstract);
        }
        if (!f || f->E0_routine <= 0) {
            rep.excluded.push_back(m.muni_id);
            continue;
        }
        double r0 = f->E0_routine;
        rows.push_back(&m);
        weights.push_back(r0);
        total.push_back((f->E1_routine - r0) / r0);
        exits.push_back(f->e_exit_routine / r0);
        inflow.push_back(f->e_inflow_routine / r0);
        relocation.push_back(f->e_relocate_routine / r0);
        upgrade.push_back(f->e_upgrade / r0);
        downgrade.push_back(f->e_downgrade / r0);
    }
    auto frame = studydetail::make_frame(std::move(rows), std::move(weights));
    rep.n_municipalities = frame.rows.size();
    rep.components.push_back({"total routine employment growth", 0,
                              studydetail::frame_regression(frame, total, opts)});
    rep.components.push_back({"displacement to non-employment", -1,
                              studydetail::frame_regression(frame, exits, opts)});
    rep.components.push_back({"inflows into routine employment", +1,
                              studydetail::frame_regression(frame, inflow, opts)});
    rep.components.push_back({"relocation to other regions", -1,
                              studydetail::frame_regression(frame, relocation, opts)});
    rep.components.push_back({"upgrading to abstract jobs", -1,
                              studydetail::frame_regression(frame, upgrade, opts)});
    rep.components.push_back({"downgrading from abstract jobs", +1,
                              studydetail::frame_regression(frame, downgrade, opts)});
    rep.additivity_residual =
        shock_coefficient(rep.components[0].result) - studydetail::signed_component_sum(rep);

    if (!rows_abs.empty()) {
        auto frame_abs = studydetail::make_frame(std::move(rows_abs), std::move(weights_abs));
        rep.components.push_back({"total abstract employment growth", 0,
                                  studydetail::frame_regression(frame_abs, total_abs, opts)});
    }

    // Stayers' change in abstract task intensity, averaged per municipality.
    auto paired = studydetail::pair_spells(spells, window.base_year, window.end_year);
    std::map<std::int64_t, std::pair<double, std::size_t>> intensity;
    for (const auto& [wid, p] : paired) {
        if (!p.base || !p.end || !p.base->employed || !p.end->employed) continue;
        if (*p.base->muni_id != *p.end->muni_id) continue;
        if (!p.base->occupation_code || !p.end->occupation_code) continue;
        auto o0 = occupations.find(*p.base->occupation_code);
        auto o1 = occupations.find(*p.end->occupation_code);
        require(o0 != occupations.end() && o1 != occupations.end(),
                "spell occupation missing from the task classification");
        auto& acc = intensity[*p.base->muni_id];
        acc.first += o1->second.abstract_intensity - o0->second.abstract_intensity;
        ++acc.second;
    }
    std::vector<const ShockMeasure*> rows_int;
    std::vector<double> weights_int, change;
    for (const auto& [id, acc] : intensity) {
        const ShockMeasure* m = studydetail::find_measure(shocks, id);
        if (!m) continue;
        rows_int.push_back(m);
        weights_int.push_back(static_cast<double>(acc.second));
        change.push_back(acc.first / static_cast<double>(acc.second));
    }
    if (!rows_int.empty()) {
        auto frame_int = studydetail::make_frame(std::move(rows_int), std::move(weights_int));
        rep.components.push_back({"stayer abstract intensity change", 0,
                                  studydetail::frame_regression(frame_int, change, opts)});
    }
    return rep;
}

enum class EventOutcome {
    TotalEmployment,
    RoutineEmployment,
    AbstractEmployment,
    AbstractShare,
    ApprenticeEmployment,
};

inline const char* event_outcome_name(EventOutcome o) {
    switch (o) {
        case EventOutcome::TotalEmployment: return "total employment";
        case EventOutcome::RoutineEmployment: return "routine employment";
        case EventOutcome::AbstractEmployment: return "abstract employment";
        case EventOutcome::AbstractShare: return "abstract share";
        case EventOutcome::ApprenticeEmployment: return "apprenticeship employment";
    }
    throw input_error("unknown event-study outcome");
}

struct EventStudyPoint {
    int year = 0;
    RegressionResult result;
};

struct EventStudy {
    EventOutcome outcome = EventOutcome::TotalEmployment;
    int base_year = 0;
    std::vector<EventStudyPoint> points;  // ascending year, base year omitted
    std::vector<int> skipped_years;       // requested but absent from the panel
};

// One regression per year of the outcome's change since the base year on the
// shock. The first post year regresses on the onset inflow, every other year
// on the full two-year shock; years before the base measure pre-trends.
inline EventStudy event_study(const std::vector<SpellRecord>& spells,
                              const ShockMeasureSet& shocks, int base_year,
                              const std::vector<int>& years, EventOutcome outcome,
                              const InferenceOptions& opts = {}) {
    require(shocks.base_year == base_year, "shock measures were built for a different base year");
    struct Cell {
        double total = 0, routine = 0, abstracts = 0, apprentice = 0;
    };
    std::map<std::pair<std::int64_t, int>, Cell> cells;
    std::map<int, std::size_t> year_rows;
    for (const auto& s : spells) {
        ++year_rows[s.year];
        if (!s.employed || s.nationality != Nationality::Native) continue;
        Cell& c = cells[{*s.muni_id, s.year}];
        double fte = fte_weight(*s.hours_band);
        c.total += fte;
        if (s.task_class == TaskClass::Routine) c.routine += fte;
        if (s.task_class == TaskClass::Abstract) c.abstracts += fte;
        if (s.apprentice) c.apprentice += fte;
    }

    auto pick = [outcome](const Cell& c) {
        switch (outcome) {
            case EventOutcome::TotalEmployment: return c.total;
            case EventOutcome::RoutineEmployment: return c.routine;
            case EventOutcome::AbstractEmployment: return c.abstracts;
            case EventOutcome::AbstractShare: return c.abstracts;  // handled below
            case EventOutcome::ApprenticeEmployment: return c.apprentice;
        }
        throw input_error("unknown event-study outcome");
    };

    EventStudy out;
    out.outcome = outcome;
    out.base_year = base_year;
    std::vector<int> wanted = years;
    std::sort(wanted.begin(), wanted.end());
    for (int year : wanted) {
        if (year == base_year) continue;
        if (year_rows.find(year) == year_rows.end()) {
            out.skipped_years.push_back(year);
            continue;
        }
        std::vector<const ShockMeasure*> rows;
        std::vector<double> weights, values;
        for (const auto& m : shocks.measures) {
            auto b = cells.find({m.muni_id, base_year});
            if (b == cells.end()) continue;
            auto t = cells.find({m.muni_id, year});
            const Cell empty{};
            const Cell& ct = t == cells.end() ? empty : t->second;
            if (outcome == EventOutcome::AbstractShare) {
                if (b->second.total <= 0 || ct.total <= 0) continue;
                rows.push_back(&m);
                weights.push_back(b->second.total);
                values.push_back(ct.abstracts / ct.total - b->second.abstracts / b->second.total);
            } else {
                double base_value = pick(b->second);
                if (base_value <= 0) continue;
                rows.push_back(&m);
                weights.push_back(base_value);
                values.push_back((pick(ct) - base_value) / base_value);
            }
        }
        if (rows.empty()) {
            out.skipped_years.push_back(year);
            continue;
        }
        auto frame = studydetail::make_frame(std::move(rows), std::move(weights),
                                             year == base_year + 1);
        out.points.push_back({year, studydetail::frame_regression(frame, values, opts)});
    }
    return out;
}

struct PseudoPanelGrouping {
    bool by_education = true;
    bool by_age = true;  // three bands of base-year age
    bool by_gender = true;
};

struct PseudoPanelResult {
    RegressionResult result;
    std::size_t n_cells = 0;       // group x municipality rows used
    std::size_t dropped_cells = 0; // populated in only one period
    std::size_t n_groups = 0;      // distinct groups among the used rows
};

// Grouped wage regression: full-time mean log wages per municipality x group
// cell, differenced across the window and regressed on the shock, weighted by
// base-period cell size. Groups use time-invariant traits only; the age bands
// are anchored at base-year age so workers cannot migrate between groups.
inline PseudoPanelResult pseudo_panel(const std::vector<SpellRecord>& spells,
                                      const ShockMeasureSet& shocks, const StudyWindow& window,
                                      const PseudoPanelGrouping& grouping = {},
                                      const InferenceOptions& opts = {}) {
    studydetail::check_window(shocks, window);
    auto group_of = [&grouping, &window](const SpellRecord& s) {
        int g = 0;
        if (grouping.by_education) g = static_cast<int>(s.education);
        if (grouping.by_age) {
            int base_age = s.age - (s.year - window.base_year);
            int band = base_age < 32 ? 0 : base_age < 46 ? 1 : 2;
            g = g * 3 + band;
        }
        if (grouping.by_gender) g = g * 2 + (s.female ? 1 : 0);
        return g;
    };

    struct Cell {
        double sum0 = 0, sum1 = 0;
        std::size_t n0 = 0, n1 = 0;
    };
    std::map<std::pair<std::int64_t, int>, Cell> cells;
    for (const auto& s : spells) {
        if (s.nationality != Nationality::Native) continue;
        if (s.year != window.base_year && s.year != window.end_year) continue;
        if (!s.employed || s.hours_band != HoursBand::FullTime || !s.log_daily_wage) continue;
        Cell& c = cells[{*s.muni_id, group_of(s)}];
        if (s.year == window.base_year) {
            c.sum0 += *s.log_daily_wage;
            ++c.n0;
        } else {
            c.sum1 += *s.log_daily_wage;
            ++c.n1;
        }
    }

    PseudoPanelResult out;
    std::vector<const ShockMeasure*> rows;
    std::vector<double> weights, outcome;
    std::map<int, std::size_t> groups_seen;
    for (const auto& [key, c] : cells) {
        if (c.n0 == 0 || c.n1 == 0) {
            ++out.dropped_cells;
            continue;
        }
        const ShockMeasure* m = studydetail::find_measure(shocks, key.first);
        if (!m) {
            ++out.dropped_cells;
            continue;
        }
        rows.push_back(m);
        weights.push_back(static_cast<double>(c.n0));
        outcome.push_back(c.sum1 / static_cast<double>(c.n1) - c.sum0 / static_cast<double>(c.n0));
        ++groups_seen[key.second];
    }
    require(!rows.empty(), "every pseudo-panel cell is empty in one of the periods");
    out.n_cells = rows.size();
    out.n_groups = groups_seen.size();
    auto frame = studydetail::make_frame(std::move(rows), std::move(weights));
    out.result = studydetail::frame_regression(frame, outcome, opts);
    return out;
}

enum class Subgroup { NonEmployed, Age50Plus, Routine, Abstract };

inline const char* subgroup_name(Subgroup s) {
    switch (s) {
        case Subgroup::NonEmployed: return "non-employed";
        case Subgroup::Age50Plus: return "age 50 plus";
        case Subgroup::Routine: return "routine";
        case Subgroup::Abstract: return "abstract";
    }
    throw input_error("unknown subgroup");
}

struct SubgroupReport {
    Subgroup subgroup = Subgroup::Age50Plus;
    RegressionResult displacement;  // share losing (or not finding) employment
    RegressionResult wage;          // stayer or re-entrant wage response
    std::size_t n_workers = 0;      // subgroup members at base
    std::size_t n_wage_observations = 0;
};

// Displacement and wage responses for one subgroup. Employed subgroups follow
// the usual construction restricted to members (base-year attributes decide
// membership). For the previously non-employed, displacement is the share of
// the base-year pool without a job at the end year, so the coefficient is the
// negative of the job-finding response, and wages compare the re-entry wage
// at the origin with the imputed pre-spell baseline.
inline SubgroupReport subgroup_study(const std::vector<SpellRecord>& spells,
                                     const ShockMeasureSet& shocks, const StudyWindow& window,
                                     Subgroup subgroup, const InferenceOptions& opts = {}) {
    studydetail::check_window(shocks, window);
    SubgroupReport rep;
    rep.subgroup = subgroup;

    if (subgroup == Subgroup::NonEmployed) {
        auto pool = build_nonemployed_sample(spells, window.base_year);
        require(!pool.empty(), "the non-employed pool is empty at the base year");
        rep.n_workers = pool.size();
        std::unordered_map<std::int64_t, const SpellRecord*> end_spells;
        for (const auto& s : spells)
            if (s.year == window.end_year && s.nationality == Nationality::Native && s.employed)
                end_spells[s.worker_id] = &s;

        std::map<std::int64_t, std::pair<std::size_t, std::size_t>> by_muni;  // pool, jobless
        std::vector<double> wage_outcome, wage_age;
        std::vector<const ShockMeasure*> wage_munis;
        for (const auto& w : pool) {
            auto& acc = by_muni[w.origin_muni];
            ++acc.first;
            auto it = end_spells.find(w.worker_id);
            if (it == end_spells.end()) ++acc.second;
            if (it == end_spells.end() || !w.imputed_log_wage) continue;
            const SpellRecord& s = *it->second;
            if (!studydetail::fulltime_wage(&s) || *s.muni_id != w.origin_muni) continue;
            const ShockMeasure* m = studydetail::find_measure(shocks, w.origin_muni);
            if (!m) continue;
            wage_outcome.push_back(*s.log_daily_wage - *w.imputed_log_wage);
            wage_age.push_back(static_cast<double>(w.age));
            wage_munis.push_back(m);
        }

        std::vector<const ShockMeasure*> rows;
        std::vector<double> weights, jobless;
        for (const auto& [id, acc] : by_muni) {
            const ShockMeasure* m = studydetail::find_measure(shocks, id);
            if (!m) continue;
            rows.push_back(m);
            weights.push_back(static_cast<double>(acc.first));
            jobless.push_back(static_cast<double>(acc.second) / static_cast<double>(acc.first));
        }
        require(!rows.empty(), "no non-employed pool municipality carries a shock measure");
        auto frame = studydetail::make_frame(std::move(rows), std::move(weights));
        rep.displacement = studydetail::frame_regression(frame, jobless, opts);
        require(!wage_outcome.empty(), "no re-employed workers with an imputed baseline wage");
        rep.n_wage_observations = wage_outcome.size();
        rep.wage = studydetail::individual_regression(wage_outcome, wage_munis, wage_age, opts);
        return rep;
    }

    auto member = [subgroup](const SpellRecord& s) {
        switch (subgroup) {
            case Subgroup::Age50Plus: return s.age >= 50;
            case Subgroup::Routine: return s.task_class == TaskClass::Routine;
            case Subgroup::Abstract: return s.task_class == TaskClass::Abstract;
            case Subgroup::NonEmployed: return false;
        }
        return false;
    };

    auto paired = studydetail::pair_spells(spells, window.base_year, window.end_year);
    struct Cell {
        double e0 = 0, exits = 0;
    };
    std::map<std::int64_t, Cell> by_muni;
    std::vector<double> wage_outcome, wage_age;
    std::vector<const ShockMeasure*> wage_munis;
    std::size_t members = 0;
    for (const auto& [wid, p] : paired) {
        if (!p.base || !p.base->employed || !member(*p.base)) continue;
        ++members;
        Cell& c = by_muni[*p.base->muni_id];
        double fte = fte_weight(*p.base->hours_band);
        c.e0 += fte;
        bool employed_end = p.end && p.end->employed;
        if (!employed_end) c.exits += fte;
        if (studydetail::fulltime_wage(p.base) && studydetail::fulltime_wage(p.end) &&
            *p.base->muni_id == *p.end->muni_id) {
            const ShockMeasure* m = studydetail::find_measure(shocks, *p.base->muni_id);
            if (!m) continue;
            wage_outcome.push_back(*p.end->log_daily_wage - *p.base->log_daily_wage);
            wage_age.push_back(static_cast<double>(p.base->age));
            wage_munis.push_back(m);
        }
    }
    require(members > 0, std::string("subgroup is empty at the base year: ") + subgroup_name(subgroup));
    rep.n_workers = members;

    std::vector<const ShockMeasure*> rows;
    std::vector<double> weights, displaced;
    for (const auto& [id, c] : by_muni) {
        const ShockMeasure* m = studydetail::find_measure(shocks, id);
        if (!m || c.e0 <= 0) continue;
        rows.push_back(m);
        weights.push_back(c.e0);
        displaced.push_back(c.exits / c.e0);
    }
    require(!rows.empty(), "no subgroup municipality carries a shock measure");
    auto frame = studydetail::make_frame(std::move(rows), std::move(weights));
    rep.displacement = studydetail::frame_regression(frame, displaced, opts);
    require(!wage_outcome.empty(), "no full-time subgroup stayers with wages in both periods");
    rep.n_wage_observations = wage_outcome.size();
    rep.wage = studydetail::individual_regression(wage_outcome, wage_munis, wage_age, opts);
    return rep;
}

}  // namespace lmshock
