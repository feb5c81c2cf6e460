#pragma once

// Structural microsimulator. Generates longitudinal worker spells whose
// municipality aggregates respond to a cross-border commuting shock with
// known, closed-form coefficients, so every estimator in the library can be
// tested against an exact oracle.
//
// The generator is built around three exactness devices:
//
//  1. Threshold sampling. Each worker's post-base employment path is driven
//     by a single persistent uniform draw compared against moving cutpoints,
//     so the probability of each base-to-year-t transition class equals the
//     configured marginal exactly, for every horizon, with full persistence.
//  2. Stationary baseline flows. The no-shock economy sits at the fixed point
//     of a two-state employment chain, so expected baseline entries equal
//     expected baseline exits at every horizon and the composition algebra
//     below needs no growth correction.
//  3. Matched log/level composition. Worker productivity types are placed so
//     that the gap in mean log wages between types equals the relative gap in
//     efficiency units. Selection effects measured in mean-log-wage space then
//     reproduce the efficiency-weighted aggregation of the equilibrium model
//     exactly, not just to first order.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "lmshock/common.hpp"
#include "lmshock/model.hpp"
#include "lmshock/panel.hpp"
#include "lmshock/rng.hpp"

namespace lmshock {

struct MunicipalitySpec {
    std::int64_t muni_id = 0;
    std::int64_t district_id = 0;
    bool is_border = false;
    double distance_km = 0.0;  // to the nearest crossing; used only when is_border
    int n_workers0 = 0;        // baseline native worker count
};

struct FirstStageSpec {
    double intercept = 0.103;      // commuter inflow share at the border itself
    double slope = -0.308;         // per 100 km
    double curvature = 0.247;      // per (100 km)^2
    double control_level = 0.001;  // residual level in the interior
    double noise_half_width = 0.004;
};

struct FlowTargets {
    // Regression responses of the displacement and relocation outflow shares
    // to a unit shock; the crowding-out (entry) response is implied by the
    // population elasticity.
    double exit_response = 0.139;
    double relocation_response = 0.041;
};

struct WageSpec {
    double base_level = 3.55;
    double trend = 0.012;            // common log-wage growth per year
    double region_sd = 0.05;         // municipality wage-level effects
    double sigma_theta = 0.209;      // individual fixed effects within type
    double sigma_e = 0.123;          // transitory noise, i.i.d. per worker-year
    double censor_limit = 4.61;
    double age_linear = 0.020;
    double age_quad = -0.00022;
    double female_offset = -0.10;
    double commuter_ratio = 0.789;   // commuter mean daily wage over native
    double commuter_sd = 0.15;
};

struct HoursMix {
    double full_time = 0.80;
    double part_18_30 = 0.12;
    double part_under_18 = 0.08;
};

struct DemographicsSpec {
    double female_share = 0.40;
    double edu_none = 0.25;
    double edu_apprenticeship = 0.55;
    double edu_university = 0.20;
    // Probability of the high-elasticity (low-productivity) type by schooling;
    // the apprenticeship value is implied by the overall type share.
    double type_low_given_none = 0.80;
    double type_low_given_university = 0.20;
    int age_min = 16, age_max = 54;  // ages in the first simulated year
    int apprentice_max_age = 25;
    double apprentice_rate = 0.5;        // among young employed apprenticeship-track workers
    double apprentice_shock_gain = 0.0;  // relative shift per unit shock
};

struct TaskMixSpec {
    double routine_share = 0.709;    // overall routine share of employment
    double routine_given_low = 0.90;
    int n_routine_occupations = 60;
    int n_abstract_occupations = 30;
    double intensity_routine_lo = 0.05, intensity_routine_hi = 0.42;
    double intensity_abstract_lo = 0.58, intensity_abstract_hi = 0.95;
    double switch_annual = 0.0067;     // baseline task-class switching hazard
    double switch_shock_gain = 0.0;    // shock response of switching (off by default)
    int survey_per_occupation = 80;
    int survey_tasks_min = 5, survey_tasks_max = 12;
};

struct BaselineChain {
    // Two-state employment chain pinned at its stationary distribution.
    double employment_rate = 0.72;     // stationary employment probability
    double reentry_rate = 0.30;        // annual non-employment -> employment
    double move_rate = 0.02;           // annual cross-municipality move hazard
    double reenter_elsewhere = 0.05;   // share of re-entries landing elsewhere
};

struct SimConfig {
    std::uint64_t seed = 20210901;
    int year_min = 1986, year_max = 1995;
    int base_year = 1990;
    int default_end_year = 1993;
    int shock_onset_year = 1991;  // half exposure that year, full afterwards

    EconomySpec economy;
    FirstStageSpec first_stage;
    FlowTargets flows;
    BaselineChain chain;
    WageSpec wages;
    HoursMix hours;
    DemographicsSpec demographics;
    TaskMixSpec tasks;
    std::vector<MunicipalitySpec> municipalities;
};

struct GroundTruth {
    // Structural block.
    double phi = 0, c = 0, eta_eff = 0, eta_pop = 0;
    double gamma_W = 0, beta_R = 0, gamma_R = 0;

    struct TypeResponse {
        double theta = 0, eta = 0, share = 0;
        double displacement = 0, crowding_out = 0, relocation = 0;
    };
    std::vector<TypeResponse> types;

    // Flow-share regression coefficients per unit shock.
    double exit_coef = 0, inflow_coef = 0, relocate_coef = 0;

    // Mean-log-wage decomposition terms per unit shock over the default window.
    double wage_inflow_term = 0, wage_outflow_term = 0;

    double gamma_PP = 0;  // grouped (pseudo-panel) wage response

    double eta_routine = 0, eta_abstract = 0;
    double beta_routine = 0, beta_abstract = 0;
    double routine_share = 0;

    double nonemployed_entry_coef = 0;  // employment response of the base-period pool
    std::array<double, 3> beta_by_education{};  // None, Apprenticeship, University

    double sigma_delta_e = 0;
    double shock_ramp_onset = 0.5;
    int window_years = 3;
};

struct SimStats {
    double mean_latent_log_wage = 0;  // natives, before censoring
    std::size_t n_native_wage_rows = 0;
    double censored_share = 0;
    std::size_t n_commuters = 0;
};

struct SimResult {
    std::vector<SpellRecord> spells;
    std::vector<Municipality> municipalities;
    std::vector<TaskSurveyRow> survey;
    GroundTruth truth;
    SimStats stats;
};

// ---------------------------------------------------------------------------
// Calibration helpers.

// Places two worker types so the mean-log gap equals the relative efficiency
// gap (device 3 above), then solves their supply elasticities from the two
// weighted-mean targets.
inline EconomySpec two_type_economy(double theta_lo, double theta_hi, double eta_pop_target,
                                    double eta_eff_target, double phi) {
    require(theta_hi > theta_lo && theta_lo > 0, "need 0 < theta_lo < theta_hi");
    double span = theta_hi - theta_lo;
    double level = span / std::log(theta_hi / theta_lo);  // the matched mean efficiency
    double s_lo = (theta_hi - level) / span;
    require(s_lo > 0 && s_lo < 1, "type shares must be interior");
    double s_hi = 1.0 - s_lo;

    // s_lo eta_lo + s_hi eta_hi = pop target
    // s_lo theta_lo eta_lo + s_hi theta_hi eta_hi = eff target * level
    double a11 = s_lo, a12 = s_hi;
    double a21 = s_lo * theta_lo, a22 = s_hi * theta_hi;
    double b1 = eta_pop_target, b2 = eta_eff_target * level;
    double det = a11 * a22 - a12 * a21;
    require(std::abs(det) > 1e-12, "degenerate type system");
    double eta_lo = (b1 * a22 - a12 * b2) / det;
    double eta_hi = (a11 * b2 - b1 * a21) / det;
    require(eta_lo >= 0 && eta_hi >= 0, "calibration produced a negative elasticity");

    EconomySpec econ;
    econ.types = {{theta_lo, eta_lo, s_lo}, {theta_hi, eta_hi, s_hi}};
    econ.phi_override = phi;
    return econ;
}

inline std::vector<MunicipalitySpec> default_municipalities(std::uint64_t seed,
                                                            int n_total = 1500,
                                                            int n_border = 290,
                                                            int n_districts = 40) {
    require(n_total > n_border && n_border > 0, "invalid municipality counts");
    require(n_districts >= 2, "need at least two districts");
    std::vector<MunicipalitySpec> out;
    out.reserve(static_cast<std::size_t>(n_total));
    // Border municipalities fill the first fifth of districts, mirroring a
    // frontier strip; the rest are interior.
    int border_districts = std::max(1, n_districts / 5);
    Rng rng(stream_seed(seed, 0xD15u));
    for (int i = 0; i < n_total; ++i) {
        MunicipalitySpec m;
        m.muni_id = i + 1;
        m.is_border = i < n_border;
        m.district_id = m.is_border
                            ? 1 + i % border_districts
                            : 1 + border_districts + (i - n_border) % (n_districts - border_districts);
        m.distance_km = m.is_border ? rng.uniform(0.0, 80.0) : 0.0;
        double ln = rng.normal(4.25, 0.35);
        m.n_workers0 = static_cast<int>(std::lround(std::clamp(std::exp(ln), 50.0, 260.0)));
        out.push_back(m);
    }
    return out;
}

inline SimConfig default_config(std::uint64_t seed = 20210901) {
    SimConfig cfg;
    cfg.seed = seed;
    cfg.economy = two_type_economy(0.75, 1.35, 4.64, 3.68, -1.95);
    cfg.municipalities = default_municipalities(seed);
    return cfg;
}

// ---------------------------------------------------------------------------
// Shock draw.

inline double draw_shock(const MunicipalitySpec& muni, const SimConfig& cfg, Rng& rng) {
    require(!muni.is_border || muni.distance_km >= 0.0, "border municipality with negative distance");
    const auto& fs = cfg.first_stage;
    double noise = fs.noise_half_width > 0 ? rng.uniform(-fs.noise_half_width, fs.noise_half_width)
                                           : 0.0;
    double level;
    if (muni.is_border) {
        double x = muni.distance_km / 100.0;
        level = fs.intercept + fs.slope * x + fs.curvature * x * x;
    } else {
        level = fs.control_level;
    }
    return std::max(0.0, level + noise);
}

// ---------------------------------------------------------------------------
// Internal calibration shared by ground_truth and simulate_panel.

namespace simdetail {

struct TypeCalib {
    double theta = 0, log_theta = 0, eta = 0, share = 0;
    double d = 0, c = 0, r = 0;  // displacement / crowding-out / relocation slopes
    double p_routine = 0;
    std::array<double, 3> p_given_edu{};  // P(type | education), by edu index
};

struct Calibration {
    StructuralParams params;
    ModelResponses responses;
    double g = 0;  // |gamma_W|
    double d_bar = 0, c_bar = 0, r_bar = 0;
    std::vector<TypeCalib> types;
    std::array<double, 3> edu_shares{};
    std::array<double, 3> type_low_given_edu{};
};

inline double q_exit(const BaselineChain& ch, int tau) {
    double p = ch.employment_rate;
    double exit_rate = ch.reentry_rate * (1.0 - p) / p;  // stationarity
    double s = 1.0 - ch.reentry_rate - exit_rate;
    return (1.0 - p) * (1.0 - std::pow(s, tau));
}

inline double q_reenter(const BaselineChain& ch, int tau) {
    double p = ch.employment_rate;
    double exit_rate = ch.reentry_rate * (1.0 - p) / p;
    double s = 1.0 - ch.reentry_rate - exit_rate;
    return p * (1.0 - std::pow(s, tau));
}

inline double q_move(const BaselineChain& ch, int tau) {
    return 1.0 - std::pow(1.0 - ch.move_rate, tau);
}

inline double shock_exposure(const SimConfig& cfg, int year) {
    if (year < cfg.shock_onset_year) return 0.0;
    if (year == cfg.shock_onset_year) return 0.5;
    return 1.0;
}

inline Calibration calibrate(const SimConfig& cfg) {
    Calibration cal;
    cal.params = structural_params(cfg.economy, ShockSpec{1.0, cfg.wages.commuter_ratio});
    cal.responses = forward_responses(cal.params);
    require(cal.responses.pure_wage <= 0.0, "the wage response must be non-positive");
    cal.g = -cal.responses.pure_wage;

    double eta_pop = cal.params.eta_pop;
    if (cal.g > 0 && eta_pop > 0) {
        cal.d_bar = cfg.flows.exit_response / cal.g;
        cal.r_bar = cfg.flows.relocation_response / cal.g;
        cal.c_bar = eta_pop - cal.d_bar + cal.r_bar;
        require(cal.c_bar > 0, "flow targets leave no room for an entry response");
    }

    double total = 0;
    for (const auto& t : cfg.economy.types) total += t.count;
    const auto& dg = cfg.demographics;
    cal.edu_shares = {dg.edu_none, dg.edu_apprenticeship, dg.edu_university};

    for (const auto& t : cfg.economy.types) {
        TypeCalib k;
        k.theta = t.theta;
        k.log_theta = std::log(t.theta);
        k.eta = t.eta;
        k.share = t.count / total;
        if (eta_pop > 0 && cal.g > 0) {
            k.d = t.eta * cal.d_bar / eta_pop;
            k.c = t.eta * cal.c_bar / eta_pop;
            k.r = t.eta * cal.r_bar / eta_pop;
        }
        cal.types.push_back(k);
    }

    // Education composition: the low-productivity type share by schooling,
    // with the apprenticeship level implied by the overall share.
    require(cal.types.size() == 2, "the education and task layers assume two types");
    double s_lo = cal.types[0].share;
    double implied = (s_lo - dg.edu_none * dg.type_low_given_none -
                      dg.edu_university * dg.type_low_given_university) /
                     dg.edu_apprenticeship;
    require(implied > 0 && implied < 1,
            "education type mix incompatible with the overall type share");
    cal.type_low_given_edu = {dg.type_low_given_none, implied, dg.type_low_given_university};
    for (int e = 0; e < 3; ++e) {
        cal.types[0].p_given_edu[static_cast<std::size_t>(e)] =
            cal.type_low_given_edu[static_cast<std::size_t>(e)];
        cal.types[1].p_given_edu[static_cast<std::size_t>(e)] =
            1.0 - cal.type_low_given_edu[static_cast<std::size_t>(e)];
    }

    // Routine occupation probability by type, implied by the overall share.
    double p_r_low = cfg.tasks.routine_given_low;
    double p_r_high = (cfg.tasks.routine_share - s_lo * p_r_low) / cal.types[1].share;
    require(p_r_high > 0 && p_r_high < 1,
            "routine share incompatible with the type mix");
    cal.types[0].p_routine = p_r_low;
    cal.types[1].p_routine = p_r_high;
    return cal;
}

inline void validate_probability(double p, const std::string& name) {
    require(p >= 0.0 && p <= 1.0, name + " must be a probability");
}

inline void validate(const SimConfig& cfg) {
    require(cfg.year_min < cfg.year_max, "empty simulation span");
    require(cfg.base_year - cfg.year_min >= 4,
            "need at least four pre-base years for employment histories");
    require(cfg.year_max > cfg.base_year, "no post-base years to simulate");
    require(cfg.default_end_year > cfg.base_year && cfg.default_end_year <= cfg.year_max,
            "default end year outside the simulated span");
    require(cfg.shock_onset_year > cfg.base_year, "the shock must start after the base year");

    const auto& ch = cfg.chain;
    require(ch.employment_rate > 0 && ch.employment_rate < 1, "employment rate must be interior");
    double exit_rate = ch.reentry_rate * (1.0 - ch.employment_rate) / ch.employment_rate;
    require(ch.reentry_rate > 0 && ch.reentry_rate + exit_rate < 1,
            "employment chain rates out of range");
    validate_probability(ch.move_rate, "move rate");
    validate_probability(ch.reenter_elsewhere, "re-enter-elsewhere share");

    const auto& h = cfg.hours;
    require(std::abs(h.full_time + h.part_18_30 + h.part_under_18 - 1.0) < 1e-12,
            "hours mix must sum to one");
    validate_probability(h.full_time, "full-time share");

    const auto& dg = cfg.demographics;
    require(std::abs(dg.edu_none + dg.edu_apprenticeship + dg.edu_university - 1.0) < 1e-12,
            "education shares must sum to one");
    validate_probability(dg.female_share, "female share");
    validate_probability(dg.type_low_given_none, "type share given no schooling");
    validate_probability(dg.type_low_given_university, "type share given university");
    validate_probability(cfg.tasks.routine_share, "routine share");
    validate_probability(cfg.tasks.routine_given_low, "routine share of the low type");
    require(cfg.tasks.switch_annual >= 0 && cfg.tasks.switch_annual < 1,
            "annual switch hazard out of range");
    require(cfg.first_stage.noise_half_width >= 0, "shock noise width must be non-negative");
    require(cfg.first_stage.control_level >= 0 && cfg.first_stage.intercept >= 0,
            "shock levels must be non-negative");
    require(dg.age_min >= 16 && dg.age_max >= dg.age_min,
            "initial age window must start at 16 or later");
    require(dg.age_max + (cfg.year_max - cfg.year_min) <= 65,
            "workers would age past 65 inside the panel");
    validate_probability(dg.apprentice_rate, "apprenticeship rate");

    require(cfg.wages.sigma_theta >= 0 && cfg.wages.sigma_e >= 0 && cfg.wages.region_sd >= 0 &&
                cfg.wages.commuter_sd >= 0,
            "wage dispersions must be non-negative");
    require(cfg.wages.commuter_ratio > 0, "commuter wage ratio must be positive");
    require(cfg.tasks.n_routine_occupations > 0 && cfg.tasks.n_abstract_occupations > 0,
            "need occupations of both classes");
    require(cfg.tasks.survey_per_occupation > 0 && cfg.tasks.survey_tasks_min >= 1 &&
                cfg.tasks.survey_tasks_max >= cfg.tasks.survey_tasks_min,
            "task survey shape invalid");

    require(!cfg.municipalities.empty(), "no municipalities configured");
    std::vector<std::int64_t> ids;
    bool any_border = false, any_control = false;
    for (const auto& m : cfg.municipalities) {
        require(m.n_workers0 >= 40, "municipality " + std::to_string(m.muni_id) +
                                        " too small for stable flow calibration");
        require(!m.is_border || m.distance_km >= 0, "negative border distance");
        ids.push_back(m.muni_id);
        (m.is_border ? any_border : any_control) = true;
    }
    std::sort(ids.begin(), ids.end());
    require(std::adjacent_find(ids.begin(), ids.end()) == ids.end(),
            "duplicate municipality ids");
    require(any_border, "no border municipalities");
    require(any_control, "no control municipalities");

    // Worst-case probability headroom: at the largest plausible measured
    // shock, the entry suppression must stay inside the home re-entry
    // probability for every municipality and type.
    Calibration cal = calibrate(cfg);
    if (cal.g > 0 && cal.params.eta_pop > 0) {
        double worst_shock = std::max(cfg.first_stage.intercept, cfg.first_stage.control_level) +
                             cfg.first_stage.noise_half_width;
        for (const auto& m : cfg.municipalities) {
            double min_total_fte = 0.5 * (ch.employment_rate * m.n_workers0 - 2.0);
            double i_worst = worst_shock + 0.25 / std::max(min_total_fte, 1.0);
            // The binding year is the first full-exposure year.
            int tau = cfg.shock_onset_year + 1 - cfg.base_year;
            double home = (1.0 - ch.reenter_elsewhere) * q_reenter(ch, tau);
            int n_lo = static_cast<int>(std::lround(m.n_workers0 * cal.types[0].share));
            std::array<int, 2> n_type{n_lo, m.n_workers0 - n_lo};
            for (std::size_t ti = 0; ti < cal.types.size(); ++ti) {
                const auto& k = cal.types[ti];
                int e0i = static_cast<int>(std::lround(n_type[ti] * ch.employment_rate));
                double e0 = e0i;
                double pool = n_type[ti] - e0i;
                if (pool < 1) pool = 1;
                double delta = k.c * cal.g * i_worst * e0 / pool;
                require(delta <= 0.98 * home,
                        "municipality " + std::to_string(m.muni_id) +
                            ": entry suppression would exceed the re-entry probability; "
                            "increase n_workers0 or soften the shock");
                double p_exit_worst = q_exit(ch, cfg.year_max - cfg.base_year) +
                                      k.d * cal.g * i_worst +
                                      q_move(ch, cfg.year_max - cfg.base_year);
                require(p_exit_worst < 1.0, "exit plus relocation probability exceeds one");
            }
        }
    }
}

}  // namespace simdetail

// ---------------------------------------------------------------------------
// Ground truth.

inline GroundTruth ground_truth(const SimConfig& cfg) {
    simdetail::validate(cfg);
    simdetail::Calibration cal = simdetail::calibrate(cfg);

    GroundTruth t;
    t.phi = cal.params.phi;
    t.c = cal.params.c;
    t.eta_eff = cal.params.eta_eff;
    t.eta_pop = cal.params.eta_pop;
    t.gamma_W = cal.responses.pure_wage;
    t.beta_R = cal.responses.employment;
    t.gamma_R = cal.responses.regional_wage;
    t.window_years = cfg.default_end_year - cfg.base_year;
    t.shock_ramp_onset = 0.5;
    t.sigma_delta_e = std::sqrt(2.0) * cfg.wages.sigma_e;

    double g = cal.g;
    t.exit_coef = g * cal.d_bar;
    t.inflow_coef = t.gamma_W * cal.c_bar;
    t.relocate_coef = -g * cal.r_bar;

    double mean_log_theta = 0, mean_eta = 0;
    for (const auto& k : cal.types) {
        mean_log_theta += k.share * k.log_theta;
        mean_eta += k.share * k.eta;
        t.types.push_back({k.theta, k.eta, k.share, k.d, k.c, k.r});
    }
    double cov_log_dr = 0, cov_log_c = 0, cov_log_eta = 0;
    for (const auto& k : cal.types) {
        cov_log_dr += k.share * (k.log_theta - mean_log_theta) * (k.d - k.r);
        cov_log_c += k.share * (k.log_theta - mean_log_theta) * k.c;
        cov_log_eta += k.share * (k.log_theta - mean_log_theta) * (k.eta - mean_eta);
    }

    int tau = t.window_years;
    double q_lv = simdetail::q_exit(cfg.chain, tau) + simdetail::q_move(cfg.chain, tau);
    // Entries balance exits at the stationary baseline, so the entry share
    // over the window equals the leave share.
    double q_in = q_lv;
    t.wage_outflow_term = g * cov_log_dr / (1.0 - q_lv);
    t.wage_inflow_term = -g * cov_log_c + q_in * g * cov_log_dr / (1.0 - q_lv);

    // Internal consistency: the decomposition terms must rebuild the observed
    // wage response, and the mean-log covariance must reproduce the
    // efficiency-vs-head aggregation wedge.
    if (t.eta_pop > 0) {
        require(std::abs(t.gamma_W + t.wage_inflow_term - t.wage_outflow_term - t.gamma_R) < 1e-10,
                "composition terms fail to rebuild the observed wage response");
        require(std::abs(cov_log_eta - (t.eta_eff - t.eta_pop)) < 1e-9,
                "type placement breaks the log/level composition match");
    }

    // Grouped (cell-level) wage response: cells mix the types according to
    // their education, so each cell keeps a within-cell composition term.
    double cell_cov_sum = 0;
    if (cal.types.size() == 2) {
        double dlog = cal.types[1].log_theta - cal.types[0].log_theta;
        double deta = cal.types[0].eta - cal.types[1].eta;
        for (int e = 0; e < 3; ++e) {
            double pi = cal.type_low_given_edu[static_cast<std::size_t>(e)];
            cell_cov_sum += cal.edu_shares[static_cast<std::size_t>(e)] *
                            (-pi * (1.0 - pi) * dlog * deta);
        }
    }
    t.gamma_PP = t.gamma_W * (1.0 + cell_cov_sum);

    // Task-class aggregates.
    double r_share = 0, r_eta = 0, a_share = 0, a_eta = 0;
    for (const auto& k : cal.types) {
        r_share += k.share * k.p_routine;
        r_eta += k.share * k.p_routine * k.eta;
        a_share += k.share * (1.0 - k.p_routine);
        a_eta += k.share * (1.0 - k.p_routine) * k.eta;
    }
    t.routine_share = r_share;
    t.eta_routine = r_share > 0 ? r_eta / r_share : 0.0;
    t.eta_abstract = a_share > 0 ? a_eta / a_share : 0.0;
    t.beta_routine = t.gamma_W * t.eta_routine;
    t.beta_abstract = t.gamma_W * t.eta_abstract;

    // Employment response of the base-period non-employed pool: suppression
    // scales with the employment-to-pool ratio.
    double pool_ratio = cfg.chain.employment_rate / (1.0 - cfg.chain.employment_rate);
    t.nonemployed_entry_coef = t.gamma_W * pool_ratio * cal.c_bar;

    for (int e = 0; e < 3; ++e) {
        double eta_e = 0;
        for (const auto& k : cal.types)
            eta_e += k.p_given_edu[static_cast<std::size_t>(e)] * k.eta;
        t.beta_by_education[static_cast<std::size_t>(e)] = t.gamma_W * eta_e;
    }
    return t;
}

// ---------------------------------------------------------------------------
// Panel generation.

namespace simdetail {

struct OccupationInfo {
    std::int64_t code = 0;
    TaskClass task_class = TaskClass::Routine;
    double abstract_intensity = 0;
};

inline std::vector<OccupationInfo> make_catalog(const SimConfig& cfg) {
    std::vector<OccupationInfo> cat;
    Rng rng(stream_seed(cfg.seed, 0x0CCu));
    for (int i = 0; i < cfg.tasks.n_routine_occupations; ++i)
        cat.push_back({100 + i, TaskClass::Routine,
                       rng.uniform(cfg.tasks.intensity_routine_lo, cfg.tasks.intensity_routine_hi)});
    for (int i = 0; i < cfg.tasks.n_abstract_occupations; ++i)
        cat.push_back({300 + i, TaskClass::Abstract,
                       rng.uniform(cfg.tasks.intensity_abstract_lo, cfg.tasks.intensity_abstract_hi)});
    return cat;
}

inline std::vector<TaskSurveyRow> make_survey(const SimConfig& cfg,
                                              const std::vector<OccupationInfo>& catalog) {
    std::vector<TaskSurveyRow> rows;
    Rng rng(stream_seed(cfg.seed, 0x54Cu));
    for (const auto& occ : catalog) {
        for (int i = 0; i < cfg.tasks.survey_per_occupation; ++i) {
            int total = cfg.tasks.survey_tasks_min +
                        static_cast<int>(rng.below(static_cast<std::uint64_t>(
                            cfg.tasks.survey_tasks_max - cfg.tasks.survey_tasks_min + 1)));
            int n_abs = 0;
            for (int j = 0; j < total; ++j)
                if (rng.uniform() < occ.abstract_intensity) ++n_abs;
            rows.push_back({occ.code, occ.code * 1000 + i + 1, total - n_abs, n_abs});
        }
    }
    return rows;
}

}  // namespace simdetail

inline SimResult simulate_panel(const SimConfig& cfg) {
    simdetail::validate(cfg);
    simdetail::Calibration cal = simdetail::calibrate(cfg);
    const auto& ch = cfg.chain;
    const int n_years = cfg.year_max - cfg.year_min + 1;
    const int n_munis = static_cast<int>(cfg.municipalities.size());

    SimResult result;
    result.truth = ground_truth(cfg);
    auto catalog = simdetail::make_catalog(cfg);
    result.survey = simdetail::make_survey(cfg, catalog);
    for (const auto& m : cfg.municipalities)
        result.municipalities.push_back({m.muni_id, m.district_id, m.is_border, m.distance_km});

    struct Worker {
        std::int64_t id = 0;
        int type = 0;
        int home = 0;              // index into municipalities
        int age_first = 0;         // age in year_min
        bool female = false;
        Education edu = Education::None;
        HoursBand band = HoursBand::FullTime;
        float zeta = 0;            // individual wage effect
        float u_forward = 0;       // threshold draw, post-base path
        float u_backward = 0;      // threshold draw, pre-base path
        float u_switch = 0;        // task-class switching draw
        std::int32_t dest = -1;     // relocation destination (muni index)
        std::int32_t origin = -1;   // pre-base location for backward movers
        std::int16_t occ0 = 0;      // index into catalog
        std::int16_t occ1 = -1;     // after a task switch, if any
        bool employed_base = false;
    };

    std::vector<Worker> workers;
    std::vector<double> f_region(static_cast<std::size_t>(n_munis));
    std::vector<double> shock_target(static_cast<std::size_t>(n_munis));
    std::vector<double> total_fte_base(static_cast<std::size_t>(n_munis), 0.0);
    // Per municipality and type: exact base-year employment and pool counts.
    std::vector<std::array<int, 2>> e0_count(static_cast<std::size_t>(n_munis));
    std::vector<std::array<int, 2>> pool_count(static_cast<std::size_t>(n_munis));

    auto draw_band = [&](Rng& rng) {
        double u = rng.uniform();
        if (u < cfg.hours.full_time) return HoursBand::FullTime;
        if (u < cfg.hours.full_time + cfg.hours.part_18_30) return HoursBand::Part18to30;
        return HoursBand::PartUnder18;
    };
    auto draw_occupation = [&](Rng& rng, int type) {
        bool routine = rng.uniform() < cal.types[static_cast<std::size_t>(type)].p_routine;
        int lo = routine ? 0 : cfg.tasks.n_routine_occupations;
        int n = routine ? cfg.tasks.n_routine_occupations : cfg.tasks.n_abstract_occupations;
        return static_cast<std::int16_t>(lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(n))));
    };

    // Pass 1: populations, base-year employment, pre-base paths, base FTE.
    std::int64_t next_id = 1;
    for (int mi = 0; mi < n_munis; ++mi) {
        const auto& spec = cfg.municipalities[static_cast<std::size_t>(mi)];
        Rng rng(stream_seed(cfg.seed, 0x10u, static_cast<std::uint64_t>(spec.muni_id)));
        f_region[static_cast<std::size_t>(mi)] = rng.normal(0.0, cfg.wages.region_sd);
        Rng rng_shock(stream_seed(cfg.seed, 0x11u, static_cast<std::uint64_t>(spec.muni_id)));
        shock_target[static_cast<std::size_t>(mi)] = draw_shock(spec, cfg, rng_shock);

        int n = spec.n_workers0;
        int n_lo = static_cast<int>(std::lround(n * cal.types[0].share));
        std::array<int, 2> n_type{n_lo, n - n_lo};
        for (int type = 0; type < 2; ++type) {
            int e0 = static_cast<int>(std::lround(n_type[static_cast<std::size_t>(type)] *
                                                  ch.employment_rate));
            e0_count[static_cast<std::size_t>(mi)][static_cast<std::size_t>(type)] = e0;
            pool_count[static_cast<std::size_t>(mi)][static_cast<std::size_t>(type)] =
                n_type[static_cast<std::size_t>(type)] - e0;
            for (int j = 0; j < n_type[static_cast<std::size_t>(type)]; ++j) {
                Worker w;
                w.id = next_id++;
                w.type = type;
                w.home = mi;
                w.employed_base = j < e0;
                w.age_first = cfg.demographics.age_min +
                              static_cast<int>(rng.below(static_cast<std::uint64_t>(
                                  cfg.demographics.age_max - cfg.demographics.age_min + 1)));
                w.female = rng.uniform() < cfg.demographics.female_share;
                // Education conditional on type (Bayes from the configured
                // type-by-education mix), keeping the type counts exact.
                {
                    double u = rng.uniform();
                    double total_p = 0;
                    int e_pick = 2;
                    for (int e = 0; e < 3; ++e) {
                        double pe = cal.edu_shares[static_cast<std::size_t>(e)] *
                                    cal.types[static_cast<std::size_t>(type)]
                                        .p_given_edu[static_cast<std::size_t>(e)] /
                                    cal.types[static_cast<std::size_t>(type)].share;
                        total_p += pe;
                        if (u < total_p) {
                            e_pick = e;
                            break;
                        }
                    }
                    w.edu = e_pick == 0 ? Education::None
                                        : (e_pick == 1 ? Education::Apprenticeship
                                                       : Education::University);
                }
                w.band = draw_band(rng);
                w.zeta = static_cast<float>(rng.normal(0.0, cfg.wages.sigma_theta));
                w.u_forward = static_cast<float>(rng.uniform());
                w.u_backward = static_cast<float>(rng.uniform());
                w.u_switch = static_cast<float>(rng.uniform());
                w.occ0 = draw_occupation(rng, type);
                int dest = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_munis - 1)));
                w.dest = dest >= mi ? dest + 1 : dest;
                int origin = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_munis - 1)));
                w.origin = origin >= mi ? origin + 1 : origin;
                if (w.employed_base)
                    total_fte_base[static_cast<std::size_t>(mi)] += fte_weight(w.band);
                workers.push_back(w);
            }
        }
    }

    // Pass 2: commuter rosters sized to the drawn target share of base FTE,
    // and the measured shock path they imply.
    struct Commuter {
        std::int64_t id = 0;
        int muni = 0;
        int age_first = 0;
        bool female = false;
        Education edu = Education::None;
        HoursBand band = HoursBand::FullTime;
        std::int16_t occ = 0;
        bool from_onset = false;  // already present in the half-exposure year
    };
    std::vector<Commuter> commuters;
    std::vector<std::vector<double>> measured_I(
        static_cast<std::size_t>(n_munis), std::vector<double>(static_cast<std::size_t>(n_years), 0.0));

    std::int64_t next_commuter_id = 10'000'000;
    for (int mi = 0; mi < n_munis; ++mi) {
        const auto& spec = cfg.municipalities[static_cast<std::size_t>(mi)];
        Rng rng(stream_seed(cfg.seed, 0x20u, static_cast<std::uint64_t>(spec.muni_id)));
        double target = shock_target[static_cast<std::size_t>(mi)] *
                        total_fte_base[static_cast<std::size_t>(mi)];
        std::vector<HoursBand> bands;
        double cum = 0;
        while (cum + 1.0 <= target) {
            HoursBand b = draw_band(rng);
            bands.push_back(b);
            cum += fte_weight(b);
        }
        // Top off with the band closest to the remainder; the achieved total
        // then sits within 0.25 FTE of the target, a slack the config
        // validator accounts for when bounding the measured shock.
        double residual = target - cum;
        double best_err = residual;  // option: add nobody
        std::optional<HoursBand> pick;
        for (HoursBand b : {HoursBand::PartUnder18, HoursBand::Part18to30, HoursBand::FullTime}) {
            double err = std::abs(residual - fte_weight(b));
            if (err < best_err) {
                best_err = err;
                pick = b;
            }
        }
        if (pick) bands.push_back(*pick);

        double full = 0;
        for (auto b : bands) full += fte_weight(b);
        double half_cum = 0;
        std::size_t onset_count = 0;
        for (auto b : bands) {
            if (half_cum >= 0.5 * full) break;
            half_cum += fte_weight(b);
            ++onset_count;
        }

        double onset_fte = 0;
        for (std::size_t j = 0; j < bands.size(); ++j) {
            Commuter c;
            c.id = next_commuter_id++;
            c.muni = mi;
            c.age_first = 20 + static_cast<int>(rng.below(36));
            c.female = rng.uniform() < 0.35;
            double ue = rng.uniform();
            c.edu = ue < 0.6 ? Education::None
                             : (ue < 0.9 ? Education::Apprenticeship : Education::University);
            c.band = bands[j];
            bool routine = rng.uniform() < 0.8;
            int lo = routine ? 0 : cfg.tasks.n_routine_occupations;
            int nn = routine ? cfg.tasks.n_routine_occupations : cfg.tasks.n_abstract_occupations;
            c.occ = static_cast<std::int16_t>(lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(nn))));
            c.from_onset = j < onset_count;
            if (c.from_onset) onset_fte += fte_weight(c.band);
            commuters.push_back(c);
        }

        double base_fte = total_fte_base[static_cast<std::size_t>(mi)];
        for (int year = cfg.shock_onset_year; year <= cfg.year_max; ++year) {
            double fte = year == cfg.shock_onset_year ? onset_fte : full;
            measured_I[static_cast<std::size_t>(mi)][static_cast<std::size_t>(year - cfg.year_min)] =
                base_fte > 0 ? fte / base_fte : 0.0;
        }
    }

    // Pass 3 + 4: per-worker paths and spell emission, wages accumulated for
    // the commuter anchor along the way.
    result.spells.reserve(workers.size() * static_cast<std::size_t>(n_years) + commuters.size() * 5);
    std::vector<std::vector<double>> native_level_sum(
        static_cast<std::size_t>(n_munis), std::vector<double>(static_cast<std::size_t>(n_years), 0.0));
    std::vector<std::vector<double>> native_fte_sum(
        static_cast<std::size_t>(n_munis), std::vector<double>(static_cast<std::size_t>(n_years), 0.0));

    double latent_log_sum = 0;
    std::size_t latent_n = 0, censored_n = 0;

    const double g = cal.g;
    std::vector<Rng> wage_rngs;  // one per municipality, fixed emission order
    for (int mi = 0; mi < n_munis; ++mi)
        wage_rngs.emplace_back(stream_seed(cfg.seed, 0x30u,
                                           static_cast<std::uint64_t>(
                                               cfg.municipalities[static_cast<std::size_t>(mi)].muni_id)));

    for (const auto& w : workers) {
        const auto& ktype = cal.types[static_cast<std::size_t>(w.type)];
        Rng& rng = wage_rngs[static_cast<std::size_t>(w.home)];
        int e0 = e0_count[static_cast<std::size_t>(w.home)][static_cast<std::size_t>(w.type)];
        int pool = pool_count[static_cast<std::size_t>(w.home)][static_cast<std::size_t>(w.type)];

        for (int year = cfg.year_min; year <= cfg.year_max; ++year) {
            int age = w.age_first + (year - cfg.year_min);
            bool employed;
            int loc = w.home;
            if (year == cfg.base_year) {
                employed = w.employed_base;
            } else if (year < cfg.base_year) {
                int tau = cfg.base_year - year;
                if (w.employed_base) {
                    double p_exit = simdetail::q_exit(ch, tau);
                    double p_move = simdetail::q_move(ch, tau);
                    if (w.u_backward < p_exit) {
                        employed = false;
                    } else if (w.u_backward < p_exit + p_move) {
                        employed = true;
                        loc = w.origin;
                    } else {
                        employed = true;
                    }
                } else {
                    employed = w.u_backward < simdetail::q_reenter(ch, tau);
                }
            } else {
                int tau = year - cfg.base_year;
                double I = measured_I[static_cast<std::size_t>(w.home)]
                                     [static_cast<std::size_t>(year - cfg.year_min)];
                if (w.employed_base) {
                    double p_exit = simdetail::q_exit(ch, tau) + ktype.d * g * I;
                    double p_move = std::max(0.0, simdetail::q_move(ch, tau) - ktype.r * g * I);
                    if (w.u_forward < p_exit) {
                        employed = false;
                    } else if (w.u_forward < p_exit + p_move) {
                        employed = true;
                        loc = w.dest;
                    } else {
                        employed = true;
                    }
                } else {
                    double base_reenter = simdetail::q_reenter(ch, tau);
                    double suppression =
                        pool > 0 ? ktype.c * g * I * static_cast<double>(e0) / pool : 0.0;
                    double p_home = std::max(0.0, (1.0 - ch.reenter_elsewhere) * base_reenter -
                                                      suppression);
                    double p_else = ch.reenter_elsewhere * base_reenter;
                    if (w.u_forward < p_home) {
                        employed = true;
                    } else if (w.u_forward < p_home + p_else) {
                        employed = true;
                        loc = w.dest;
                    } else {
                        employed = false;
                    }
                }
            }

            SpellRecord s;
            s.worker_id = w.id;
            s.year = year;
            s.age = age;
            s.female = w.female;
            s.education = w.edu;
            s.employed = employed;
            if (employed) {
                const auto& mspec = cfg.municipalities[static_cast<std::size_t>(loc)];
                s.muni_id = mspec.muni_id;
                s.district_id = mspec.district_id;
                s.hours_band = w.band;

                // Task class: a single possible switch over the panel.
                int occ_idx = w.occ0;
                if (year > cfg.base_year) {
                    int tau = year - cfg.base_year;
                    double I = measured_I[static_cast<std::size_t>(w.home)]
                                         [static_cast<std::size_t>(year - cfg.year_min)];
                    double p_sw = 1.0 - std::pow(1.0 - cfg.tasks.switch_annual, tau);
                    p_sw = std::clamp(p_sw * (1.0 + cfg.tasks.switch_shock_gain * I), 0.0, 1.0);
                    if (w.u_switch < p_sw) occ_idx = -1;  // resolved below
                }
                const simdetail::OccupationInfo* occ;
                if (occ_idx >= 0) {
                    occ = &catalog[static_cast<std::size_t>(occ_idx)];
                } else {
                    // Deterministic opposite-class occupation for switchers.
                    const auto& from = catalog[static_cast<std::size_t>(w.occ0)];
                    bool to_routine = from.task_class == TaskClass::Abstract;
                    int lo = to_routine ? 0 : cfg.tasks.n_routine_occupations;
                    int nn = to_routine ? cfg.tasks.n_routine_occupations
                                        : cfg.tasks.n_abstract_occupations;
                    occ = &catalog[static_cast<std::size_t>(
                        lo + static_cast<int>(w.id % static_cast<std::int64_t>(nn)))];
                }
                s.occupation_code = occ->code;
                s.task_class = occ->task_class;

                double I_loc = measured_I[static_cast<std::size_t>(loc)]
                                         [static_cast<std::size_t>(year - cfg.year_min)];
                double wage = cfg.wages.base_level + cfg.wages.trend * (year - cfg.base_year) +
                              f_region[static_cast<std::size_t>(loc)] +
                              result.truth.gamma_W * I_loc + ktype.log_theta + w.zeta +
                              cfg.wages.age_linear * age + cfg.wages.age_quad * age * age +
                              (w.female ? cfg.wages.female_offset : 0.0) +
                              rng.normal(0.0, cfg.wages.sigma_e);
                latent_log_sum += wage;
                ++latent_n;
                native_level_sum[static_cast<std::size_t>(loc)]
                                [static_cast<std::size_t>(year - cfg.year_min)] +=
                    fte_weight(w.band) * std::exp(wage);
                native_fte_sum[static_cast<std::size_t>(loc)]
                              [static_cast<std::size_t>(year - cfg.year_min)] += fte_weight(w.band);
                if (wage > cfg.wages.censor_limit) {
                    s.log_daily_wage = cfg.wages.censor_limit;
                    s.censored = true;
                    ++censored_n;
                } else {
                    s.log_daily_wage = wage;
                }

                if (age <= cfg.demographics.apprentice_max_age &&
                    w.edu == Education::Apprenticeship) {
                    double I_home = measured_I[static_cast<std::size_t>(w.home)]
                                              [static_cast<std::size_t>(year - cfg.year_min)];
                    double p_app = std::clamp(cfg.demographics.apprentice_rate *
                                                  (1.0 + cfg.demographics.apprentice_shock_gain * I_home),
                                              0.0, 1.0);
                    s.apprentice = rng.uniform() < p_app;
                } else {
                    // Keep the draw count per worker-year fixed so paths are
                    // insensitive to the apprentice structure.
                    rng.uniform();
                    s.apprentice = false;
                }
            } else {
                rng.normal(0.0, 1.0);  // fixed draw count when non-employed
                rng.uniform();
            }
            result.spells.push_back(std::move(s));
        }
    }

    // Pass 5: commuter spells, anchored to the measured native wage level.
    for (const auto& c : commuters) {
        Rng& rng = wage_rngs[static_cast<std::size_t>(c.muni)];
        const auto& mspec = cfg.municipalities[static_cast<std::size_t>(c.muni)];
        for (int year = cfg.shock_onset_year; year <= cfg.year_max; ++year) {
            if (year == cfg.shock_onset_year && !c.from_onset) continue;
            int yi = year - cfg.year_min;
            double fte = native_fte_sum[static_cast<std::size_t>(c.muni)][static_cast<std::size_t>(yi)];
            double mean_level =
                fte > 0 ? native_level_sum[static_cast<std::size_t>(c.muni)][static_cast<std::size_t>(yi)] / fte
                        : std::exp(cfg.wages.base_level);
            double mu = std::log(cfg.wages.commuter_ratio * mean_level) -
                        0.5 * cfg.wages.commuter_sd * cfg.wages.commuter_sd;
            double wage = rng.normal(mu, cfg.wages.commuter_sd);

            SpellRecord s;
            s.worker_id = c.id;
            s.year = year;
            s.employed = true;
            s.muni_id = mspec.muni_id;
            s.district_id = mspec.district_id;
            s.age = c.age_first + (year - cfg.shock_onset_year);
            s.female = c.female;
            s.education = c.edu;
            s.hours_band = c.band;
            s.nationality = Nationality::Commuter;
            const auto& occ = catalog[static_cast<std::size_t>(c.occ)];
            s.occupation_code = occ.code;
            s.task_class = occ.task_class;
            if (wage > cfg.wages.censor_limit) {
                s.log_daily_wage = cfg.wages.censor_limit;
                s.censored = true;
            } else {
                s.log_daily_wage = wage;
            }
            result.spells.push_back(std::move(s));
        }
    }

    result.stats.mean_latent_log_wage = latent_n > 0 ? latent_log_sum / static_cast<double>(latent_n) : 0.0;
    result.stats.n_native_wage_rows = latent_n;
    result.stats.censored_share =
        latent_n > 0 ? static_cast<double>(censored_n) / static_cast<double>(latent_n) : 0.0;
    result.stats.n_commuters = commuters.size();
    return result;
}

// Ground truth as a key=value sidecar, doubles at full round-trip precision.
inline void write_ground_truth(const std::string& path, const GroundTruth& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw input_error("cannot open " + path + " for writing");
    auto put = [&os](const std::string& key, double v) {
        char buf[400];
        std::snprintf(buf, sizeof buf, "%s = %.17g\n", key.c_str(), v);
        os << buf;
    };
    put("phi", t.phi);
    put("c", t.c);
    put("eta_eff", t.eta_eff);
    put("eta_pop", t.eta_pop);
    put("gamma_W", t.gamma_W);
    put("beta_R", t.beta_R);
    put("gamma_R", t.gamma_R);
    put("exit_coef", t.exit_coef);
    put("inflow_coef", t.inflow_coef);
    put("relocate_coef", t.relocate_coef);
    put("wage_inflow_term", t.wage_inflow_term);
    put("wage_outflow_term", t.wage_outflow_term);
    put("gamma_PP", t.gamma_PP);
    put("eta_routine", t.eta_routine);
    put("eta_abstract", t.eta_abstract);
    put("beta_routine", t.beta_routine);
    put("beta_abstract", t.beta_abstract);
    put("routine_share", t.routine_share);
    put("nonemployed_entry_coef", t.nonemployed_entry_coef);
    put("beta_edu_none", t.beta_by_education[0]);
    put("beta_edu_apprenticeship", t.beta_by_education[1]);
    put("beta_edu_university", t.beta_by_education[2]);
    put("sigma_delta_e", t.sigma_delta_e);
    put("shock_ramp_onset", t.shock_ramp_onset);
    put("window_years", t.window_years);
    for (std::size_t i = 0; i < t.types.size(); ++i) {
        std::string p = "type" + std::to_string(i) + "_";
        put(p + "theta", t.types[i].theta);
        put(p + "eta", t.types[i].eta);
        put(p + "share", t.types[i].share);
        put(p + "displacement", t.types[i].displacement);
        put(p + "crowding_out", t.types[i].crowding_out);
        put(p + "relocation", t.types[i].relocation);
    }
    os.flush();
    require(os.good(), "write failure on " + path);
}

}  // namespace lmshock
