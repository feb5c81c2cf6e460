#pragma once

// Recovery of the structural parameters from the estimated responses, the
// wage-bill adjustment that converts the headcount shock into efficiency
// units, and bounds on the selection bias of the stayer wage estimate.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "lmshock/common.hpp"
#include "lmshock/estimation.hpp"
#include "lmshock/model.hpp"
#include "lmshock/panel.hpp"
#include "lmshock/stats.hpp"
#include "lmshock/studies.hpp"

namespace lmshock {

// The three estimated responses to a unit commuter shock, plus the ratio c
// that scales the headcount shock into efficiency units. Field names follow
// ModelResponses, whose outputs they estimate.
struct ReducedForm {
    double employment = 0.0;     // total native employment response
    double regional_wage = 0.0;  // response of the regional mean wage
    double pure_wage = 0.0;      // stayer (composition-free) wage response
    double c = 1.0;
};

inline ReducedForm reduced_form(const ModelResponses& r, double c = 1.0) {
    return {r.employment, r.regional_wage, r.pure_wage, c};
}

// Inverts the response equations. The employment response identifies eta_pop
// through employment = eta_pop * pure_wage; the gap between the regional and
// the pure wage response identifies eta_eff through
// regional = pure * (1 + eta_eff - eta_pop); the pure wage response then
// pins down the inverse demand slope phi. Left inverse of forward_responses
// wherever that map is defined.
inline StructuralParams recover_structural(const ReducedForm& rf) {
    require(std::isfinite(rf.employment) && std::isfinite(rf.regional_wage) &&
                std::isfinite(rf.pure_wage) && std::isfinite(rf.c),
            "reduced-form responses must be finite");
    require(rf.pure_wage != 0.0,
            "pure wage response is zero, the supply elasticities are not identified");
    StructuralParams p;
    p.c = rf.c;
    p.eta_pop = rf.employment / rf.pure_wage;
    p.eta_eff = rf.regional_wage / rf.pure_wage - 1.0 + p.eta_pop;
    require(p.eta_pop != 0.0,
            "recovered population elasticity is zero, the composition wedge is undefined");
    const double denom = rf.c + (p.eta_eff / p.eta_pop) * rf.employment;
    require(std::abs(denom) > 1e-12,
            "recovery denominator c + (eta_eff / eta_pop) * employment is zero");
    p.phi = rf.pure_wage / denom;
    return p;
}

// The same inversion with the regional mean-wage response mistaken for the
// price of labor. Composition effects make the regional response far smaller
// than the stayer response, so this reading inflates the recovered supply
// elasticity by an order of magnitude and flattens the demand slope; it is
// computed to show the cost of skipping the decomposition. The composition
// wedge eta_eff / eta_pop is held at the value the full recovery implies.
inline StructuralParams recover_with_regional_wage(const ReducedForm& rf) {
    const StructuralParams full = recover_structural(rf);
    require(rf.regional_wage != 0.0,
            "regional wage response is zero, the supply elasticities are not identified");
    StructuralParams p;
    p.c = rf.c;
    p.eta_pop = rf.employment / rf.regional_wage;
    const double wedge = full.eta_eff / full.eta_pop;
    p.eta_eff = wedge * p.eta_pop;
    const double denom = rf.c + wedge * rf.employment;
    require(std::abs(denom) > 1e-12,
            "recovery denominator c + (eta_eff / eta_pop) * employment is zero");
    p.phi = rf.regional_wage / denom;
    return p;
}

// Commuter wage-bill-share shock over commuter headcount-share shock,
// aggregated over the whole region. Commuters paid below the local average
// add less labor supply in efficiency units than their count suggests, and
// the responses scale with c accordingly. Each year's commuter share is
// taken within that year, so common wage growth between the two years
// cancels and equal contemporaneous pay gives exactly c = 1. Both aggregates
// use the same spell universe: employed, with hours and a wage.
struct ShockRatio {
    double wage_bill_shock = 0.0;  // change in the commuter share of the wage bill
    double headcount_shock = 0.0;  // change in the commuter share of total FTE
    double c = 0.0;
};

inline ShockRatio shock_ratio_c(const std::vector<SpellRecord>& spells,
                                int base_year, int end_year) {
    require(base_year < end_year, "base year must precede end year");
    double bill[2] = {0.0, 0.0}, fte[2] = {0.0, 0.0};        // everyone
    double cz_bill[2] = {0.0, 0.0}, cz_fte[2] = {0.0, 0.0};  // commuters
    for (const auto& s : spells) {
        if (!s.employed || !s.hours_band || !s.log_daily_wage) continue;
        const int k = s.year == base_year ? 0 : s.year == end_year ? 1 : -1;
        if (k < 0) continue;
        const double f = fte_weight(*s.hours_band);
        const double b = f * std::exp(*s.log_daily_wage);
        bill[k] += b;
        fte[k] += f;
        if (s.nationality == Nationality::Commuter) {
            cz_bill[k] += b;
            cz_fte[k] += f;
        }
    }
    require(fte[0] > 0.0, "no base-year employment to measure the commuter shares");
    require(fte[1] > 0.0, "no end-year employment to measure the commuter shares");
    ShockRatio r;
    r.wage_bill_shock = cz_bill[1] / bill[1] - cz_bill[0] / bill[0];
    r.headcount_shock = cz_fte[1] / fte[1] - cz_fte[0] / fte[0];
    require(r.headcount_shock != 0.0,
            "the commuter share of employment did not change, the shock ratio is undefined");
    r.c = r.wage_bill_shock / r.headcount_shock;
    return r;
}

// Inputs for bounding the selection bias of the stayer wage estimate: the
// dispersion of the transitory wage-growth component, the probit staying
// equation, and the mean shock at which the bound is evaluated. The
// correlation between wage growth and the staying propensity is not
// identified, so the bias is swept over a grid of correlations.
struct SelectionBoundInputs {
    double sigma_de = 0.0;    // sd of the worker-level wage-growth shock
    double probit_a = 0.0;    // staying-probit intercept
    double probit_b = 0.0;    // staying-probit shock coefficient
    double mean_shock = 0.0;  // exposure at which the bias is evaluated
    std::vector<double> rho_grid = {-1.0, 1.0};
};

struct SelectionBounds {
    double pi = 0.0;                    // probit index at the mean shock
    double stay_share = 0.0;            // staying probability at the index
    double lambda = 0.0;                // inverse Mills ratio at the index
    double lambda_prime = 0.0;          // its derivative
    std::vector<double> bias;           // selection bias per rho_grid entry
    double bias_low = 0.0;              // extremes over the grid
    double bias_high = 0.0;
    double marginal_stay_effect = 0.0;  // d stay probability / d shock
};

// A worker stays while the index a + b * shock exceeds a standard normal
// draw. Conditional on staying, the expected transitory wage growth is
// rho * sigma_de * lambda(pi); the shock moves the index through b, so the
// stayer wage regression picks up rho * sigma_de * lambda'(pi) * b on top of
// the true effect. With |rho| <= 1 that bias is bounded either way.
inline SelectionBounds selection_bounds(const SelectionBoundInputs& in) {
    require(std::isfinite(in.sigma_de) && std::isfinite(in.probit_a) &&
                std::isfinite(in.probit_b) && std::isfinite(in.mean_shock),
            "selection-bound inputs must be finite");
    require(in.sigma_de >= 0.0, "wage-growth dispersion must be non-negative");
    require(!in.rho_grid.empty(), "the correlation grid is empty");
    SelectionBounds out;
    out.pi = in.probit_a + in.probit_b * in.mean_shock;
    const GaussianMills g = gaussian_mills(out.pi);
    out.stay_share = g.cdf;
    out.lambda = g.lambda;
    out.lambda_prime = g.lambda_prime;
    out.marginal_stay_effect = g.pdf * in.probit_b;
    out.bias.reserve(in.rho_grid.size());
    for (double rho : in.rho_grid) {
        require(std::abs(rho) <= 1.0, "correlations must lie in [-1, 1]");
        out.bias.push_back(rho * in.sigma_de * g.lambda_prime * in.probit_b);
    }
    const auto [lo, hi] = std::minmax_element(out.bias.begin(), out.bias.end());
    out.bias_low = *lo;
    out.bias_high = *hi;
    return out;
}

// Alternative route to the probit index when no staying equation is at hand:
// invert the observed share of stayers.
inline double pi_from_stay_share(double stay_share) {
    require(stay_share > 0.0 && stay_share < 1.0,
            "the stay share must lie strictly between 0 and 1");
    return norm_ppf(stay_share);
}

// Dispersion of the transitory wage-growth component, estimated as the
// residual sd of the same stayer regression that produces the pure wage
// effect. Fitted without instruments: only the residual spread matters here.
inline double estimate_sigma_de(const std::vector<SpellRecord>& spells,
                                const ShockMeasureSet& shocks,
                                const StudyWindow& window) {
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
    InferenceOptions opts;
    opts.use_instruments = false;
    const RegressionResult r = studydetail::individual_regression(outcome, munis, age, opts);
    require(outcome.size() > static_cast<std::size_t>(r.coefficients.size()),
            "too few stayers to estimate the wage-growth dispersion");
    double ssr = 0.0;
    for (std::size_t i = 0; i < outcome.size(); ++i) {
        const double a = age[i];
        const double fitted = r.coefficients[0] + r.coefficients[1] * munis[i]->shock +
                              r.coefficients[2] * a + r.coefficients[3] * a * a;
        const double resid = outcome[i] - fitted;
        ssr += resid * resid;
    }
    const auto dof = outcome.size() - static_cast<std::size_t>(r.coefficients.size());
    return std::sqrt(ssr / static_cast<double>(dof));
}

// Probit of staying employed in the same municipality on the local shock,
// over natives employed in the base year. Supplies the staying equation for
// the selection bounds.
struct StayPropensity {
    double a = 0.0;
    double b = 0.0;
    double se_a = 0.0;
    double se_b = 0.0;
    double stay_share = 0.0;
    std::size_t n = 0;
};

inline StayPropensity estimate_stay_propensity(const std::vector<SpellRecord>& spells,
                                               const ShockMeasureSet& shocks,
                                               const StudyWindow& window) {
    studydetail::check_window(shocks, window);
    auto paired = studydetail::pair_spells(spells, window.base_year, window.end_year);
    std::vector<double> stay, shock;
    for (const auto& [wid, p] : paired) {
        if (!p.base || !p.base->employed || !p.base->muni_id) continue;
        const ShockMeasure* m = studydetail::find_measure(shocks, *p.base->muni_id);
        if (!m) continue;
        const bool stayed = p.end && p.end->employed && p.end->muni_id &&
                            *p.end->muni_id == *p.base->muni_id;
        stay.push_back(stayed ? 1.0 : 0.0);
        shock.push_back(m->shock);
    }
    require(!stay.empty(), "no base-year incumbents for the staying probit");
    const auto n = static_cast<Eigen::Index>(stay.size());
    Eigen::MatrixXd X(n, 2);
    X.col(0).setOnes();
    X.col(1) = Eigen::Map<const Eigen::VectorXd>(shock.data(), n);
    const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(stay.data(), n);
    const ProbitResult r = probit_mle(y, X);
    StayPropensity out;
    out.a = r.coefficients[0];
    out.b = r.coefficients[1];
    out.se_a = std::sqrt(r.covariance(0, 0));
    out.se_b = std::sqrt(r.covariance(1, 1));
    out.stay_share = y.mean();
    out.n = stay.size();
    return out;
}

}  // namespace lmshock
