#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "lmshock/common.hpp"

// Small open-economy model of a local labor market hit by an inflow of
// foreign workers who are paid locally but consume elsewhere. Output is
// produced from efficiency units of labor under a Cobb-Douglas technology,
// capital is supplied with a finite elasticity, and worker groups differ in
// productivity and in how elastically they supply labor.

namespace lmshock {

// One worker group: efficiency weight theta, labor supply elasticity eta,
// and its baseline employment mass.
struct WorkerType {
    double theta = 1.0;
    double eta = 0.0;
    double count = 0.0;
};

struct EconomySpec {
    double alpha = 0.3;            // labor share exponent
    double lambda_capital = 1.0;   // capital supply elasticity, may be +inf
    double tfp = 1.0;
    std::vector<WorkerType> types;
    // When set, bypasses the Cobb-Douglas mapping. Empirically recovered
    // values of the inverse demand elasticity can fall outside the range the
    // technology can represent, and calibrated runs need them anyway.
    std::optional<double> phi_override;
};

// Shock expressed as a headcount employment share, together with the ratio of
// the efficiency-weighted (wage bill) shock to the headcount shock.
struct ShockSpec {
    double head_shock = 1.0;
    double c_ratio = 1.0;
};

// Inverse labor demand elasticity implied by the technology. With a capital
// supply elasticity of zero the wage does not move at all, and with perfectly
// elastic capital the full Cobb-Douglas curvature -alpha comes through.
inline double inverse_demand_elasticity(double alpha, double lambda_capital) {
    require(alpha > 0.0 && alpha < 1.0,
            "inverse_demand_elasticity: alpha must lie in (0,1)");
    require(lambda_capital >= 0.0,
            "inverse_demand_elasticity: capital supply elasticity must be >= 0");
    if (std::isinf(lambda_capital)) return -alpha;
    return -alpha * lambda_capital / (1.0 - alpha + lambda_capital);
}

struct WeightedElasticities {
    double eta_eff = 0.0;  // efficiency-weighted mean supply elasticity
    double eta_pop = 0.0;  // population-weighted mean supply elasticity
};

inline WeightedElasticities weighted_elasticities(const std::vector<WorkerType>& types) {
    require(!types.empty(), "weighted_elasticities: at least one worker type required");
    double eff_w = 0.0, eff_we = 0.0, pop_w = 0.0, pop_we = 0.0;
    for (const auto& t : types) {
        require(t.theta > 0.0, "weighted_elasticities: theta must be positive");
        require(t.eta >= 0.0, "weighted_elasticities: eta must be non-negative");
        require(t.count > 0.0, "weighted_elasticities: employment count must be positive");
        eff_w += t.theta * t.count;
        eff_we += t.theta * t.count * t.eta;
        pop_w += t.count;
        pop_we += t.count * t.eta;
    }
    return {eff_we / eff_w, pop_we / pop_w};
}

// Equilibrium parameters in reduced form: inverse demand elasticity phi, the
// two elasticity aggregates, and the wage-bill ratio c of the shock.
struct StructuralParams {
    double phi = 0.0;
    double eta_eff = 0.0;
    double eta_pop = 0.0;
    double c = 1.0;
};

// Responses per unit headcount shock.
struct ModelResponses {
    double pure_wage = 0.0;      // price effect holding composition fixed
    double employment = 0.0;     // native employment headcount response
    double regional_wage = 0.0;  // observed mean wage response incl. composition
};

inline ModelResponses forward_responses(const StructuralParams& p) {
    require(p.eta_eff >= 0.0 && p.eta_pop >= 0.0,
            "forward_responses: elasticity aggregates must be non-negative");
    double denom = 1.0 - p.phi * p.eta_eff;
    require(std::abs(denom) > 1e-12,
            "forward_responses: equilibrium is singular (phi * eta_eff == 1)");
    ModelResponses r;
    r.pure_wage = p.phi * p.c / denom;
    r.employment = p.eta_pop * r.pure_wage;
    r.regional_wage = r.pure_wage * (1.0 + p.eta_eff - p.eta_pop);
    return r;
}

inline StructuralParams structural_params(const EconomySpec& econ, const ShockSpec& shock) {
    StructuralParams p;
    p.phi = econ.phi_override ? *econ.phi_override
                              : inverse_demand_elasticity(econ.alpha, econ.lambda_capital);
    auto w = weighted_elasticities(econ.types);
    p.eta_eff = w.eta_eff;
    p.eta_pop = w.eta_pop;
    p.c = shock.c_ratio;
    return p;
}

inline ModelResponses forward_responses(const EconomySpec& econ, const ShockSpec& shock) {
    return forward_responses(structural_params(econ, shock));
}

// Per-type transition-probability slopes with respect to the local wage
// ratio, from which the supply elasticity decomposes into margins.
struct FlowResponse {
    double stay_employed_slope = 0.0;  // d P(employed anywhere | employed here) / d(w1/w0)
    double entry_slope = 0.0;          // d P(takes a job here | not employed here) / d(w1/w0)
    double relocation_slope = 0.0;     // d P(employed elsewhere | employed here) / d(w1/w0)
    double base_employment_prob = 0.0; // P(employed here at baseline)
};

struct ElasticityComponents {
    double displacement = 0.0;
    double crowding_out = 0.0;
    double relocation = 0.0;
};

inline double signed_sum(const ElasticityComponents& c) {
    return c.displacement + c.crowding_out - c.relocation;
}

// The displacement margin is the stay-employed slope itself, the crowding-out
// margin is the entry slope rescaled by the relative size of the pool of
// potential entrants, and the relocation margin enters the total with a
// negative sign.
inline ElasticityComponents elasticity_components(const FlowResponse& f) {
    require(f.base_employment_prob > 0.0 && f.base_employment_prob < 1.0,
            "elasticity_components: baseline employment probability must lie in (0,1)");
    ElasticityComponents c;
    c.displacement = f.stay_employed_slope;
    c.crowding_out = f.entry_slope *
                     (1.0 - f.base_employment_prob) / f.base_employment_prob;
    c.relocation = f.relocation_slope;
    return c;
}

} // namespace lmshock
