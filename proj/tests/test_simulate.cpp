#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "lmshock/csv.hpp"
#include "lmshock/panel.hpp"
#include "lmshock/simulate.hpp"

using namespace lmshock;

namespace {

// Compact deterministic geography for fast tests: 12 border municipalities
// spanning the distance range plus 24 interior ones.
std::vector<MunicipalitySpec> small_geography(int n_border = 12, int n_control = 24) {
    std::vector<MunicipalitySpec> out;
    for (int i = 0; i < n_border + n_control; ++i) {
        MunicipalitySpec m;
        m.muni_id = i + 1;
        m.is_border = i < n_border;
        m.district_id = m.is_border ? 1 + i % 4 : 5 + (i - n_border) % 8;
        m.distance_km = m.is_border ? 78.0 * i / std::max(1, n_border - 1) : 0.0;
        m.n_workers0 = 60 + 9 * (i % 9);
        out.push_back(m);
    }
    return out;
}

SimConfig small_config(std::uint64_t seed = 7) {
    SimConfig cfg;
    cfg.seed = seed;
    cfg.economy = two_type_economy(0.75, 1.35, 4.64, 3.68, -1.95);
    cfg.municipalities = small_geography();
    return cfg;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("commuting intensity declines with distance and is flat inland") {
    SimConfig cfg = small_config();
    cfg.first_stage.noise_half_width = 0.0;
    Rng rng(1);

    MunicipalitySpec at_border{1, 1, true, 0.0, 100};
    MunicipalitySpec mid{2, 1, true, 50.0, 100};
    MunicipalitySpec inland{3, 5, false, 0.0, 100};

    CHECK(draw_shock(at_border, cfg, rng) == Catch::Approx(0.103).margin(1e-12));
    CHECK(draw_shock(mid, cfg, rng) == Catch::Approx(0.01075).margin(1e-12));
    CHECK(draw_shock(inland, cfg, rng) == Catch::Approx(0.001).margin(1e-12));
}

TEST_CASE("shock noise is bounded and clamped at zero") {
    SimConfig cfg = small_config();
    Rng rng(42);
    MunicipalitySpec inland{3, 5, false, 0.0, 100};
    int exact_zero = 0;
    for (int i = 0; i < 400; ++i) {
        double v = draw_shock(inland, cfg, rng);
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 0.001 + 0.004 + 1e-15);
        if (v == 0.0) ++exact_zero;
    }
    // Noise below -0.001 truncates; about three draws in eight do.
    CHECK(exact_zero > 80);
}

TEST_CASE("calibrated economy reproduces the benchmark responses") {
    GroundTruth t = ground_truth(small_config());
    CHECK(t.phi == Catch::Approx(-1.95).margin(1e-12));
    CHECK(t.c == Catch::Approx(0.789).margin(1e-12));
    CHECK(t.eta_pop == Catch::Approx(4.64).margin(1e-9));
    CHECK(t.eta_eff == Catch::Approx(3.68).margin(1e-9));
    CHECK(t.beta_R == Catch::Approx(-0.873).margin(5e-4));
    CHECK(t.gamma_W == Catch::Approx(-0.188).margin(5e-4));
    CHECK(t.gamma_R == Catch::Approx(-0.008).margin(5e-4));
}

TEST_CASE("flow coefficients follow from the margin targets") {
    SimConfig cfg = small_config();
    GroundTruth t = ground_truth(cfg);

    CHECK(t.exit_coef == Catch::Approx(cfg.flows.exit_response).margin(1e-12));
    CHECK(t.relocate_coef == Catch::Approx(-cfg.flows.relocation_response).margin(1e-12));
    // Bookkeeping: growth response = inflow - exit - |relocation decline|.
    CHECK(t.inflow_coef ==
          Catch::Approx(t.beta_R + cfg.flows.exit_response - cfg.flows.relocation_response)
              .margin(1e-12));
    CHECK(t.inflow_coef == Catch::Approx(-0.77515).margin(2e-4));

    double share_sum = 0.0;
    for (const auto& ty : t.types) {
        share_sum += ty.share;
        // Margins decompose each type's elasticity.
        CHECK(ty.displacement + ty.crowding_out - ty.relocation ==
              Catch::Approx(ty.eta).margin(1e-10));
    }
    CHECK(share_sum == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("composition terms rebuild the regional wage response") {
    GroundTruth t = ground_truth(small_config());
    CHECK(t.gamma_W + t.wage_inflow_term - t.wage_outflow_term ==
          Catch::Approx(t.gamma_R).margin(1e-10));
    // Values derived by hand from the covariance algebra over a three-year
    // window with the default chain.
    CHECK(t.wage_outflow_term == Catch::Approx(-0.028288).margin(2e-4));
    CHECK(t.wage_inflow_term == Catch::Approx(0.152364).margin(2e-4));
}

TEST_CASE("grouped wage response sits between individual and regional") {
    GroundTruth t = ground_truth(small_config());
    CHECK(t.gamma_PP > t.gamma_W);
    CHECK(t.gamma_PP < t.gamma_R);
    CHECK(t.gamma_PP == Catch::Approx(-0.036852).margin(5e-4));
}

TEST_CASE("task-class aggregates split the population elasticity") {
    GroundTruth t = ground_truth(small_config());
    CHECK(t.routine_share == Catch::Approx(0.709).margin(1e-12));
    CHECK(t.eta_routine == Catch::Approx(5.6148).margin(1e-2));
    CHECK(t.eta_abstract == Catch::Approx(2.2646).margin(1e-2));
    // Shares recombine to the population mean.
    CHECK(t.routine_share * t.eta_routine + (1.0 - t.routine_share) * t.eta_abstract ==
          Catch::Approx(t.eta_pop).margin(1e-9));
    CHECK(t.beta_routine == Catch::Approx(t.gamma_W * t.eta_routine).margin(1e-12));
    CHECK(t.beta_routine < t.beta_abstract);  // routine jobs respond more strongly
}

TEST_CASE("employment responses fall with schooling") {
    GroundTruth t = ground_truth(small_config());
    double none = t.beta_by_education[0];
    double app = t.beta_by_education[1];
    double uni = t.beta_by_education[2];
    CHECK(none < app);
    CHECK(app < uni);
    CHECK(uni < 0.0);
    CHECK(none == Catch::Approx(-1.1850).margin(1e-2));
    CHECK(uni == Catch::Approx(-0.4404).margin(1e-2));
}

TEST_CASE("entry suppression for the non-employed pool scales with the stock ratio") {
    SimConfig cfg = small_config();
    GroundTruth t = ground_truth(cfg);
    double pool_ratio = cfg.chain.employment_rate / (1.0 - cfg.chain.employment_rate);
    double c_bar = -t.inflow_coef / -t.gamma_W;  // recover the entry margin
    CHECK(t.nonemployed_entry_coef == Catch::Approx(t.gamma_W * pool_ratio * c_bar).margin(1e-9));
    CHECK(t.nonemployed_entry_coef == Catch::Approx(-1.9932).margin(2e-3));
}

TEST_CASE("inelastic supply shuts down every flow response but not wages") {
    SimConfig cfg = small_config();
    cfg.economy.types[0].eta = 0.0;
    cfg.economy.types[1].eta = 0.0;
    GroundTruth t = ground_truth(cfg);
    CHECK(t.beta_R == 0.0);
    CHECK(t.exit_coef == 0.0);
    CHECK(t.inflow_coef == 0.0);
    CHECK(t.relocate_coef == 0.0);
    CHECK(t.gamma_W == Catch::Approx(-1.95 * 0.789).margin(1e-12));
    CHECK(t.gamma_R == Catch::Approx(t.gamma_W).margin(1e-12));

    SimConfig tiny = cfg;
    tiny.municipalities = small_geography(4, 8);
    REQUIRE_NOTHROW(simulate_panel(tiny));
}

TEST_CASE("configuration validation rejects broken setups") {
    SECTION("hours mix must sum to one") {
        SimConfig cfg = small_config();
        cfg.hours.full_time = 0.9;
        REQUIRE_THROWS_AS(ground_truth(cfg), input_error);
    }
    SECTION("education shares must sum to one") {
        SimConfig cfg = small_config();
        cfg.demographics.edu_none = 0.5;
        REQUIRE_THROWS_AS(ground_truth(cfg), input_error);
    }
    SECTION("geography must include both border and interior") {
        SimConfig cfg = small_config();
        for (auto& m : cfg.municipalities) m.is_border = false;
        REQUIRE_THROWS_AS(ground_truth(cfg), input_error);
    }
    SECTION("municipalities must carry enough workers") {
        SimConfig cfg = small_config();
        cfg.municipalities[0].n_workers0 = 20;
        REQUIRE_THROWS_WITH(ground_truth(cfg), Catch::Matchers::ContainsSubstring("too small"));
    }
    SECTION("duplicate municipality ids") {
        SimConfig cfg = small_config();
        cfg.municipalities[1].muni_id = cfg.municipalities[0].muni_id;
        REQUIRE_THROWS_AS(ground_truth(cfg), input_error);
    }
    SECTION("needs pre-base years for histories") {
        SimConfig cfg = small_config();
        cfg.year_min = 1988;
        REQUIRE_THROWS_AS(ground_truth(cfg), input_error);
    }
    SECTION("routine share incompatible with the type mix") {
        SimConfig cfg = small_config();
        cfg.tasks.routine_share = 0.2;  // below what the low type alone implies
        REQUIRE_THROWS_AS(ground_truth(cfg), input_error);
    }
    SECTION("probability fields are range-checked") {
        SimConfig cfg = small_config();
        cfg.demographics.type_low_given_none = 1.4;
        REQUIRE_THROWS_AS(ground_truth(cfg), input_error);
    }
}

TEST_CASE("panel generation is byte-stable across identical runs") {
    SimConfig cfg = small_config(404);
    SimResult a = simulate_panel(cfg);
    SimResult b = simulate_panel(cfg);
    REQUIRE(a.spells.size() == b.spells.size());

    auto dir = std::filesystem::temp_directory_path();
    auto pa = dir / "lmshock_sim_a.csv";
    auto pb = dir / "lmshock_sim_b.csv";
    write_spells(pa.string(), a.spells);
    write_spells(pb.string(), b.spells);
    CHECK(slurp(pa) == slurp(pb));
    std::filesystem::remove(pa);
    std::filesystem::remove(pb);

    SimResult c = simulate_panel(small_config(405));
    bool differs = c.spells.size() != a.spells.size();
    if (!differs) {
        for (std::size_t i = 0; i < a.spells.size(); ++i) {
            if (a.spells[i].employed != c.spells[i].employed ||
                a.spells[i].log_daily_wage != c.spells[i].log_daily_wage) {
                differs = true;
                break;
            }
        }
    }
    CHECK(differs);
}

TEST_CASE("base-year employment counts are exact by construction") {
    SimConfig cfg = small_config(11);
    SimResult res = simulate_panel(cfg);

    std::map<std::int64_t, int> employed, total;
    for (const auto& s : res.spells) {
        if (s.nationality != Nationality::Native || s.year != cfg.base_year) continue;
        // Home municipality of non-employed natives is not recorded, so count
        // totals from the full native population instead.
        ++total[0];
        if (s.employed) {
            ++employed[*s.muni_id];
            ++employed[0];
        }
    }
    int n_total = 0;
    for (const auto& m : cfg.municipalities) n_total += m.n_workers0;
    REQUIRE(total[0] == n_total);
    double rate = static_cast<double>(employed[0]) / n_total;
    // Each municipality-by-type cell rounds to within half a worker.
    CHECK(rate == Catch::Approx(cfg.chain.employment_rate)
                      .margin(static_cast<double>(cfg.municipalities.size()) / n_total));

    for (const auto& m : cfg.municipalities) {
        double r = static_cast<double>(employed[m.muni_id]) / m.n_workers0;
        CHECK(std::abs(r - cfg.chain.employment_rate) <= 1.0 / m.n_workers0 + 1e-12);
    }
}

TEST_CASE("flow identities hold exactly on simulated data") {
    SimConfig cfg = small_config(21);
    SimResult res = simulate_panel(cfg);
    auto transitions = build_transitions(res.spells, cfg.base_year, cfg.default_end_year);
    auto agg = aggregate_flows(transitions, true);

    REQUIRE(agg.excluded_no_base.empty());
    REQUIRE(agg.flows.size() == cfg.municipalities.size());
    for (const auto& f : agg.flows) {
        REQUIRE(f.E0 > 0);
        CHECK(f.E0 == Catch::Approx(f.e_stay + f.e_exit + f.e_relocate).margin(1e-9));
        CHECK(f.E1 == Catch::Approx(f.e_stay + f.inflow()).margin(1e-9));
        CHECK(f.E0_routine ==
              Catch::Approx(f.e_stay_routine + f.e_upgrade + f.e_exit_routine + f.e_relocate_routine)
                  .margin(1e-9));
        CHECK(f.E1_routine ==
              Catch::Approx(f.e_stay_routine + f.e_downgrade + f.e_inflow_routine).margin(1e-9));
    }
}

TEST_CASE("measured commuter share tracks the drawn intensity") {
    SimConfig cfg = small_config(33);
    SimResult res = simulate_panel(cfg);

    std::map<std::int64_t, double> native_fte_base, comm_92, comm_91;
    for (const auto& s : res.spells) {
        if (!s.employed) continue;
        double w = fte_weight(*s.hours_band);
        if (s.nationality == Nationality::Native && s.year == cfg.base_year)
            native_fte_base[*s.muni_id] += w;
        if (s.nationality == Nationality::Commuter && s.year == 1992) comm_92[*s.muni_id] += w;
        if (s.nationality == Nationality::Commuter && s.year == 1991) comm_91[*s.muni_id] += w;
    }

    int with_commuters = 0;
    for (const auto& m : cfg.municipalities) {
        double base = native_fte_base[m.muni_id];
        REQUIRE(base > 0);
        double measured = comm_92[m.muni_id] / base;
        double x = m.distance_km / 100.0;
        double level = m.is_border
                           ? cfg.first_stage.intercept + cfg.first_stage.slope * x +
                                 cfg.first_stage.curvature * x * x
                           : cfg.first_stage.control_level;
        double slack = cfg.first_stage.noise_half_width + 0.2501 / base;
        CHECK(measured <= std::max(0.0, level) + slack + 1e-12);
        CHECK(measured >= std::max(0.0, level - slack) - 1e-12);
        if (comm_92[m.muni_id] > 0) {
            ++with_commuters;
            // Half exposure in the onset year, within one worker's hours.
            CHECK(std::abs(comm_91[m.muni_id] - 0.5 * comm_92[m.muni_id]) <= 1.0 + 1e-12);
        }
    }
    CHECK(with_commuters >= 8);  // near-border municipalities all qualify

    for (const auto& s : res.spells) {
        if (s.nationality != Nationality::Commuter) continue;
        REQUIRE(s.employed);
        REQUIRE(s.year >= 1991);
    }
}

TEST_CASE("wage growth dispersion matches the transitory noise") {
    SimConfig cfg = small_config(55);
    SimResult res = simulate_panel(cfg);

    std::set<std::int64_t> border;
    for (const auto& m : cfg.municipalities)
        if (m.is_border) border.insert(m.muni_id);

    std::map<std::int64_t, const SpellRecord*> base_rows;
    for (const auto& s : res.spells) {
        if (s.nationality != Nationality::Native || !s.employed || s.censored) continue;
        if (s.hours_band != HoursBand::FullTime) continue;
        if (border.count(*s.muni_id) > 0) continue;
        if (s.year == cfg.base_year) base_rows[s.worker_id] = &s;
    }
    std::vector<double> growth;
    for (const auto& s : res.spells) {
        if (s.year != cfg.default_end_year || !s.employed || s.censored) continue;
        if (s.hours_band != HoursBand::FullTime) continue;
        auto it = base_rows.find(s.worker_id);
        if (it == base_rows.end() || it->second->muni_id != s.muni_id) continue;
        growth.push_back(*s.log_daily_wage - *it->second->log_daily_wage);
    }
    REQUIRE(growth.size() > 400);
    double mean = 0;
    for (double g : growth) mean += g;
    mean /= static_cast<double>(growth.size());
    double ss = 0;
    for (double g : growth) ss += (g - mean) * (g - mean);
    double sd = std::sqrt(ss / (static_cast<double>(growth.size()) - 1.0));

    double target = std::sqrt(2.0) * cfg.wages.sigma_e;
    CHECK(sd == Catch::Approx(target).epsilon(0.05));
    CHECK(ground_truth(cfg).sigma_delta_e == Catch::Approx(target).margin(1e-12));
}

TEST_CASE("censoring lands near the configured tail and imputation undoes it") {
    SimConfig cfg = small_config(66);
    SimResult res = simulate_panel(cfg);

    CHECK(res.stats.censored_share > 0.005);
    CHECK(res.stats.censored_share < 0.08);

    auto spells = res.spells;
    CensorImputationReport report;
    impute_censored(spells, cfg.wages.censor_limit, &report);
    REQUIRE(report.imputed > 0);

    double sum = 0;
    std::size_t n = 0;
    for (const auto& s : spells) {
        if (s.nationality != Nationality::Native || !s.employed) continue;
        sum += *s.log_daily_wage;
        ++n;
    }
    REQUIRE(n == res.stats.n_native_wage_rows);
    double mean = sum / static_cast<double>(n);
    CHECK(mean == Catch::Approx(res.stats.mean_latent_log_wage).epsilon(0.005));
}

TEST_CASE("apprentice flags only appear on young apprenticeship-track workers") {
    SimConfig cfg = small_config(77);
    SimResult res = simulate_panel(cfg);
    int n_app = 0;
    for (const auto& s : res.spells) {
        if (!s.apprentice) continue;
        ++n_app;
        REQUIRE(s.employed);
        REQUIRE(s.age <= cfg.demographics.apprentice_max_age);
        REQUIRE(s.education == Education::Apprenticeship);
    }
    CHECK(n_app > 50);
}

TEST_CASE("non-employed sample construction works on simulated histories") {
    SimConfig cfg = small_config(88);
    SimResult res = simulate_panel(cfg);
    auto sample = build_nonemployed_sample(res.spells, cfg.base_year);
    REQUIRE(!sample.empty());

    std::set<std::int64_t> muni_ids;
    for (const auto& m : cfg.municipalities) muni_ids.insert(m.muni_id);
    for (const auto& w : sample) REQUIRE(muni_ids.count(w.origin_muni) == 1);

    int pool = 0;
    for (const auto& s : res.spells)
        if (s.nationality == Nationality::Native && s.year == cfg.base_year && !s.employed) ++pool;
    double ratio = static_cast<double>(sample.size()) / pool;
    // Expected reach-back share of the pool over four years.
    CHECK(ratio > 0.55);
    CHECK(ratio < 0.72);
}

TEST_CASE("commuter wages sit below native wages by the configured ratio") {
    SimConfig cfg = small_config(99);
    SimResult res = simulate_panel(cfg);

    double comm_sum = 0, nat_sum = 0;
    double comm_fte = 0, nat_fte = 0;
    std::set<std::int64_t> comm_munis;
    for (const auto& s : res.spells)
        if (s.nationality == Nationality::Commuter && s.year >= 1992) comm_munis.insert(*s.muni_id);
    for (const auto& s : res.spells) {
        if (!s.employed || s.year < 1992 || s.censored) continue;
        if (comm_munis.count(*s.muni_id) == 0) continue;
        double w = fte_weight(*s.hours_band);
        if (s.nationality == Nationality::Commuter) {
            comm_sum += w * std::exp(*s.log_daily_wage);
            comm_fte += w;
        } else {
            nat_sum += w * std::exp(*s.log_daily_wage);
            nat_fte += w;
        }
    }
    REQUIRE(comm_fte > 0);
    REQUIRE(nat_fte > 0);
    double ratio = (comm_sum / comm_fte) / (nat_sum / nat_fte);
    CHECK(ratio == Catch::Approx(cfg.wages.commuter_ratio).margin(0.06));
}

TEST_CASE("default configuration has the documented scale") {
    SimConfig cfg = default_config();
    int border = 0;
    long long workers = 0;
    std::set<std::int64_t> districts;
    for (const auto& m : cfg.municipalities) {
        if (m.is_border) ++border;
        workers += m.n_workers0;
        districts.insert(m.district_id);
        REQUIRE(m.n_workers0 >= 50);
        REQUIRE(m.n_workers0 <= 260);
    }
    CHECK(cfg.municipalities.size() == 1500);
    CHECK(border == 290);
    CHECK(districts.size() == 40);
    CHECK(workers > 90'000);
    CHECK(workers < 135'000);

    // The full-scale configuration passes the probability-headroom audit.
    REQUIRE_NOTHROW(ground_truth(cfg));
}

TEST_CASE("ground truth sidecar round-trips through text") {
    GroundTruth t = ground_truth(small_config());
    auto path = std::filesystem::temp_directory_path() / "lmshock_truth.txt";
    write_ground_truth(path.string(), t);
    std::string text = slurp(path);
    std::filesystem::remove(path);

    REQUIRE(text.find("gamma_W = ") != std::string::npos);
    REQUIRE(text.find("beta_R = ") != std::string::npos);
    REQUIRE(text.find("type0_crowding_out = ") != std::string::npos);

    // The written gamma_W parses back to the exact double.
    auto pos = text.find("gamma_W = ") + 10;
    double parsed = std::stod(text.substr(pos));
    CHECK(parsed == t.gamma_W);
}

TEST_CASE("task survey reflects the catalog intensities") {
    SimConfig cfg = small_config();
    SimResult res = simulate_panel(cfg);
    REQUIRE(static_cast<int>(res.survey.size()) ==
            (cfg.tasks.n_routine_occupations + cfg.tasks.n_abstract_occupations) *
                cfg.tasks.survey_per_occupation);

    auto classes = classify_occupations(res.survey);
    int routine = 0, abstract_n = 0, ties = 0;
    for (const auto& [code, cls] : classes) {
        bool catalog_routine = code < 300;
        if (cls.task_class == TaskClass::Routine)
            ++routine;
        else
            ++abstract_n;
        if (cls.tie) ++ties;
        // Survey-based classification agrees with the generating catalog.
        CHECK((cls.task_class == TaskClass::Routine) == catalog_routine);
    }
    CHECK(routine == cfg.tasks.n_routine_occupations);
    CHECK(abstract_n == cfg.tasks.n_abstract_occupations);
    CHECK(ties == 0);

    // Occupation codes on spells exist in the catalog classification.
    for (const auto& s : res.spells) {
        if (!s.employed) continue;
        REQUIRE(classes.count(*s.occupation_code) == 1);
        REQUIRE(s.task_class == classes.at(*s.occupation_code).task_class);
    }
}
