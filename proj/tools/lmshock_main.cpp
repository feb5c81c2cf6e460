// Command line front end for the shock pipeline.
//
//   lmshock simulate --seed 7 --out panel/
//   lmshock estimate --spells panel/spells.csv --study wages --out tables/
//   lmshock report   --out run/
//   lmshock validate --seed 7 --out check/
//
// A configuration file provides the same settings as the flags; flags given
// on the command line win.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "lmshock/pipeline.hpp"

namespace {

struct CliState {
    lmshock::RunConfig rc;
    std::string config_path;
    // Raw flag values, applied over the config file only when present.
    std::uint64_t seed = 0;
    std::size_t reps = 0;
    int base_year = 0;
    int end_year = 0;
    std::string out_dir;
    std::string spells, munis, survey;
    std::vector<std::string> studies;
};

void add_common_flags(CLI::App& cmd, CliState& st) {
    cmd.add_option("--config", st.config_path, "configuration file (key = value sections)")
        ->check(CLI::ExistingFile);
    cmd.add_option("--seed", st.seed, "random seed");
    cmd.add_option("--out", st.out_dir, "output directory");
}

void add_study_flags(CLI::App& cmd, CliState& st) {
    cmd.add_option("--reps", st.reps, "wild cluster bootstrap replications");
    cmd.add_option("--base-year", st.base_year, "study base year");
    cmd.add_option("--end-year", st.end_year, "study end year");
    cmd.add_option("--study", st.studies,
                   "study to run (repeatable): employment, wages, routine, subgroups, "
                   "pseudo-panel, structural, event-study, all");
}

bool given(const CLI::App& cmd, const std::string& name) {
    const CLI::Option* opt = cmd.get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
}

// Settle precedence: defaults, then the config file, then explicit flags.
lmshock::RunConfig resolve(const CLI::App& cmd, CliState& st, lmshock::Command command) {
    lmshock::RunConfig rc;
    rc.command = command;
    if (!st.config_path.empty())
        lmshock::apply_config_file(rc, lmshock::ConfigFile::load(st.config_path));
    if (given(cmd, "--seed")) rc.seed = st.seed;
    if (given(cmd, "--out")) rc.out_dir = st.out_dir;
    if (given(cmd, "--reps")) rc.bootstrap_reps = st.reps;
    if (given(cmd, "--base-year")) rc.window.base_year = st.base_year;
    if (given(cmd, "--end-year")) rc.window.end_year = st.end_year;
    if (given(cmd, "--study")) rc.studies = st.studies;
    if (given(cmd, "--spells")) rc.spells_path = st.spells;
    if (given(cmd, "--munis")) rc.municipalities_path = st.munis;
    if (given(cmd, "--survey")) rc.survey_path = st.survey;
    return rc;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"shock exposure panel: simulation, estimation, and validation"};
    app.require_subcommand(1);

    CliState st;

    CLI::App* sim = app.add_subcommand("simulate", "write a simulated panel and its ground truth");
    add_common_flags(*sim, st);

    CLI::App* est = app.add_subcommand("estimate", "run studies on an existing panel");
    add_common_flags(*est, st);
    add_study_flags(*est, st);
    est->add_option("--spells", st.spells, "spell panel CSV");
    est->add_option("--munis", st.munis, "municipality CSV (default: next to the spells file)");
    est->add_option("--survey", st.survey, "task survey CSV (needed for the routine study)");

    CLI::App* rep = app.add_subcommand("report", "simulate and estimate in one run");
    add_common_flags(*rep, st);
    add_study_flags(*rep, st);

    CLI::App* val = app.add_subcommand("validate", "simulate, estimate, compare to the truth");
    add_common_flags(*val, st);
    add_study_flags(*val, st);

    CLI11_PARSE(app, argc, argv);

    try {
        lmshock::Command command = lmshock::Command::Report;
        const CLI::App* active = rep;
        if (sim->parsed()) { command = lmshock::Command::Simulate; active = sim; }
        if (est->parsed()) { command = lmshock::Command::Estimate; active = est; }
        if (val->parsed()) { command = lmshock::Command::Validate; active = val; }
        const lmshock::RunConfig rc = resolve(*active, st, command);
        return lmshock::run_pipeline(rc, std::cerr);
    } catch (const std::exception& e) {
        std::cerr << "lmshock: " << e.what() << "\n";
        return 1;
    }
}
