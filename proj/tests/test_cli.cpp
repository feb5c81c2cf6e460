// Configuration parsing and the batch pipeline. The pipeline cases run in
// process against a small simulated panel; the subprocess cases drive the
// installed binary through LMSHOCK_BIN, which ctest points at the build.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "lmshock/configfile.hpp"
#include "lmshock/csv.hpp"
#include "lmshock/pipeline.hpp"

using namespace lmshock;
using Catch::Matchers::ContainsSubstring;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 91;
constexpr int kMunis = 400, kBorder = 80, kDistricts = 40;

fs::path test_root() {
    static const fs::path root = [] {
        fs::path p = fs::temp_directory_path() / "lmshock_cli_tests";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

std::string slurp(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void spill(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    os << text;
    REQUIRE(os.good());
}

RunConfig small_run(Command command, const std::string& out) {
    RunConfig rc;
    rc.command = command;
    rc.seed = kSeed;
    rc.n_municipalities = kMunis;
    rc.n_border = kBorder;
    rc.n_districts = kDistricts;
    rc.out_dir = (test_root() / out).string();
    return rc;
}

// Panel written once through the simulate command and reused by the
// estimate cases.
const fs::path& panel_dir() {
    static const fs::path dir = [] {
        fs::path d = test_root() / "panel";
        std::ostringstream log;
        REQUIRE(run_pipeline(small_run(Command::Simulate, "panel"), log) == 0);
        REQUIRE(log.str().empty());
        return d;
    }();
    return dir;
}

RunConfig estimate_run(const std::string& out) {
    RunConfig rc = small_run(Command::Estimate, out);
    rc.spells_path = (panel_dir() / "spells.csv").string();
    rc.survey_path = (panel_dir() / "task_survey.csv").string();
    return rc;
}

// Exit code of the lmshock binary, with stdout and stderr captured.
struct RunOutcome {
    int exit_code = -1;
    std::string output;
};

const char* cli_binary() { return std::getenv("LMSHOCK_BIN"); }

RunOutcome run_binary(const std::string& args) {
    static int counter = 0;
    const fs::path capture = test_root() / ("capture" + std::to_string(counter++) + ".log");
    const std::string cmd =
        std::string("\"") + cli_binary() + "\" " + args + " > \"" + capture.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    RunOutcome out;
    out.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    out.output = slurp(capture);
    return out;
}

}  // namespace

TEST_CASE("configuration files parse sections, comments, and types") {
    const ConfigFile cfg = ConfigFile::parse_text(
        "top = 1\n"
        "[paths]\n"
        "spells = a.csv   # trailing comment\n"
        "; full-line comment\n"
        "out = run dir\n"
        "[inference]\n"
        "reps = 250\n"
        "seed = 20210901\n"
        "ratio = 0.789\n"
        "clustered = yes\n"
        "quiet = 0\n"
        "[studies]\n"
        "run = employment, wages,routine\n",
        "demo.conf");

    CHECK(cfg.origin() == "demo.conf");
    CHECK(cfg.has("top"));
    CHECK(cfg.get_int("top", 0) == 1);
    CHECK(cfg.get_string("paths.spells") == "a.csv");
    CHECK(cfg.get_string("paths.out") == "run dir");
    CHECK(cfg.get_int("inference.reps", 0) == 250);
    CHECK(cfg.get_int("inference.seed", 0) == 20210901);
    CHECK(cfg.get_double("inference.ratio", 0.0) == Catch::Approx(0.789));
    CHECK(cfg.get_bool("inference.clustered", false));
    CHECK_FALSE(cfg.get_bool("inference.quiet", true));
    CHECK(cfg.get_list("studies.run") ==
          std::vector<std::string>{"employment", "wages", "routine"});

    // Absent keys fall back to the caller's default.
    CHECK(cfg.get_string("paths.survey", "none") == "none");
    CHECK(cfg.get_int("inference.burnin", 7) == 7);
    CHECK_FALSE(cfg.has("inference.burnin"));
}

TEST_CASE("configuration errors carry the origin and line number") {
    CHECK_THROWS_WITH(ConfigFile::parse_text("a = 1\nb\n", "bad.conf"),
                      ContainsSubstring("bad.conf:2") &&
                          ContainsSubstring("expected key = value"));
    CHECK_THROWS_WITH(ConfigFile::parse_text("[paths\n", "bad.conf"),
                      ContainsSubstring("bad.conf:1") &&
                          ContainsSubstring("unterminated section header"));
    CHECK_THROWS_WITH(ConfigFile::parse_text("[]\nx = 1\n", "bad.conf"),
                      ContainsSubstring("empty section name"));
    CHECK_THROWS_WITH(ConfigFile::parse_text("= 3\n", "bad.conf"),
                      ContainsSubstring("empty key"));
    CHECK_THROWS_WITH(ConfigFile::parse_text("a = 1\na = 2\n", "bad.conf"),
                      ContainsSubstring("duplicate key: a"));

    const ConfigFile cfg = ConfigFile::parse_text("n = 3x\nr = fast\nb = maybe\n", "t.conf");
    CHECK_THROWS_WITH(cfg.get_int("n", 0), ContainsSubstring("not an integer"));
    CHECK_THROWS_WITH(cfg.get_double("r", 0.0), ContainsSubstring("not a number"));
    CHECK_THROWS_WITH(cfg.get_bool("b", false), ContainsSubstring("not a boolean"));

    CHECK_THROWS_WITH(ConfigFile::load((test_root() / "absent.conf").string()),
                      ContainsSubstring("cannot open configuration file"));
}

TEST_CASE("unknown configuration keys are flagged") {
    const ConfigFile cfg =
        ConfigFile::parse_text("[paths]\nspells = a.csv\ntypo = 1\n", "t.conf");
    CHECK(cfg.unknown_keys({"paths.spells"}) == std::vector<std::string>{"paths.typo"});

    RunConfig rc;
    CHECK_THROWS_WITH(apply_config_file(rc, cfg),
                      ContainsSubstring("t.conf") &&
                          ContainsSubstring("unrecognized configuration key") &&
                          ContainsSubstring("paths.typo"));
}

TEST_CASE("a configuration file fills the run configuration") {
    const ConfigFile cfg = ConfigFile::parse_text(
        "[paths]\n"
        "spells = p/s.csv\n"
        "municipalities = p/m.csv\n"
        "survey = p/t.csv\n"
        "truth = p/truth.txt\n"
        "out = tables\n"
        "[window]\n"
        "base_year = 1990\n"
        "end_year = 1995\n"
        "[inference]\n"
        "reps = 99\n"
        "seed = 5\n"
        "[studies]\n"
        "run = wages, employment\n"
        "[simulate]\n"
        "municipalities = 640\n"
        "border = 120\n"
        "districts = 32\n",
        "full.conf");
    RunConfig rc;
    apply_config_file(rc, cfg);
    CHECK(rc.spells_path == "p/s.csv");
    CHECK(rc.municipalities_path == "p/m.csv");
    CHECK(rc.survey_path == "p/t.csv");
    CHECK(rc.truth_path == "p/truth.txt");
    CHECK(rc.out_dir == "tables");
    CHECK(rc.window.base_year == 1990);
    CHECK(rc.window.end_year == 1995);
    CHECK(rc.bootstrap_reps == 99);
    CHECK(rc.seed == 5);
    CHECK(rc.studies == std::vector<std::string>{"wages", "employment"});
    CHECK(rc.n_municipalities == 640);
    CHECK(rc.n_border == 120);
    CHECK(rc.n_districts == 32);

    // Untouched settings keep their defaults.
    RunConfig fresh;
    apply_config_file(fresh, ConfigFile::parse_text("[inference]\nreps = 10\n", "r.conf"));
    CHECK(fresh.bootstrap_reps == 10);
    CHECK(fresh.window.base_year == 1990);
    CHECK(fresh.window.end_year == 1993);
    CHECK(fresh.seed == 20210901);
    CHECK(fresh.studies == std::vector<std::string>{"all"});
}

TEST_CASE("study selections expand, deduplicate, and reject typos") {
    CHECK(resolve_studies({"all"}) ==
          std::vector<std::string>{"employment", "wages", "routine", "subgroups",
                                   "pseudo-panel", "structural", "event-study"});
    CHECK(resolve_studies({"wages", "wages", "employment"}) ==
          std::vector<std::string>{"wages", "employment"});
    CHECK(resolve_studies({"wages", "all"}).size() == 7);
    CHECK_THROWS_WITH(resolve_studies({}), ContainsSubstring("no study selected"));
    CHECK_THROWS_WITH(resolve_studies({""}), ContainsSubstring("no study selected"));
    CHECK_THROWS_WITH(resolve_studies({"wage"}), ContainsSubstring("unknown study: wage"));
}

TEST_CASE("simulate writes a panel that loads back verbatim") {
    const SimResult sim = [&] {
        SimConfig cfg = default_config(kSeed);
        cfg.municipalities = default_municipalities(kSeed, kMunis, kBorder, kDistricts);
        return simulate_panel(cfg);
    }();

    const auto spells = load_spells((panel_dir() / "spells.csv").string());
    const auto munis = load_municipalities((panel_dir() / "municipalities.csv").string());
    const auto survey = load_task_survey((panel_dir() / "task_survey.csv").string());

    REQUIRE(spells.size() == sim.spells.size());
    REQUIRE(munis.size() == sim.municipalities.size());
    REQUIRE(survey.size() == sim.survey.size());

    // to_chars writes shortest round-trip forms, so wages survive exactly.
    for (std::size_t i = 0; i < spells.size(); i += spells.size() / 97 + 1) {
        CHECK(spells[i].worker_id == sim.spells[i].worker_id);
        CHECK(spells[i].year == sim.spells[i].year);
        CHECK(spells[i].muni_id == sim.spells[i].muni_id);
        CHECK(spells[i].log_daily_wage == sim.spells[i].log_daily_wage);
        CHECK(spells[i].hours_band == sim.spells[i].hours_band);
    }
    CHECK(slurp(panel_dir() / "truth.txt").find("gamma_W") != std::string::npos);
}

TEST_CASE("estimate through files matches the in-memory studies byte for byte") {
    RunConfig rc = estimate_run("tables");
    rc.studies = {"employment", "wages"};
    rc.bootstrap_reps = 25;
    std::ostringstream log;
    REQUIRE(run_pipeline(rc, log) == 0);
    REQUIRE(log.str().empty());

    const SimResult sim = [&] {
        SimConfig cfg = default_config(kSeed);
        cfg.municipalities = default_municipalities(kSeed, kMunis, kBorder, kDistricts);
        return simulate_panel(cfg);
    }();
    const auto shocks = build_shock_measures(sim.spells, sim.municipalities, 1990);
    InferenceOptions opts;
    opts.bootstrap_reps = 25;
    opts.seed = rc.seed;

    const auto emp = decompose_employment(sim.spells, shocks, rc.window, opts);
    CHECK(slurp(test_root() / "tables" / "employment.csv") == decomposition_csv(emp));
    CHECK(slurp(test_root() / "tables" / "employment.txt") == decomposition_table(emp));
    const auto wages = decompose_wages(sim.spells, shocks, rc.window, opts);
    CHECK(slurp(test_root() / "tables" / "wages.csv") == decomposition_csv(wages));

    // Re-parsing the CSV recovers the in-memory coefficient to the tables'
    // ten-significant-digit format.
    const std::string csv = slurp(test_root() / "tables" / "employment.csv");
    std::istringstream lines(csv);
    std::string header, first;
    std::getline(lines, header);
    std::getline(lines, first);
    CHECK(header == kReportHeader);
    const auto comma = first.find(',');
    const auto next = first.find(',', comma + 1);
    const double parsed = std::stod(first.substr(next + 1));
    CHECK(parsed == Catch::Approx(shock_coefficient(emp.components.front().result))
                        .epsilon(1e-9));
}

TEST_CASE("every study runs and writes its artifacts") {
    RunConfig rc = estimate_run("alltables");
    rc.studies = {"all"};
    rc.bootstrap_reps = 10;
    std::ostringstream log;
    REQUIRE(run_pipeline(rc, log) == 0);
    REQUIRE(log.str().empty());

    for (const std::string stem :
         {"employment", "wages", "routine", "subgroups", "pseudo-panel", "structural"}) {
        CHECK(fs::exists(test_root() / "alltables" / (stem + ".csv")));
        CHECK(fs::exists(test_root() / "alltables" / (stem + ".txt")));
    }
    for (const std::string stem :
         {"event_total_employment", "event_routine_employment", "event_abstract_employment",
          "event_abstract_share", "event_apprenticeship_employment"}) {
        CHECK(fs::exists(test_root() / "alltables" / (stem + ".csv")));
        const std::string csv = slurp(test_root() / "alltables" / (stem + ".csv"));
        CHECK(csv.rfind(kEventStudyHeader, 0) == 0);
    }

    // The pseudo-panel footer counts appear in its CSV as memo rows.
    const std::string pp = slurp(test_root() / "alltables" / "pseudo-panel.csv");
    CHECK_THAT(pp, ContainsSubstring("cells dropped in one period"));
    CHECK_THAT(pp, ContainsSubstring("distinct groups"));

    const std::string structural = slurp(test_root() / "alltables" / "structural.csv");
    CHECK(structural.rfind("quantity,value", 0) == 0);
    CHECK_THAT(structural, ContainsSubstring("inverse demand slope"));
    CHECK_THAT(structural, ContainsSubstring("selection bias upper bound"));
}

TEST_CASE("failures name the study and leave a nonzero exit") {
    SECTION("missing spells file") {
        RunConfig rc = small_run(Command::Estimate, "err1");
        rc.spells_path = (test_root() / "absent.csv").string();
        std::ostringstream log;
        CHECK(run_pipeline(rc, log) == 1);
        CHECK_THAT(log.str(), ContainsSubstring("cannot open"));
        CHECK_THAT(log.str(), ContainsSubstring("absent.csv"));
    }
    SECTION("no spells path at all") {
        RunConfig rc = small_run(Command::Estimate, "err2");
        std::ostringstream log;
        CHECK(run_pipeline(rc, log) == 1);
        CHECK_THAT(log.str(), ContainsSubstring("--spells"));
    }
    SECTION("routine study without a survey") {
        RunConfig rc = estimate_run("err3");
        rc.survey_path.clear();
        rc.studies = {"employment", "routine"};
        rc.bootstrap_reps = 0;
        std::ostringstream log;
        CHECK(run_pipeline(rc, log) == 1);
        CHECK_THAT(log.str(), ContainsSubstring("study routine:"));
        CHECK_THAT(log.str(), ContainsSubstring("task survey"));
        // The studies before the failure still produce their artifacts.
        CHECK(fs::exists(test_root() / "err3" / "employment.csv"));
    }
    SECTION("reversed window") {
        RunConfig rc = estimate_run("err4");
        rc.window.base_year = 1993;
        rc.window.end_year = 1990;
        std::ostringstream log;
        CHECK(run_pipeline(rc, log) == 1);
        CHECK_THAT(log.str(), ContainsSubstring("base year must precede end year"));
    }
    SECTION("empty study selection") {
        RunConfig rc = estimate_run("err5");
        rc.studies = {};
        std::ostringstream log;
        CHECK(run_pipeline(rc, log) == 1);
        CHECK_THAT(log.str(), ContainsSubstring("no study selected"));
    }
}

TEST_CASE("validate passes on a fresh panel and is deterministic") {
    std::ostringstream log_a, log_b;
    REQUIRE(run_pipeline(small_run(Command::Validate, "valA"), log_a) == 0);
    REQUIRE(run_pipeline(small_run(Command::Validate, "valB"), log_b) == 0);

    const std::string report = slurp(test_root() / "valA" / "validate.txt");
    CHECK(report == slurp(test_root() / "valB" / "validate.txt"));
    CHECK_THAT(report, ContainsSubstring("0 of"));
    CHECK_THAT(report, ContainsSubstring("checks failed"));
    CHECK(report.find("FAIL") == std::string::npos);
    CHECK_THAT(log_a.str(), ContainsSubstring("0 of"));
}

TEST_CASE("report bundles the panel, the tables, and a combined text file") {
    RunConfig rc = small_run(Command::Report, "bundle");
    rc.studies = {"employment", "structural"};
    rc.bootstrap_reps = 10;
    std::ostringstream log;
    REQUIRE(run_pipeline(rc, log) == 0);

    CHECK(fs::exists(test_root() / "bundle" / "spells.csv"));
    CHECK(fs::exists(test_root() / "bundle" / "truth.txt"));
    const std::string combined = slurp(test_root() / "bundle" / "report.txt");
    CHECK_THAT(combined, ContainsSubstring("study: employment"));
    CHECK_THAT(combined, ContainsSubstring("structural recovery"));
}

TEST_CASE("the binary runs the full loop") {
    if (cli_binary() == nullptr) {
        WARN("LMSHOCK_BIN is not set; skipping the subprocess cases");
        return;
    }
    const std::string conf = (test_root() / "small.conf").string();
    spill(conf, "[simulate]\nmunicipalities = 400\nborder = 80\ndistricts = 40\n");

    SECTION("help and usage") {
        CHECK(run_binary("--help").exit_code == 0);
        CHECK(run_binary("").exit_code != 0);
        CHECK(run_binary("estimate --study bogus --spells x.csv").exit_code != 0);
    }

    SECTION("simulate then estimate with the municipality sidecar") {
        const fs::path dir = test_root() / "binpanel";
        const RunOutcome sim =
            run_binary("simulate --config " + conf + " --seed 91 --out " + dir.string());
        REQUIRE(sim.exit_code == 0);
        CHECK(sim.output.empty());
        REQUIRE(fs::exists(dir / "spells.csv"));
        REQUIRE(fs::exists(dir / "municipalities.csv"));

        const RunOutcome est = run_binary("estimate --spells " + (dir / "spells.csv").string() +
                                          " --study employment --reps 10 --out " +
                                          (test_root() / "bintables").string());
        CHECK(est.exit_code == 0);
        CHECK(fs::exists(test_root() / "bintables" / "employment.csv"));
    }

    SECTION("estimate on a missing file reports it") {
        const RunOutcome out = run_binary("estimate --spells missing_panel.csv --out " +
                                          (test_root() / "binerr").string());
        CHECK(out.exit_code != 0);
        CHECK_THAT(out.output, ContainsSubstring("cannot open"));
        CHECK_THAT(out.output, ContainsSubstring("missing_panel.csv"));
    }

    SECTION("validate twice with one seed gives byte-identical reports") {
        const std::string flags = "validate --config " + conf + " --seed 91 --out ";
        const RunOutcome a = run_binary(flags + (test_root() / "binvalA").string());
        const RunOutcome b = run_binary(flags + (test_root() / "binvalB").string());
        REQUIRE(a.exit_code == 0);
        REQUIRE(b.exit_code == 0);
        CHECK(slurp(test_root() / "binvalA" / "validate.txt") ==
              slurp(test_root() / "binvalB" / "validate.txt"));
    }

    SECTION("flags override the configuration file") {
        const std::string override_conf = (test_root() / "override.conf").string();
        spill(override_conf,
              "[simulate]\nmunicipalities = 400\nborder = 80\ndistricts = 40\n"
              "[studies]\nrun = wages\n[inference]\nreps = 10\n");
        const fs::path dir = test_root() / "binoverride";
        const RunOutcome out =
            run_binary("report --config " + override_conf + " --seed 91 --study employment" +
                       " --out " + dir.string());
        REQUIRE(out.exit_code == 0);
        CHECK(fs::exists(dir / "employment.csv"));
        CHECK_FALSE(fs::exists(dir / "wages.csv"));
    }
}
