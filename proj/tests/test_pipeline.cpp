#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "circuit_fixtures.hpp"
#include "cotlab/cli.hpp"
#include "cotlab/headscore.hpp"
#include "cotlab/inicfg.hpp"
#include "cotlab/ioutil.hpp"
#include "cotlab/pipeline.hpp"
#include "cotlab/report.hpp"
#include "cotlab/svg.hpp"
#include "cotlab/tracecircuit.hpp"

using namespace cotlab;
namespace fs = std::filesystem;
namespace ini = cotlab::inicfg;
namespace pl = cotlab::pipeline;
namespace tc = cotlab::tracecircuit;
using json = nlohmann::json;

namespace {

fs::path fresh_dir(const char* name) {
    const auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int count_occurrences(const std::string& hay, const std::string& needle) {
    int n = 0;
    for (std::size_t at = hay.find(needle); at != std::string::npos;
         at = hay.find(needle, at + needle.size()))
        ++n;
    return n;
}

// small enough to run the whole pipeline in seconds, large enough that every
// stage produces real rows
pl::ExperimentConfig smoke_config() {
    pl::ExperimentConfig cfg;
    cfg.name = "smoke";
    cfg.model.n_layers = 2;
    cfg.model.n_heads = 2;
    cfg.model.d_model = 64;
    cfg.model.d_ff = 128;
    cfg.data.train_count = 64;
    cfg.data.eval_count = 12;
    cfg.data.eval_categories = 24;
    cfg.data.n_shots = 1;
    cfg.data.induction_count = 24;
    cfg.train.steps = 40;
    cfg.train.batch_size = 8;
    cfg.train.eval_every = 20;
    cfg.train.eval_size = 8;
    cfg.train.target_acc = 1.0;
    cfg.score.limit = 2;
    cfg.score.bank_streams = 8;
    cfg.score.induction_count = 8;
    cfg.score.bins = 8;
    cfg.score.sweep_examples = 3;
    cfg.probe.shots = {1};
    cfg.probe.train_examples = 16;
    cfg.probe.test_examples = 8;
    cfg.probe.epochs = 10;
    cfg.probe.eval_categories = 20;
    cfg.probe.eval_attributes = 12;
    cfg.probe.eval_individuals = 4;
    cfg.trace.examples = 2;
    return cfg;
}

} // namespace

// ------------------------------------------------------------------- inicfg

TEST_CASE("ini parsing keeps order and survives a round-trip byte for byte") {
    const std::string text =
        "# leading comment\n"
        "[beta]\n"
        "z = last\n"
        "a = 1\n"
        "\n"
        "[alpha]\n"
        "; another comment\n"
        "k = spaced  value\n";
    const auto doc = ini::parse_ini(text);
    REQUIRE(doc.sections.size() == 2);
    CHECK(doc.sections[0].name == "beta");  // file order, not sorted
    CHECK(doc.sections[0].entries[0].first == "z");
    CHECK(*doc.sections[1].find("k") == "spaced  value");

    const std::string out = doc.serialize();
    CHECK(ini::parse_ini(out).serialize() == out);
}

TEST_CASE("malformed ini input fails with the offending line number") {
    CHECK_THROWS_WITH_AS((void)ini::parse_ini("k = 1\n"),
                         "config line 1: entry before any [section]", std::runtime_error);
    CHECK_THROWS_WITH_AS((void)ini::parse_ini("[a\n"),
                         "config line 1: unterminated section header", std::runtime_error);
    CHECK_THROWS_AS((void)ini::parse_ini("[a]\n[a]\n"), std::runtime_error);
    CHECK_THROWS_AS((void)ini::parse_ini("[a]\nk = 1\nk = 2\n"), std::runtime_error);
    CHECK_THROWS_AS((void)ini::parse_ini("[a]\nnovalue\n"), std::runtime_error);
}

TEST_CASE("typed getters convert strictly and fall back only when absent") {
    const auto doc = ini::parse_ini(
        "[s]\n"
        "i = 42\n"
        "d = 0.25\n"
        "b = yes\n"
        "bad_int = 12x\n"
        "bad_double = 1..5\n"
        "bad_bool = maybe\n"
        "ints = 1, 2 3\n"
        "words = alpha beta\n");
    CHECK(ini::get_int(doc, "s", "i", -1) == 42);
    CHECK(ini::get_double(doc, "s", "d", -1.0) == 0.25);
    CHECK(ini::get_bool(doc, "s", "b", false));
    CHECK(ini::get_int(doc, "s", "absent", -7) == -7);
    CHECK(ini::get_int(doc, "absent", "i", -7) == -7);
    CHECK(ini::get_int_list(doc, "s", "ints", {}) == std::vector<int>{1, 2, 3});
    CHECK(ini::get_str_list(doc, "s", "words", {}) ==
          std::vector<std::string>{"alpha", "beta"});

    CHECK_THROWS_AS((void)ini::get_int(doc, "s", "bad_int", 0), std::runtime_error);
    CHECK_THROWS_AS((void)ini::get_double(doc, "s", "bad_double", 0.0), std::runtime_error);
    CHECK_THROWS_AS((void)ini::get_bool(doc, "s", "bad_bool", false), std::runtime_error);

    static constexpr const char* known[] = {"i", "d", "b", "ints", "words"};
    CHECK_THROWS_AS(ini::require_known(doc, "s", known), std::runtime_error);
    ini::require_known(doc, "nosuch", known);  // absent sections pass
}

TEST_CASE("format_double emits the shortest decimal that parses back exactly") {
    for (double v : {0.0, 1.0, 0.25, 4e-4, 1.0 / 3.0, -17.125, 6.02214076e23}) {
        const std::string s = ini::format_double(v);
        CHECK(std::stod(s) == v);
    }
    CHECK(ini::format_double(0.25) == "0.25");
    CHECK(ini::format_double(1200.0) == "1200");
}

// -------------------------------------------------------- experiment config

TEST_CASE("an empty config materializes every default and round-trips") {
    const auto cfg = pl::ExperimentConfig::from_ini("");
    const std::string text = cfg.to_ini();
    // one section per config block, every default written out
    for (const char* sec : {"[run]", "[model]", "[data]", "[train]", "[score]",
                            "[probe]", "[trace]", "[report]"})
        CHECK(text.find(sec) != std::string::npos);
    for (const char* entry : {"n_layers = 8", "steps = 1200", "lr = 0.0004",
                              "neg_style = mixed", "shots = 1 2", "target_acc = 0.9",
                              "stages = generate train score probe trace report"})
        CHECK(text.find(entry) != std::string::npos);
    // a materialized config parses back to the identical materialization
    CHECK(pl::ExperimentConfig::from_ini(text).to_ini() == text);
}

TEST_CASE("config typos and bad stage lists are rejected up front") {
    CHECK_THROWS_AS((void)pl::ExperimentConfig::from_ini("[nosuch]\nk = 1\n"),
                    std::runtime_error);
    CHECK_THROWS_AS((void)pl::ExperimentConfig::from_ini("[train]\nstep = 5\n"),
                    std::runtime_error);
    CHECK_THROWS_AS((void)pl::ExperimentConfig::from_ini("[run]\nstages = train bogus\n"),
                    std::runtime_error);
    // stages must follow dependency order without duplicates
    CHECK_THROWS_AS((void)pl::ExperimentConfig::from_ini("[run]\nstages = train generate\n"),
                    std::runtime_error);
    CHECK_THROWS_AS((void)pl::ExperimentConfig::from_ini("[run]\nstages = train train\n"),
                    std::runtime_error);
    // the vocabulary is built in; a conflicting size is a config error
    CHECK_THROWS_AS((void)pl::ExperimentConfig::from_ini("[model]\nvocab_size = 9\n"),
                    std::runtime_error);

    auto cfg = pl::ExperimentConfig::from_ini("");
    cfg.trace.example_index = cfg.trace.examples;  // out of range
    CHECK_THROWS_AS(cfg.validate(), std::runtime_error);
}

TEST_CASE("stage names round-trip and unknown names are refused") {
    for (int i = 0; i < pl::kStageCount; ++i) {
        const auto s = static_cast<pl::Stage>(i);
        CHECK(pl::parse_stage(pl::to_string(s)) == s);
    }
    CHECK_THROWS_AS((void)pl::parse_stage("deploy"), std::runtime_error);
}

// ---------------------------------------------------------------------- svg

TEST_CASE("svg formatting is fixed-precision with trimmed zeros") {
    CHECK(svg::fmt(1.0) == "1");
    CHECK(svg::fmt(0.125) == "0.125");
    CHECK(svg::fmt(2.5) == "2.5");
    CHECK(svg::fmt(-0.0001) == "0");  // rounds to -0.000, sign dropped
    CHECK(svg::escape("<a> & \"b\" 'c'") == "&lt;a&gt; &amp; &quot;b&quot; &apos;c&apos;");
    CHECK(svg::ramp(0.0, "#000000", "#ffffff") == "#000000");
    CHECK(svg::ramp(1.0, "#000000", "#ffffff") == "#ffffff");
    CHECK(svg::ramp(0.5, "#000000", "#fffefc") == "#807f7e");
    CHECK(svg::ramp(-3.0, "#102030", "#405060") == "#102030");  // clamped
}

TEST_CASE("identical canvas draw calls emit identical bytes with tooltips attached") {
    const auto draw = [] {
        svg::Canvas c(100, 50);
        c.rect(1, 2, 3, 4, "#aabbcc");
        c.tooltip("cell <1>");
        c.circle(5, 6, 2, "#000");
        const double xs[] = {0, 10}, ys[] = {5, 15};
        c.polyline(xs, ys, "#123456");
        c.text(1, 1, "hi & bye");
        return c.str();
    };
    const std::string a = draw();
    CHECK(a == draw());
    // the tooltip nests inside the rect it follows, with its text escaped
    CHECK(a.find("<rect") != std::string::npos);
    CHECK(a.find("><title>cell &lt;1&gt;</title></rect>") != std::string::npos);
    CHECK(a.find("hi &amp; bye") != std::string::npos);
    CHECK(a.find("viewBox=\"0 0 100 50\"") != std::string::npos);
}

// ------------------------------------------------------------------- report

TEST_CASE("a report over no artifacts is a valid page of notices") {
    const auto dir = fresh_dir("cotlab_report_empty");
    const std::string page = report::render_report(dir);
    CHECK(page.find("<!DOCTYPE html>") != std::string::npos);
    CHECK(page.find("</html>") != std::string::npos);
    CHECK(count_occurrences(page, "figure skipped") == 10);  // every figure
    CHECK(count_occurrences(page, "<svg") == 0);
    CHECK(page.find("unavailable") != std::string::npos);  // no config digest

    // rendering is a pure function of the artifact bytes
    CHECK(report::render_report(dir) == page);
    report::write_report(dir);
    CHECK(read_file(dir / pl::kReportFile) == page);
}

TEST_CASE("score heatmaps draw exactly one cell per head") {
    const auto dir = fresh_dir("cotlab_report_heatmap");
    const int L = 3, H = 2;
    std::vector<headscore::ScoreTable> tables;
    for (const char* kind : {"decision", "copy", "induction"}) {
        auto t = headscore::ScoreTable::make(kind, L, H);
        t.dataset_id = "synthetic";
        t.sample_count = 1;
        for (int i = 0; i < t.head_count(); ++i)
            t.mu[static_cast<std::size_t>(i)] = (i + 1) / 16.0;
        headscore::delta_scores(t);
        tables.push_back(std::move(t));
    }
    headscore::save_tables(dir / pl::kScoresFile, tables);

    const std::string page = report::render_report(dir);
    CHECK(count_occurrences(page, "class=\"hm\"") == 3 * L * H);
    // with only the score tables present, the other figures notice-skip
    CHECK(count_occurrences(page, "figure skipped") == 8);
}

TEST_CASE("flow trees serialize losslessly and render every label verbatim") {
    const auto p = fixtures::two_layer_chain();
    const std::vector<int> toks = {1, 3, 2, 0, 3, 1};
    nanoformer::Cache cache;
    nanoformer::forward(p, toks, cache, nanoformer::RecordLevel::full);
    ontogen::Segments seg;
    seg.question_end = 4;
    seg.generated_begin = 4;
    seg.generated_end = 6;
    const auto trace = tc::make_trace(p, cache, seg);
    const auto vocab = Vocab::build(WordLists::builtin());
    const auto rep = tc::find_answer_writers(trace, 5, 2);
    const auto tree = tc::build_flow_tree(trace, rep, vocab);
    REQUIRE(tree.nodes.size() == 2);

    // the JSON form carries the tree exactly; the in-memory tree is the oracle
    const auto j = json::parse(pl::flow_tree_to_json(tree));
    CHECK(j["answer"] == tree.answer);
    CHECK(j["roots"] == json(tree.roots));
    REQUIRE(j["nodes"].size() == tree.nodes.size());
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
        const auto& n = tree.nodes[i];
        const auto& jn = j["nodes"][i];
        CHECK(jn["layer"] == n.layer);
        CHECK(jn["head"] == n.head);
        CHECK(jn["target"] == n.target);
        CHECK(jn["source"] == n.source);
        CHECK(jn["info"] == n.info);
        CHECK(jn["source_content"] == n.source_content);
        CHECK(jn["label"] == n.label);
        CHECK(jn["children"] == json(n.children));
        CHECK(jn["children_truncated"] == n.children_truncated);
        CHECK(jn["depth_truncated"] == n.depth_truncated);
    }

    // wrapped the way the trace stage writes it, the report shows each label
    const auto dir = fresh_dir("cotlab_report_flow");
    json env;
    env["example_id"] = "fixture";
    env["subtask"] = 9;
    env["kind"] = "induction";
    env["answer_word"] = vocab.word(tree.answer);
    env["tree"] = j;
    write_file_atomic(dir / pl::kFlowTreeFile, env.dump(2));
    const std::string page = report::render_report(dir);
    for (const auto& n : tree.nodes) {
        CHECK(n.label.find('<') != std::string::npos);  // raw labels never paste into html
        CHECK(page.find(">" + svg::escape(n.label) + "<") != std::string::npos);
    }
}

// ----------------------------------------------------------------- pipeline

TEST_CASE("the smoke pipeline is reproducible and its manifest audits itself") {
    const auto cfg = smoke_config();
    const auto dir_a = fresh_dir("cotlab_pipe_a");
    const auto dir_b = fresh_dir("cotlab_pipe_b");

    const auto a = pl::run_experiment(cfg, dir_a);
    CHECK(a.config_digest == sha256_hex(read_file(dir_a / pl::kConfigFile)));
    CHECK(a.timings.size() == 6);
    // every artifact of every stage is listed, and nothing else
    for (const char* f : {pl::kConfigFile, pl::kVocabFile, pl::kTrainCorpusFile,
                          pl::kEvalCorpusFile, pl::kInductionFile, pl::kModelFile,
                          pl::kMetricsFile, pl::kEvalFile, pl::kBankFile, pl::kScoresFile,
                          pl::kSweepFile, pl::kTaskSetsFile, pl::kProbeFile,
                          pl::kProbeControlsFile, pl::kTraceFile, pl::kFlowTreeFile,
                          pl::kDepthFile, pl::kAttentionFile, pl::kReportFile})
        CHECK(a.files.count(f) == 1);
    CHECK(a.files.size() == 19);
    CHECK(a.files.count(pl::kManifestFile) == 0);  // the ledger never lists itself
    CHECK(a.files.count(pl::kTimingsFile) == 0);   // wall clock stays out of digests

    // the manifest on disk round-trips and re-verifies
    const auto loaded = pl::load_manifest(dir_a);
    CHECK(loaded.config_digest == a.config_digest);
    CHECK(loaded.files == a.files);
    loaded.verify();

    // an identical config yields bit-identical artifacts, digest for digest
    const auto b = pl::run_experiment(cfg, dir_b);
    CHECK(b.config_digest == a.config_digest);
    CHECK(b.files == a.files);

    // a report-only pass reuses what exists instead of recomputing it
    auto report_only = cfg;
    report_only.stages = {pl::Stage::report};
    const auto c = pl::run_experiment(report_only, dir_b);
    CHECK(c.files.at(pl::kModelFile) == a.files.at(pl::kModelFile));
    CHECK(c.files.at(pl::kScoresFile) == a.files.at(pl::kScoresFile));
    REQUIRE(c.timings.size() == 1);
    CHECK(c.timings[0].stage == "report");

    // tampering with any listed file is caught by the digest audit
    std::ofstream(dir_a / pl::kVocabFile, std::ios::app) << "x";
    CHECK_THROWS_WITH_AS(pl::load_manifest(dir_a).verify(),
                         "manifest digest mismatch: vocab.txt", std::runtime_error);
    fs::remove(dir_a / pl::kVocabFile);
    CHECK_THROWS_WITH_AS(pl::load_manifest(dir_a).verify(),
                         "manifest entry missing on disk: vocab.txt", std::runtime_error);
}

TEST_CASE("a stage cannot run before its inputs exist") {
    auto cfg = smoke_config();
    cfg.stages = {pl::Stage::train};  // no generate first
    const auto dir = fresh_dir("cotlab_pipe_missing");
    CHECK_THROWS_AS((void)pl::run_experiment(cfg, dir), std::runtime_error);
    // the failure still left an audited manifest of whatever was written
    const auto ra = pl::load_manifest(dir);
    ra.verify();
    CHECK(ra.files.count(pl::kConfigFile) == 1);
}

// --------------------------------------------------------------------- cli

TEST_CASE("the cli runs a configured stage and reseeds on request") {
    const auto root = fresh_dir("cotlab_cli_root");
    const auto cfg_path = root / "exp.ini";
    auto cfg = smoke_config();
    cfg.name = "cli-smoke";
    write_file_atomic(cfg_path, cfg.to_ini());

    const std::string cfg_s = cfg_path.string(), root_s = root.string();
    const char* argv1[] = {"labcli", "generate", "-c", cfg_s.c_str(), "-o", root_s.c_str()};
    CHECK(cli::run(6, argv1) == 0);
    const auto run_dir = root / "cli-smoke";
    CHECK(fs::exists(run_dir / pl::kVocabFile));
    const auto ra = pl::load_manifest(run_dir);
    ra.verify();
    CHECK(ra.files.count(pl::kModelFile) == 0);  // only the generate stage ran

    // --seed rewrites every stage seed from one base, visible in the run copy
    const char* argv2[] = {"labcli", "generate", "-c", cfg_s.c_str(),
                           "-o",     root_s.c_str(), "--seed", "9"};
    CHECK(cli::run(8, argv2) == 0);
    const auto doc = ini::parse_ini(read_file(run_dir / pl::kConfigFile));
    CHECK(ini::get_int(doc, "data", "seed", -1) == 9001);
    CHECK(ini::get_int(doc, "model", "init_seed", -1) == 9002);
    CHECK(ini::get_int(doc, "train", "seed", -1) == 9003);

    // a report over the artifacts that exist still succeeds with notices
    const char* argv3[] = {"labcli", "report", "-c", cfg_s.c_str(), "-o", root_s.c_str()};
    CHECK(cli::run(6, argv3) == 0);
    CHECK(read_file(run_dir / pl::kReportFile).find("figure skipped") != std::string::npos);

    // a missing config or an unknown verb is a hard error, not a crash
    const char* argv4[] = {"labcli", "generate", "-c", "/nosuch/exp.ini"};
    CHECK(cli::run(4, argv4) != 0);
    const char* argv5[] = {"labcli", "deploy"};
    CHECK(cli::run(2, argv5) != 0);
}
