#include "cotlab/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "cotlab/headscore.hpp"
#include "cotlab/inicfg.hpp"
#include "cotlab/intervene.hpp"
#include "cotlab/ioutil.hpp"
#include "cotlab/probes.hpp"
#include "cotlab/report.hpp"
#include "cotlab/train.hpp"
#include "cotlab/vocab.hpp"

namespace cotlab::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kStageNames[kStageCount] = {"generate", "train", "score",
                                                  "probe",    "trace", "report"};

} // namespace

const char* to_string(Stage s) { return kStageNames[static_cast<int>(s)]; }

Stage parse_stage(const std::string& s) {
    for (int i = 0; i < kStageCount; ++i)
        if (s == kStageNames[i]) return static_cast<Stage>(i);
    throw std::runtime_error("unknown stage \"" + s + "\"");
}

// ------------------------------------------------------------ configuration

ExperimentConfig::ExperimentConfig() {
    model.n_layers = 8;
    model.n_heads = 8;
    model.d_model = 256;
    model.d_ff = 512;
    model.max_seq = 512;
    model.vocab_size = Vocab::build(WordLists::builtin()).size();
}

namespace {

constexpr const char* kRunKeys[] = {"name", "dir", "stages"};
constexpr const char* kModelKeys[] = {"n_layers", "n_heads",  "d_model",    "d_ff",
                                      "max_seq",  "rope_base", "norm_eps",  "vocab_size",
                                      "init_seed"};
constexpr const char* kDataKeys[] = {"train_count",     "eval_count", "eval_categories",
                                     "n_shots",         "chain_len",  "n_distractors",
                                     "polarity_mix",    "extra_attr_prob", "neg_style",
                                     "induction_count", "seed"};
constexpr const char* kTrainKeys[] = {"steps",         "batch_size", "lr",        "lr_min",
                                      "beta1",         "beta2",      "weight_decay", "clip",
                                      "warmup_steps",  "induction_mix", "eval_every",
                                      "eval_size",     "target_acc", "max_minutes", "seed"};
constexpr const char* kScoreKeys[] = {"limit",         "bank_streams",  "induction_count",
                                      "bins",          "sweep_subtask", "sweep_examples",
                                      "top_fraction",  "seed"};
constexpr const char* kProbeKeys[] = {"arch",          "layers",          "shots",
                                      "train_examples", "test_examples",  "eval_categories",
                                      "eval_attributes", "eval_individuals", "lr",
                                      "epochs",        "batch_size",      "threads",
                                      "controls",      "seed",            "collect_seed"};
constexpr const char* kTraceKeys[] = {"examples", "example_index", "flow_subtask", "depth_cap",
                                      "fanout_cap"};
constexpr const char* kReportKeys[] = {"title"};

std::string stages_to_string(const std::vector<Stage>& stages) {
    std::string out;
    for (Stage s : stages) {
        if (!out.empty()) out += " ";
        out += to_string(s);
    }
    return out;
}

std::string ints_to_string(const std::vector<int>& xs) {
    std::string out;
    for (int x : xs) {
        if (!out.empty()) out += " ";
        out += std::to_string(x);
    }
    return out;
}

} // namespace

ExperimentConfig ExperimentConfig::from_ini(const std::string& text) {
    using namespace inicfg;
    const IniDoc doc = parse_ini(text);

    static const std::map<std::string, std::span<const char* const>> known = {
        {"run", kRunKeys},     {"model", kModelKeys}, {"data", kDataKeys},
        {"train", kTrainKeys}, {"score", kScoreKeys}, {"probe", kProbeKeys},
        {"trace", kTraceKeys}, {"report", kReportKeys}};
    for (const auto& sec : doc.sections) {
        const auto it = known.find(sec.name);
        if (it == known.end())
            throw std::runtime_error("unknown config section [" + sec.name + "]");
        require_known(doc, sec.name, it->second);
    }

    ExperimentConfig c;
    c.name = get_str(doc, "run", "name", c.name);
    c.out_dir = get_str(doc, "run", "dir", c.out_dir);
    if (doc.has("run", "stages")) {
        c.stages.clear();
        for (const auto& word : get_str_list(doc, "run", "stages", {}))
            c.stages.push_back(parse_stage(word));
    }

    c.model.n_layers = static_cast<int>(get_int(doc, "model", "n_layers", c.model.n_layers));
    c.model.n_heads = static_cast<int>(get_int(doc, "model", "n_heads", c.model.n_heads));
    c.model.d_model = static_cast<int>(get_int(doc, "model", "d_model", c.model.d_model));
    c.model.d_ff = static_cast<int>(get_int(doc, "model", "d_ff", c.model.d_ff));
    c.model.max_seq = static_cast<int>(get_int(doc, "model", "max_seq", c.model.max_seq));
    c.model.rope_base = static_cast<float>(get_double(doc, "model", "rope_base", c.model.rope_base));
    c.model.norm_eps = static_cast<float>(get_double(doc, "model", "norm_eps", c.model.norm_eps));
    // the vocabulary is always the builtin word list; a materialized value is
    // accepted back only when it still matches
    const long long vs = get_int(doc, "model", "vocab_size", c.model.vocab_size);
    if (vs != c.model.vocab_size)
        throw std::runtime_error("model.vocab_size " + std::to_string(vs) +
                                 " does not match the builtin vocabulary (" +
                                 std::to_string(c.model.vocab_size) + ")");
    c.init_seed = static_cast<std::uint64_t>(get_int(doc, "model", "init_seed",
                                                     static_cast<long long>(c.init_seed)));

    DataParams& d = c.data;
    d.train_count = static_cast<int>(get_int(doc, "data", "train_count", d.train_count));
    d.eval_count = static_cast<int>(get_int(doc, "data", "eval_count", d.eval_count));
    d.eval_categories = static_cast<int>(get_int(doc, "data", "eval_categories", d.eval_categories));
    d.n_shots = static_cast<int>(get_int(doc, "data", "n_shots", d.n_shots));
    d.chain_len = static_cast<int>(get_int(doc, "data", "chain_len", d.chain_len));
    d.n_distractors = static_cast<int>(get_int(doc, "data", "n_distractors", d.n_distractors));
    d.polarity_mix = get_double(doc, "data", "polarity_mix", d.polarity_mix);
    d.extra_attr_prob = get_double(doc, "data", "extra_attr_prob", d.extra_attr_prob);
    d.neg_style = get_str(doc, "data", "neg_style", d.neg_style);
    d.induction_count = static_cast<int>(get_int(doc, "data", "induction_count", d.induction_count));
    d.seed = static_cast<std::uint64_t>(get_int(doc, "data", "seed", static_cast<long long>(d.seed)));

    TrainParams& t = c.train;
    t.steps = static_cast<int>(get_int(doc, "train", "steps", t.steps));
    t.batch_size = static_cast<int>(get_int(doc, "train", "batch_size", t.batch_size));
    t.lr = get_double(doc, "train", "lr", t.lr);
    t.lr_min = get_double(doc, "train", "lr_min", t.lr_min);
    t.beta1 = get_double(doc, "train", "beta1", t.beta1);
    t.beta2 = get_double(doc, "train", "beta2", t.beta2);
    t.weight_decay = get_double(doc, "train", "weight_decay", t.weight_decay);
    t.clip = get_double(doc, "train", "clip", t.clip);
    t.warmup_steps = static_cast<int>(get_int(doc, "train", "warmup_steps", t.warmup_steps));
    t.induction_mix = get_double(doc, "train", "induction_mix", t.induction_mix);
    t.eval_every = static_cast<int>(get_int(doc, "train", "eval_every", t.eval_every));
    t.eval_size = static_cast<int>(get_int(doc, "train", "eval_size", t.eval_size));
    t.target_acc = get_double(doc, "train", "target_acc", t.target_acc);
    t.max_minutes = get_double(doc, "train", "max_minutes", t.max_minutes);
    t.seed = static_cast<std::uint64_t>(get_int(doc, "train", "seed", static_cast<long long>(t.seed)));

    ScoreParams& sc = c.score;
    sc.limit = static_cast<int>(get_int(doc, "score", "limit", sc.limit));
    sc.bank_streams = static_cast<int>(get_int(doc, "score", "bank_streams", sc.bank_streams));
    sc.induction_count =
        static_cast<int>(get_int(doc, "score", "induction_count", sc.induction_count));
    sc.bins = static_cast<int>(get_int(doc, "score", "bins", sc.bins));
    sc.sweep_subtask = static_cast<int>(get_int(doc, "score", "sweep_subtask", sc.sweep_subtask));
    sc.sweep_examples = static_cast<int>(get_int(doc, "score", "sweep_examples", sc.sweep_examples));
    sc.top_fraction = get_double(doc, "score", "top_fraction", sc.top_fraction);
    sc.seed = static_cast<std::uint64_t>(get_int(doc, "score", "seed", static_cast<long long>(sc.seed)));

    ProbeParams& pr = c.probe;
    pr.arch = get_str(doc, "probe", "arch", pr.arch);
    pr.layers = get_int_list(doc, "probe", "layers", pr.layers);
    pr.shots = get_int_list(doc, "probe", "shots", pr.shots);
    pr.train_examples = static_cast<int>(get_int(doc, "probe", "train_examples", pr.train_examples));
    pr.test_examples = static_cast<int>(get_int(doc, "probe", "test_examples", pr.test_examples));
    pr.eval_categories =
        static_cast<int>(get_int(doc, "probe", "eval_categories", pr.eval_categories));
    pr.eval_attributes =
        static_cast<int>(get_int(doc, "probe", "eval_attributes", pr.eval_attributes));
    pr.eval_individuals =
        static_cast<int>(get_int(doc, "probe", "eval_individuals", pr.eval_individuals));
    pr.lr = get_double(doc, "probe", "lr", pr.lr);
    pr.epochs = static_cast<int>(get_int(doc, "probe", "epochs", pr.epochs));
    pr.batch_size = static_cast<int>(get_int(doc, "probe", "batch_size", pr.batch_size));
    pr.threads = static_cast<int>(get_int(doc, "probe", "threads", pr.threads));
    pr.controls = get_bool(doc, "probe", "controls", pr.controls);
    pr.seed = static_cast<std::uint64_t>(get_int(doc, "probe", "seed", static_cast<long long>(pr.seed)));
    pr.collect_seed = static_cast<std::uint64_t>(
        get_int(doc, "probe", "collect_seed", static_cast<long long>(pr.collect_seed)));

    TraceParams& tr = c.trace;
    tr.examples = static_cast<int>(get_int(doc, "trace", "examples", tr.examples));
    tr.example_index = static_cast<int>(get_int(doc, "trace", "example_index", tr.example_index));
    tr.flow_subtask = static_cast<int>(get_int(doc, "trace", "flow_subtask", tr.flow_subtask));
    tr.depth_cap = static_cast<int>(get_int(doc, "trace", "depth_cap", tr.depth_cap));
    tr.fanout_cap = static_cast<int>(get_int(doc, "trace", "fanout_cap", tr.fanout_cap));

    c.report_title = get_str(doc, "report", "title", c.report_title);

    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
    return from_ini(read_file(path));
}

std::string ExperimentConfig::to_ini() const {
    using inicfg::format_double;
    inicfg::IniDoc doc;
    doc.set("run", "name", name);
    doc.set("run", "dir", out_dir);
    doc.set("run", "stages", stages_to_string(stages));

    doc.set("model", "n_layers", std::to_string(model.n_layers));
    doc.set("model", "n_heads", std::to_string(model.n_heads));
    doc.set("model", "d_model", std::to_string(model.d_model));
    doc.set("model", "d_ff", std::to_string(model.d_ff));
    doc.set("model", "max_seq", std::to_string(model.max_seq));
    doc.set("model", "rope_base", format_double(model.rope_base));
    doc.set("model", "norm_eps", format_double(model.norm_eps));
    doc.set("model", "vocab_size", std::to_string(model.vocab_size));
    doc.set("model", "init_seed", std::to_string(init_seed));

    doc.set("data", "train_count", std::to_string(data.train_count));
    doc.set("data", "eval_count", std::to_string(data.eval_count));
    doc.set("data", "eval_categories", std::to_string(data.eval_categories));
    doc.set("data", "n_shots", std::to_string(data.n_shots));
    doc.set("data", "chain_len", std::to_string(data.chain_len));
    doc.set("data", "n_distractors", std::to_string(data.n_distractors));
    doc.set("data", "polarity_mix", format_double(data.polarity_mix));
    doc.set("data", "extra_attr_prob", format_double(data.extra_attr_prob));
    doc.set("data", "neg_style", data.neg_style);
    doc.set("data", "induction_count", std::to_string(data.induction_count));
    doc.set("data", "seed", std::to_string(data.seed));

    doc.set("train", "steps", std::to_string(train.steps));
    doc.set("train", "batch_size", std::to_string(train.batch_size));
    doc.set("train", "lr", format_double(train.lr));
    doc.set("train", "lr_min", format_double(train.lr_min));
    doc.set("train", "beta1", format_double(train.beta1));
    doc.set("train", "beta2", format_double(train.beta2));
    doc.set("train", "weight_decay", format_double(train.weight_decay));
    doc.set("train", "clip", format_double(train.clip));
    doc.set("train", "warmup_steps", std::to_string(train.warmup_steps));
    doc.set("train", "induction_mix", format_double(train.induction_mix));
    doc.set("train", "eval_every", std::to_string(train.eval_every));
    doc.set("train", "eval_size", std::to_string(train.eval_size));
    doc.set("train", "target_acc", format_double(train.target_acc));
    doc.set("train", "max_minutes", format_double(train.max_minutes));
    doc.set("train", "seed", std::to_string(train.seed));

    doc.set("score", "limit", std::to_string(score.limit));
    doc.set("score", "bank_streams", std::to_string(score.bank_streams));
    doc.set("score", "induction_count", std::to_string(score.induction_count));
    doc.set("score", "bins", std::to_string(score.bins));
    doc.set("score", "sweep_subtask", std::to_string(score.sweep_subtask));
    doc.set("score", "sweep_examples", std::to_string(score.sweep_examples));
    doc.set("score", "top_fraction", format_double(score.top_fraction));
    doc.set("score", "seed", std::to_string(score.seed));

    doc.set("probe", "arch", probe.arch);
    doc.set("probe", "layers", ints_to_string(probe.layers));
    doc.set("probe", "shots", ints_to_string(probe.shots));
    doc.set("probe", "train_examples", std::to_string(probe.train_examples));
    doc.set("probe", "test_examples", std::to_string(probe.test_examples));
    doc.set("probe", "eval_categories", std::to_string(probe.eval_categories));
    doc.set("probe", "eval_attributes", std::to_string(probe.eval_attributes));
    doc.set("probe", "eval_individuals", std::to_string(probe.eval_individuals));
    doc.set("probe", "lr", format_double(probe.lr));
    doc.set("probe", "epochs", std::to_string(probe.epochs));
    doc.set("probe", "batch_size", std::to_string(probe.batch_size));
    doc.set("probe", "threads", std::to_string(probe.threads));
    doc.set("probe", "controls", probe.controls ? "true" : "false");
    doc.set("probe", "seed", std::to_string(probe.seed));
    doc.set("probe", "collect_seed", std::to_string(probe.collect_seed));

    doc.set("trace", "examples", std::to_string(trace.examples));
    doc.set("trace", "example_index", std::to_string(trace.example_index));
    doc.set("trace", "flow_subtask", std::to_string(trace.flow_subtask));
    doc.set("trace", "depth_cap", std::to_string(trace.depth_cap));
    doc.set("trace", "fanout_cap", std::to_string(trace.fanout_cap));

    doc.set("report", "title", report_title);
    return doc.serialize();
}

void ExperimentConfig::validate() const {
    const auto bad = [](const std::string& what) {
        // config mistakes are user input, reported like every other config error
        throw std::runtime_error("experiment config: " + what);
    };
    if (name.empty()) bad("name is empty");
    if (name.find('/') != std::string::npos || name.find("..") != std::string::npos)
        bad("name must be a plain directory name");
    if (stages.empty()) bad("no stages listed");
    for (std::size_t i = 1; i < stages.size(); ++i)
        if (static_cast<int>(stages[i]) <= static_cast<int>(stages[i - 1]))
            bad(std::string("stages out of dependency order: ") + to_string(stages[i - 1]) +
                " before " + to_string(stages[i]));
    model.validate();

    if (data.chain_len != 2) bad("chain_len must be 2 (canonical ten-subtask form)");
    if (data.train_count <= 0 || data.eval_count <= 0) bad("corpus counts must be positive");
    if (data.n_shots < 0 || data.n_distractors < 0) bad("negative data parameter");
    if (data.polarity_mix < 0 || data.polarity_mix > 1) bad("polarity_mix outside [0, 1]");
    if (data.extra_attr_prob < 0 || data.extra_attr_prob > 1)
        bad("extra_attr_prob outside [0, 1]");
    if (data.neg_style != "mixed" && data.neg_style != "substitution" &&
        data.neg_style != "explicit_not")
        bad("neg_style must be mixed, substitution or explicit_not");
    if (data.induction_count <= 0) bad("induction_count must be positive");

    if (train.steps <= 0 || train.batch_size <= 0) bad("train steps/batch must be positive");
    if (train.lr <= 0) bad("train lr must be positive");
    if (train.eval_every <= 0 || train.eval_size <= 0) bad("train eval knobs must be positive");
    if (train.target_acc <= 0 || train.target_acc > 1) bad("target_acc outside (0, 1]");
    if (train.induction_mix < 0 || train.induction_mix >= 1) bad("induction_mix outside [0, 1)");

    if (score.limit <= 0 || score.bank_streams <= 0 || score.induction_count <= 0 ||
        score.sweep_examples <= 0)
        bad("score set sizes must be positive");
    if (score.bins < 2) bad("sweep needs at least 2 bins");
    if (score.sweep_subtask < 0 || score.sweep_subtask >= 10) bad("sweep_subtask outside 0..9");
    if (score.top_fraction <= 0 || score.top_fraction > 1) bad("top_fraction outside (0, 1]");

    probes::parse_arch(probe.arch);  // throws on unknown arch
    for (int l : probe.layers)
        if (l < 0 || l > model.n_layers) bad("probe layer outside 0..n_layers");
    if (probe.shots.empty()) bad("probe shots list is empty");
    for (int s : probe.shots)
        if (s < 0) bad("negative probe shot count");
    if (probe.train_examples <= 0 || probe.test_examples <= 0)
        bad("probe corpus sizes must be positive");
    if (probe.eval_categories <= 0 || probe.eval_attributes <= 0 || probe.eval_individuals <= 0)
        bad("probe eval pool slices must be positive");
    if (probe.epochs <= 0 || probe.batch_size <= 0 || probe.lr <= 0)
        bad("probe training knobs must be positive");
    if (probe.threads < 0) bad("probe threads must be >= 0");

    if (trace.examples <= 0) bad("trace examples must be positive");
    if (trace.example_index < 0 || trace.example_index >= trace.examples)
        bad("trace example_index outside the traced range");
    if (trace.examples > data.eval_count) bad("trace examples exceed the eval corpus");
    if (trace.flow_subtask < 0 || trace.flow_subtask >= 10) bad("flow_subtask outside 0..9");
    if (trace.depth_cap < 1 || trace.fanout_cap < 1) bad("flow tree caps must be >= 1");
}

// ---------------------------------------------------------------- manifest

void RunArtifacts::verify() const {
    for (const auto& [rel, digest] : files) {
        const fs::path p = dir / rel;
        if (!fs::exists(p)) throw std::runtime_error("manifest entry missing on disk: " + rel);
        if (sha256_file(p) != digest)
            throw std::runtime_error("manifest digest mismatch: " + rel);
    }
}

RunArtifacts load_manifest(const fs::path& dir) {
    const json j = json::parse(read_file(dir / kManifestFile));
    RunArtifacts ra;
    ra.dir = dir;
    ra.config_digest = j.at("config_digest").get<std::string>();
    for (const auto& [rel, digest] : j.at("files").items())
        ra.files[rel] = digest.get<std::string>();
    return ra;
}

namespace {

using ontogen::EntityPools;
using ontogen::GenParams;
using ontogen::ReasoningExample;

struct Ctx {
    const ExperimentConfig& cfg;
    fs::path dir;
    const WordLists& lists;
    const Vocab& vocab;
    Logger log;

    fs::path at(const char* file) const { return dir / file; }
    void say(const std::string& m) const {
        if (log) log(m);
    }
};

// stages read their inputs back from disk so a partial stage list works on
// any directory that already holds the earlier artifacts
void require_artifact(const Ctx& ctx, const char* file, const char* producer) {
    if (!fs::exists(ctx.at(file)))
        throw std::runtime_error(std::string("missing artifact ") + file + " (produced by the " +
                                 producer + " stage)");
}

GenParams gen_params(const DataParams& d, ontogen::NegativeStyle style, bool force_neg) {
    GenParams g;
    g.chain_len = d.chain_len;
    g.n_distractors = d.n_distractors;
    g.polarity_mix = d.polarity_mix;
    g.extra_attr_prob = d.extra_attr_prob;
    g.force_negative_extra = force_neg;
    g.neg_style = style;
    return g;
}

// "mixed" corpora interleave two equal halves so both negative renderings are
// in-distribution; each half alternates labels, preserving the exact balance
std::vector<ReasoningExample> styled_corpus(const Ctx& ctx, const DataParams& d,
                                            const EntityPools& pools, std::uint64_t seed,
                                            int count, const std::string& prefix) {
    ontogen::CorpusParams cp;
    cp.n_shots = d.n_shots;
    if (d.neg_style == "substitution" || d.neg_style == "explicit_not") {
        cp.gen = gen_params(d, d.neg_style == "substitution" ? ontogen::NegativeStyle::substitution
                                                             : ontogen::NegativeStyle::explicit_not,
                            false);
        cp.count = count;
        return ontogen::generate_corpus(seed, cp, pools, ctx.vocab, prefix);
    }
    cp.gen = gen_params(d, ontogen::NegativeStyle::substitution, false);
    cp.count = count - count / 2;
    auto corpus = ontogen::generate_corpus(seed, cp, pools, ctx.vocab, prefix + "-sub");
    cp.gen = gen_params(d, ontogen::NegativeStyle::explicit_not, false);
    cp.count = count / 2;
    auto tail = ontogen::generate_corpus(seed + 1, cp, pools, ctx.vocab, prefix + "-not");
    corpus.insert(corpus.end(), tail.begin(), tail.end());
    return corpus;
}

void stage_generate(const Ctx& ctx) {
    const DataParams& d = ctx.cfg.data;
    ctx.vocab.save(ctx.at(kVocabFile));
    const auto [train_pools, eval_pools] = EntityPools::fictional_split(ctx.lists,
                                                                        d.eval_categories);
    const auto train_corpus =
        styled_corpus(ctx, d, train_pools, d.seed, d.train_count, "train");
    ontogen::save_corpus(ctx.at(kTrainCorpusFile), train_corpus, ctx.vocab);
    const auto eval_corpus =
        styled_corpus(ctx, d, eval_pools, d.seed + 16, d.eval_count, "eval");
    ontogen::save_corpus(ctx.at(kEvalCorpusFile), eval_corpus, ctx.vocab);

    // bare transitivity chains for the induction mix, one per line, as words
    const auto probes =
        ontogen::generate_induction_probes(d.seed + 32, d.induction_count, train_pools, ctx.vocab);
    std::string text;
    for (const auto& pr : probes) text += ctx.vocab.detokenize(pr.tokens) + "\n";
    write_file_atomic(ctx.at(kInductionFile), text);
    ctx.say("generate: " + std::to_string(train_corpus.size()) + " train / " +
            std::to_string(eval_corpus.size()) + " eval examples");
}

std::vector<std::vector<int>> load_induction_streams(const Ctx& ctx) {
    std::vector<std::vector<int>> streams;
    std::istringstream in(read_file(ctx.at(kInductionFile)));
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) streams.push_back(ctx.vocab.tokenize(line));
    return streams;
}

void stage_train(const Ctx& ctx) {
    require_artifact(ctx, kTrainCorpusFile, "generate");
    require_artifact(ctx, kEvalCorpusFile, "generate");
    require_artifact(ctx, kInductionFile, "generate");
    const auto train_corpus = ontogen::load_corpus(ctx.at(kTrainCorpusFile), ctx.vocab);
    const auto eval_corpus = ontogen::load_corpus(ctx.at(kEvalCorpusFile), ctx.vocab);
    const auto induction = load_induction_streams(ctx);

    auto p = nanoformer::init_params(ctx.cfg.model, ctx.cfg.init_seed);
    const TrainParams& t = ctx.cfg.train;
    train::TrainConfig tc;
    tc.opt.lr = t.lr;
    tc.opt.lr_min = t.lr_min;
    tc.opt.beta1 = t.beta1;
    tc.opt.beta2 = t.beta2;
    tc.opt.weight_decay = t.weight_decay;
    tc.opt.clip = t.clip;
    tc.opt.warmup_steps = t.warmup_steps;
    tc.steps = t.steps;
    tc.batch_size = t.batch_size;
    tc.seed = t.seed;
    tc.induction_mix = t.induction_mix;
    tc.eval_every = t.eval_every;
    tc.eval_size = t.eval_size;
    tc.target_acc = t.target_acc;
    tc.max_minutes = t.max_minutes;
    tc.metrics_path = ctx.at(kMetricsFile);
    tc.logger = [&ctx](const std::string& m) { ctx.say("train: " + m); };

    const auto rep = train::train_model(p, train_corpus, eval_corpus, induction, tc);

    json meta;
    meta["experiment"] = ctx.cfg.name;
    meta["steps_run"] = rep.steps_run;
    meta["reached_target"] = rep.reached_target;
    nanoformer::save_checkpoint(ctx.at(kModelFile), p, meta.dump());

    json ev;
    ev["slot_em"] = rep.final_eval.slot_em;
    ev["verdict_acc"] = rep.final_eval.verdict_acc;
    ev["min_em"] = rep.final_eval.min_em();
    ev["n_examples"] = rep.final_eval.n_examples;
    ev["steps_run"] = rep.steps_run;
    ev["final_loss"] = rep.final_loss;
    ev["reached_target"] = rep.reached_target;
    ev["aborted_on_time"] = rep.aborted_on_time;
    write_file_atomic(ctx.at(kEvalFile), ev.dump(2) + "\n");
    if (rep.aborted_on_time)
        throw std::runtime_error("training hit the max_minutes guard before finishing");
}

void stage_score(const Ctx& ctx) {
    require_artifact(ctx, kModelFile, "train");
    require_artifact(ctx, kTrainCorpusFile, "generate");
    require_artifact(ctx, kEvalCorpusFile, "generate");
    const auto p = nanoformer::load_checkpoint(ctx.at(kModelFile));
    const auto train_corpus = ontogen::load_corpus(ctx.at(kTrainCorpusFile), ctx.vocab);
    const auto eval_corpus = ontogen::load_corpus(ctx.at(kEvalCorpusFile), ctx.vocab);
    const ScoreParams& sc = ctx.cfg.score;

    std::vector<std::vector<int>> streams;
    for (std::size_t i = 0; i < train_corpus.size() && i < static_cast<std::size_t>(sc.bank_streams);
         ++i)
        streams.push_back(train_corpus[i].tokens);
    const auto bank = intervene::build_ablation_bank(p, streams);
    bank.save(ctx.at(kBankFile));

    std::vector<headscore::ScoreTable> tables;
    std::vector<headscore::ScoreTable> decision, copy;
    for (int slot : {0, 2, 4, 6, 8}) {
        ctx.say("score: decision slot " + std::to_string(slot));
        decision.push_back(
            headscore::score_decision_set(p, eval_corpus, slot, bank, "eval", sc.limit));
    }
    for (int slot : {1, 3, 7}) {
        ctx.say("score: copy slot " + std::to_string(slot));
        copy.push_back(
            headscore::score_copy_set(p, eval_corpus, slot, ctx.vocab, "eval", sc.limit));
    }
    auto merged_decision = headscore::merge_tables(decision);
    auto merged_copy = headscore::merge_tables(copy);

    const auto [train_pools, eval_pools] =
        EntityPools::fictional_split(ctx.lists, ctx.cfg.data.eval_categories);
    const auto probes =
        ontogen::generate_induction_probes(sc.seed, sc.induction_count, eval_pools, ctx.vocab);
    std::vector<int> noise_pool;
    for (const auto& word : train_pools.categories) noise_pool.push_back(ctx.vocab.id(word));
    ctx.say("score: induction probes");
    auto induction_table =
        headscore::score_induction_set(p, probes, noise_pool, "induction", 0, nullptr);

    for (auto* t : {&merged_decision, &merged_copy, &induction_table}) headscore::delta_scores(*t);
    for (auto& t : decision) {
        headscore::delta_scores(t);
        tables.push_back(t);
    }
    tables.push_back(merged_decision);
    for (auto& t : copy) {
        headscore::delta_scores(t);
        tables.push_back(t);
    }
    tables.push_back(merged_copy);
    tables.push_back(induction_table);
    headscore::save_tables(ctx.at(kScoresFile), tables);

    std::vector<ReasoningExample> sweep_set(
        eval_corpus.begin(),
        eval_corpus.begin() + std::min<std::size_t>(eval_corpus.size(), sc.sweep_examples));
    ctx.say("score: center-out sweep");
    const auto steps = headscore::sweep_center_out(p, merged_decision, sweep_set, sc.sweep_subtask,
                                                   bank, sc.bins);
    std::string lines;
    for (const auto& st : steps) {
        json j;
        j["bins_removed"] = st.bins_removed;
        j["mu_lo"] = st.mu_lo;
        j["mu_hi"] = st.mu_hi;
        j["heads_removed"] = st.heads_removed;
        j["subtask"] = st.report.subtask;
        j["n_examples"] = st.report.n_examples;
        j["accuracy"] = st.report.accuracy;
        j["relative_accuracy"] = st.report.relative_accuracy;
        j["fraction_active"] = st.report.fraction_active;
        lines += j.dump() + "\n";
    }
    write_file_atomic(ctx.at(kSweepFile), lines);

    headscore::ThresholdPolicy policy;
    policy.kind = headscore::ThresholdPolicy::Kind::top_fraction;
    policy.fraction = sc.top_fraction;
    const auto sets =
        headscore::task_head_sets(merged_decision, merged_copy, induction_table, policy);
    const auto heads_json = [](const std::vector<headscore::HeadRef>& hs) {
        json arr = json::array();
        for (const auto& h : hs) arr.push_back({h.layer, h.head});
        return arr;
    };
    json tj;
    tj["policy"] = policy.describe();
    tj["decision"] = heads_json(sets.decision);
    tj["copy"] = heads_json(sets.copy);
    tj["induction"] = heads_json(sets.induction);
    tj["decision_copy"] = heads_json(sets.decision_copy);
    tj["decision_induction"] = heads_json(sets.decision_induction);
    tj["copy_induction"] = heads_json(sets.copy_induction);
    tj["decision_only"] = heads_json(sets.decision_only);
    tj["copy_only"] = heads_json(sets.copy_only);
    tj["induction_only"] = heads_json(sets.induction_only);
    write_file_atomic(ctx.at(kTaskSetsFile), tj.dump(2) + "\n");
}

void stage_probe(const Ctx& ctx) {
    require_artifact(ctx, kModelFile, "train");
    const auto p = nanoformer::load_checkpoint(ctx.at(kModelFile));
    const ProbeParams& pr = ctx.cfg.probe;

    const auto [pool_train, pool_eval] = probes::disjoint_probe_pools(
        ctx.lists, pr.eval_categories, pr.eval_attributes, pr.eval_individuals);

    // probing corpora always render negatives literally and guarantee one
    // negated chain edge per ontology
    GenParams pg = gen_params(ctx.cfg.data, ontogen::NegativeStyle::explicit_not, true);
    const probes::CorpusFactory factory = [&](int n_shots) {
        probes::ShotCorpora sc;
        ontogen::CorpusParams cp;
        cp.gen = pg;
        cp.n_shots = n_shots;
        cp.count = pr.train_examples;
        sc.train = ontogen::generate_corpus(pr.seed + 2 * n_shots, cp, pool_train, ctx.vocab,
                                            "probe-train-s" + std::to_string(n_shots));
        cp.count = pr.test_examples;
        sc.test = ontogen::generate_corpus(pr.seed + 2 * n_shots + 1, cp, pool_eval, ctx.vocab,
                                           "probe-eval-s" + std::to_string(n_shots));
        return sc;
    };

    std::vector<int> layers = pr.layers;
    if (layers.empty())
        for (int l = 0; l <= ctx.cfg.model.n_layers; ++l) layers.push_back(l);

    probes::SweepConfig scfg;
    scfg.hyper.lr = pr.lr;
    scfg.hyper.epochs = pr.epochs;
    scfg.hyper.batch_size = pr.batch_size;
    scfg.hyper.seed = pr.seed;
    scfg.collect_seed = pr.collect_seed;
    scfg.threads = pr.threads;
    const auto arch = probes::parse_arch(pr.arch);
    ctx.say("probe: sweeping " + std::to_string(layers.size()) + " layers x " +
            std::to_string(pr.shots.size()) + " shot counts");
    const auto report = probes::sweep_layers_shots(p, factory, layers, pr.shots, arch, scfg);
    probes::save_report(ctx.at(kProbeFile), report);

    if (!pr.controls) return;
    // shuffled-label and linear probes at the sweep's best cell
    const probes::ProbeCell* best = nullptr;
    for (const auto& cell : report.cells)
        if (!best || cell.accuracy > best->accuracy) best = &cell;
    if (!best) throw std::runtime_error("probe sweep produced no cells");

    const auto corpora = factory(best->shot);
    const auto train_ds = probes::collect_pair_features(p, corpora.train, best->layer, best->shot,
                                                        corpora.train_partition, pr.collect_seed);
    const auto test_ds = probes::collect_pair_features(p, corpora.test, best->layer, best->shot,
                                                       corpora.test_partition, pr.collect_seed);
    const auto shuffled = probes::shuffle_labels(train_ds, pr.seed + 77);
    const auto control = probes::train_probe(shuffled, arch, scfg.hyper);
    const auto control_eval = probes::eval_probe(control, test_ds);
    const auto linear = probes::train_probe(train_ds, probes::ProbeArch::linear, scfg.hyper);
    const auto linear_eval = probes::eval_probe(linear, test_ds);

    json cj;
    cj["layer"] = best->layer;
    cj["shot"] = best->shot;
    cj["best_accuracy"] = best->accuracy;
    cj["control_accuracy"] = control_eval.accuracy;
    cj["control_n"] = control_eval.n;
    cj["linear_accuracy"] = linear_eval.accuracy;
    cj["linear_n"] = linear_eval.n;
    write_file_atomic(ctx.at(kProbeControlsFile), cj.dump(2) + "\n");
    ctx.say("probe: best cell layer " + std::to_string(best->layer) + " acc " +
            std::to_string(best->accuracy) + ", control " +
            std::to_string(control_eval.accuracy) + ", linear " +
            std::to_string(linear_eval.accuracy));
}

ontogen::Segments crop_segments(const ontogen::Segments& seg, int n) {
    ontogen::Segments out = seg;
    out.generated_end = n;
    return out;
}

void stage_trace(const Ctx& ctx) {
    require_artifact(ctx, kModelFile, "train");
    require_artifact(ctx, kEvalCorpusFile, "generate");
    const auto p = nanoformer::load_checkpoint(ctx.at(kModelFile));
    const auto corpus = ontogen::load_corpus(ctx.at(kEvalCorpusFile), ctx.vocab);
    const TraceParams& tp = ctx.cfg.trace;
    const int L = p.cfg.n_layers;
    const int n_ex = std::min<int>(tp.examples, static_cast<int>(corpus.size()));
    if (tp.example_index >= n_ex)
        throw std::runtime_error("trace example_index outside the loaded corpus");

    std::vector<long long> depth_all(L, 0);
    std::map<std::string, std::vector<long long>> depth_kind = {
        {"decision", std::vector<long long>(L, 0)},
        {"copy", std::vector<long long>(L, 0)},
        {"induction", std::vector<long long>(L, 0)}};
    std::vector<double> ab_sum(L, 0.0);
    std::vector<long long> ab_cnt(L, 0);
    struct SlotSources {
        long long fewshot = 0, question = 0, generated = 0;
    };
    std::array<SlotSources, 10> sources{};
    std::array<const char*, 10> slot_kind{};

    for (int e = 0; e < n_ex; ++e) {
        const auto& ex = corpus[e];
        const auto full = tracecircuit::run_trace(p, ex.tokens, ex.segments);
        const auto ab = tracecircuit::context_abidance(full);
        for (int l = 0; l < L; ++l)
            for (int h = 0; h < ab.n_heads; ++h)
                if (!ab.is_masked(l, h)) {
                    ab_sum[l] += ab.at(l, h);
                    ++ab_cnt[l];
                }

        if (e == tp.example_index) tracecircuit::export_trace(ctx.at(kTraceFile), full);

        for (const auto& inst : ontogen::decompose_subtasks(ex)) {
            const auto trace = tracecircuit::run_trace(
                p, inst.prompt, crop_segments(ex.segments, static_cast<int>(inst.prompt.size())));
            const auto writers = tracecircuit::find_answer_writers(trace, inst);
            for (const auto& w : writers.writers) {
                ++depth_all[w.layer];
                ++depth_kind[ontogen::to_string(inst.kind)][w.layer];
            }
            const auto tree = tracecircuit::build_flow_tree(trace, writers, ctx.vocab,
                                                            tp.depth_cap, tp.fanout_cap);
            const auto attr = tracecircuit::attribute_answer_sources(tree, trace);
            slot_kind[inst.index] = ontogen::to_string(inst.kind);
            sources[inst.index].fewshot += attr.count(tracecircuit::SegmentLabel::fewshot);
            sources[inst.index].question += attr.count(tracecircuit::SegmentLabel::question);
            sources[inst.index].generated += attr.count(tracecircuit::SegmentLabel::generated);

            if (e == tp.example_index && inst.index == tp.flow_subtask) {
                json fj;
                fj["example_id"] = ex.id;
                fj["subtask"] = inst.index;
                fj["kind"] = ontogen::to_string(inst.kind);
                fj["answer_word"] = ctx.vocab.word(inst.answer);
                fj["tree"] = json::parse(flow_tree_to_json(tree));
                write_file_atomic(ctx.at(kFlowTreeFile), fj.dump(2) + "\n");
            }
        }

        if (e == tp.example_index) {
            json aj;
            aj["example_id"] = ex.id;
            aj["segments"] = {{"fewshot", {ex.segments.fewshot_begin, ex.segments.fewshot_end}},
                              {"question", {ex.segments.question_begin, ex.segments.question_end}},
                              {"generated",
                               {ex.segments.generated_begin, ex.segments.generated_end}}};
            json profiles = json::array();
            for (const auto& span : ex.subtasks) {
                const int query = span.answer_pos - 1;
                const auto prof = tracecircuit::attention_profile(full, query, 0, query + 1);
                json pj;
                pj["subtask"] = span.index;
                pj["kind"] = ontogen::to_string(span.kind);
                pj["query"] = query;
                pj["profile"] = prof;
                profiles.push_back(pj);
            }
            aj["profiles"] = profiles;
            write_file_atomic(ctx.at(kAttentionFile), aj.dump(2) + "\n");
        }
        ctx.say("trace: example " + std::to_string(e + 1) + "/" + std::to_string(n_ex));
    }

    json dj;
    dj["examples"] = n_ex;
    dj["writer_depth"] = {{"all", depth_all},
                          {"decision", depth_kind["decision"]},
                          {"copy", depth_kind["copy"]},
                          {"induction", depth_kind["induction"]}};
    json ab_depth = json::array();
    for (int l = 0; l < L; ++l)
        ab_depth.push_back(ab_cnt[l] ? ab_sum[l] / static_cast<double>(ab_cnt[l]) : 0.0);
    dj["abidance_depth"] = ab_depth;
    json src = json::array();
    for (int i = 0; i < 10; ++i)
        src.push_back({{"subtask", i},
                       {"kind", slot_kind[i] ? slot_kind[i] : "unknown"},
                       {"fewshot", sources[i].fewshot},
                       {"question", sources[i].question},
                       {"generated", sources[i].generated}});
    dj["sources_by_subtask"] = src;
    write_file_atomic(ctx.at(kDepthFile), dj.dump(2) + "\n");
}

void stage_report(const Ctx& ctx) { report::write_report(ctx.dir); }

void collect_files(RunArtifacts& ra) {
    ra.files.clear();
    std::vector<fs::path> paths;
    for (const auto& entry : fs::recursive_directory_iterator(ra.dir))
        if (entry.is_regular_file()) paths.push_back(entry.path());
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) {
        const std::string rel = fs::relative(p, ra.dir).generic_string();
        if (rel == kManifestFile || rel == kTimingsFile) continue;
        ra.files[rel] = sha256_file(p);
    }
}

void write_manifest(const RunArtifacts& ra, const ExperimentConfig& cfg) {
    json j;
    j["name"] = cfg.name;
    j["config_digest"] = ra.config_digest;
    json files = json::object();
    for (const auto& [rel, digest] : ra.files) files[rel] = digest;
    j["files"] = files;
    json stages = json::array();
    for (const auto& t : ra.timings) stages.push_back(t.stage);
    j["stages_run"] = stages;
    write_file_atomic(ra.dir / kManifestFile, j.dump(2) + "\n");

    json tj;
    json arr = json::array();
    for (const auto& t : ra.timings) arr.push_back({{"stage", t.stage}, {"seconds", t.seconds}});
    tj["timings"] = arr;
    write_file_atomic(ra.dir / kTimingsFile, tj.dump(2) + "\n");
}

} // namespace

RunArtifacts run_experiment(const ExperimentConfig& cfg, const fs::path& dir, const Logger& log) {
    cfg.validate();
    ensure_dir(dir);
    const std::string ini = cfg.to_ini();
    write_file_atomic(dir / kConfigFile, ini);

    RunArtifacts ra;
    ra.dir = dir;
    ra.config_digest = sha256_hex(ini);

    const WordLists& lists = WordLists::builtin();
    const Vocab vocab = Vocab::build(lists);
    const Ctx ctx{cfg, dir, lists, vocab, log};

    using Clock = std::chrono::steady_clock;
    try {
        for (Stage s : cfg.stages) {
            ctx.say(std::string("stage ") + to_string(s));
            const auto t0 = Clock::now();
            switch (s) {
                case Stage::generate: stage_generate(ctx); break;
                case Stage::train: stage_train(ctx); break;
                case Stage::score: stage_score(ctx); break;
                case Stage::probe: stage_probe(ctx); break;
                case Stage::trace: stage_trace(ctx); break;
                case Stage::report: stage_report(ctx); break;
            }
            ra.timings.push_back(
                {to_string(s), std::chrono::duration<double>(Clock::now() - t0).count()});
        }
    } catch (...) {
        // a failing stage still leaves a manifest covering whatever exists
        collect_files(ra);
        write_manifest(ra, cfg);
        throw;
    }
    collect_files(ra);
    write_manifest(ra, cfg);
    ra.verify();
    return ra;
}

std::string flow_tree_to_json(const tracecircuit::FlowTree& tree) {
    json j;
    j["answer"] = tree.answer;
    j["depth_cap"] = tree.depth_cap;
    j["fanout_cap"] = tree.fanout_cap;
    j["roots"] = tree.roots;
    json nodes = json::array();
    for (const auto& n : tree.nodes) {
        json nj;
        nj["layer"] = n.layer;
        nj["head"] = n.head;
        nj["target"] = n.target;
        nj["source"] = n.source;
        nj["info"] = n.info;
        nj["info_prob"] = n.info_prob;
        nj["source_content"] = n.source_content;
        nj["label"] = n.label;
        nj["children"] = n.children;
        nj["children_truncated"] = n.children_truncated;
        nj["depth_truncated"] = n.depth_truncated;
        nodes.push_back(nj);
    }
    j["nodes"] = nodes;
    return j.dump(2);
}

} // namespace cotlab::pipeline
