#include "cotlab/headscore.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "cotlab/ioutil.hpp"

namespace cotlab::headscore {

using nanoformer::Cache;
using nanoformer::Hook;
using nanoformer::Params;
using nanoformer::RecordLevel;
using ontogen::ReasoningExample;
using ontogen::SubtaskInstance;
using ontogen::SubtaskKind;

namespace {

std::vector<HeadRef> all_heads(const nanoformer::ModelConfig& cfg) {
    std::vector<HeadRef> out;
    out.reserve(static_cast<std::size_t>(cfg.n_layers) * cfg.n_heads);
    for (int l = 0; l < cfg.n_layers; ++l)
        for (int h = 0; h < cfg.n_heads; ++h) out.push_back({l, h});
    return out;
}

bool head_before(const HeadRef& a, const HeadRef& b) {
    return a.layer != b.layer ? a.layer < b.layer : a.head < b.head;
}

void check_bank(const nanoformer::ModelConfig& cfg, const AblationBank& bank) {
    if (bank.n_layers != cfg.n_layers || bank.n_heads != cfg.n_heads ||
        bank.d_model != cfg.d_model)
        throw std::invalid_argument("ablation bank shape does not match the model");
}

// the slot with the requested index, validated against the requested kind
SubtaskInstance slot_instance(const ReasoningExample& ex, int subtask, SubtaskKind want) {
    auto slots = ontogen::decompose_subtasks(ex);
    for (auto& inst : slots) {
        if (inst.index != subtask) continue;
        if (inst.kind != want)
            throw std::invalid_argument("subtask " + std::to_string(subtask) + " is a " +
                                        ontogen::to_string(inst.kind) + " slot, not " +
                                        ontogen::to_string(want));
        return inst;
    }
    throw std::invalid_argument("example has no subtask " + std::to_string(subtask));
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

// -------------------------------------------------------------- readouts

double answer_probability(std::span<const float> logits, int token) {
    if (token < 0 || static_cast<std::size_t>(token) >= logits.size())
        throw std::out_of_range("answer token outside the vocabulary");
    double mx = logits[0];
    for (float v : logits) mx = std::max(mx, static_cast<double>(v));
    double sum = 0.0;
    for (float v : logits) sum += std::exp(static_cast<double>(v) - mx);
    return std::exp(static_cast<double>(logits[static_cast<std::size_t>(token)]) - mx) / sum;
}

std::vector<double> log_softmax_row(std::span<const float> logits) {
    if (logits.empty()) throw std::invalid_argument("empty logits row");
    double mx = logits[0];
    for (float v : logits) mx = std::max(mx, static_cast<double>(v));
    double sum = 0.0;
    for (float v : logits) sum += std::exp(static_cast<double>(v) - mx);
    const double lse = mx + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i)
        out[i] = static_cast<double>(logits[i]) - lse;
    return out;
}

double kl_divergence(std::span<const double> lp, std::span<const double> lq) {
    if (lp.size() != lq.size()) throw std::invalid_argument("KL rows differ in length");
    double kl = 0.0;
    for (std::size_t i = 0; i < lp.size(); ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
    return kl;
}

// ---------------------------------------------------------- score tables

ScoreTable ScoreTable::make(std::string kind, int n_layers, int n_heads) {
    ScoreTable t;
    t.n_layers = n_layers;
    t.n_heads = n_heads;
    t.kind = std::move(kind);
    t.mu.assign(static_cast<std::size_t>(n_layers) * n_heads, 0.0);
    t.delta.assign(t.mu.size(), 0.0);
    return t;
}

void ScoreTable::validate() const {
    if (n_layers <= 0 || n_heads <= 0) throw std::invalid_argument("score table: empty head grid");
    if (kind != "decision" && kind != "copy" && kind != "induction")
        throw std::invalid_argument("score table: unknown kind '" + kind + "'");
    const auto want = static_cast<std::size_t>(n_layers) * n_heads;
    if (mu.size() != want || delta.size() != want)
        throw std::invalid_argument("score table: row count does not match the head grid");
    if (sample_count <= 0) throw std::invalid_argument("score table: sample count must be positive");
    for (double d : delta)
        if (!(d >= 0.0)) throw std::invalid_argument("score table: negative delta");
    if (kind == "copy") {
        // attention probabilities; 0 can appear when a far key underflows
        for (double m : mu)
            if (!(m >= 0.0 && m <= 1.0))
                throw std::invalid_argument("score table: copy score outside [0, 1]");
    }
    if (kind == "induction") {
        for (double m : mu)
            if (!(m <= 1.0 + 1e-9))
                throw std::invalid_argument("score table: induction score above 1");
    }
}

void delta_scores(ScoreTable& table) {
    if (table.mu.empty()) throw std::invalid_argument("delta_scores: empty table");
    std::vector<double> sorted = table.mu;
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (double v : sorted) sum += v;
    const double mean = sum / static_cast<double>(sorted.size());
    table.delta.resize(table.mu.size());
    for (std::size_t i = 0; i < table.mu.size(); ++i) {
        const double d = table.mu[i] - mean;
        table.delta[i] = d * d;
    }
}

ScoreTable merge_tables(std::span<const ScoreTable> tables) {
    if (tables.empty()) throw std::invalid_argument("merge_tables: nothing to merge");
    ScoreTable out = ScoreTable::make(tables[0].kind, tables[0].n_layers, tables[0].n_heads);
    out.subtask = -1;
    std::int64_t total = 0;
    std::string id;
    for (const auto& t : tables) {
        t.validate();
        if (t.kind != out.kind || t.n_layers != out.n_layers || t.n_heads != out.n_heads)
            throw std::invalid_argument("merge_tables: mixed table shapes or kinds");
        for (std::size_t i = 0; i < out.mu.size(); ++i)
            out.mu[i] += t.mu[i] * static_cast<double>(t.sample_count);
        total += t.sample_count;
        if (!id.empty()) id += "+";
        id += t.dataset_id;
    }
    for (auto& m : out.mu) m /= static_cast<double>(total);
    out.dataset_id = id;
    out.sample_count = static_cast<int>(total);
    return out;
}

void save_tables(const std::filesystem::path& path, std::span<const ScoreTable> tables) {
    std::string text = "layer\thead\tkind\tsubtask\tmu\tdelta\n";
    for (const auto& t : tables) {
        t.validate();
        text += "# table kind=" + t.kind + " subtask=" + std::to_string(t.subtask) +
                " dataset=" + (t.dataset_id.empty() ? "-" : t.dataset_id) +
                " samples=" + std::to_string(t.sample_count) +
                " layers=" + std::to_string(t.n_layers) +
                " heads=" + std::to_string(t.n_heads) + "\n";
        for (int l = 0; l < t.n_layers; ++l)
            for (int h = 0; h < t.n_heads; ++h) {
                text += std::to_string(l) + "\t" + std::to_string(h) + "\t" + t.kind + "\t" +
                        std::to_string(t.subtask) + "\t" + format_double(t.mu_at(l, h)) + "\t" +
                        format_double(t.delta_at(l, h)) + "\n";
            }
    }
    write_file_atomic(path, text);
}

std::vector<ScoreTable> load_tables(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open score table: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "layer\thead\tkind\tsubtask\tmu\tdelta")
        throw std::runtime_error("score table header mismatch: " + path.string());
    std::vector<ScoreTable> tables;
    std::size_t cursor = 0;  // next row slot in the open table
    const auto close_open_table = [&] {
        if (!tables.empty() && cursor != tables.back().mu.size())
            throw std::runtime_error("score table truncated: " + path.string());
    };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            close_open_table();
            ScoreTable t;
            std::istringstream meta(line.substr(1));
            std::string tok;
            meta >> tok;  // "table"
            while (meta >> tok) {
                const auto eq = tok.find('=');
                if (eq == std::string::npos)
                    throw std::runtime_error("bad table metadata: " + line);
                const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
                if (key == "kind") t.kind = val;
                else if (key == "subtask") t.subtask = std::stoi(val);
                else if (key == "dataset") t.dataset_id = val == "-" ? "" : val;
                else if (key == "samples") t.sample_count = std::stoi(val);
                else if (key == "layers") t.n_layers = std::stoi(val);
                else if (key == "heads") t.n_heads = std::stoi(val);
                else throw std::runtime_error("bad table metadata key: " + key);
            }
            if (t.n_layers <= 0 || t.n_heads <= 0)
                throw std::runtime_error("table metadata lacks the head grid: " + line);
            t.mu.assign(static_cast<std::size_t>(t.n_layers) * t.n_heads, 0.0);
            t.delta.assign(t.mu.size(), 0.0);
            tables.push_back(std::move(t));
            cursor = 0;
            continue;
        }
        if (tables.empty()) throw std::runtime_error("score table row before metadata");
        auto& t = tables.back();
        std::istringstream row(line);
        int layer = 0, head = 0, subtask = 0;
        std::string kind, mu_s, delta_s;
        if (!(row >> layer >> head >> kind >> subtask >> mu_s >> delta_s))
            throw std::runtime_error("bad score table row: " + line);
        if (kind != t.kind || subtask != t.subtask)
            throw std::runtime_error("score table row disagrees with its metadata");
        if (layer < 0 || layer >= t.n_layers || head < 0 || head >= t.n_heads ||
            t.idx(layer, head) != cursor)
            throw std::runtime_error("score table rows out of order");
        t.mu[cursor] = std::strtod(mu_s.c_str(), nullptr);
        t.delta[cursor] = std::strtod(delta_s.c_str(), nullptr);
        ++cursor;
    }
    close_open_table();
    for (auto& t : tables) t.validate();
    return tables;
}

// ------------------------------------------------------ per-instance scores

DecisionScore score_decision(const Params& p, std::span<const int> prompt, int answer,
                             const AblationBank& bank) {
    if (prompt.size() < 2) throw std::invalid_argument("decision prompt needs two tokens");
    if (answer < 0 || answer >= p.cfg.vocab_size)
        throw std::out_of_range("answer token absent from the vocabulary");
    check_bank(p.cfg, bank);

    const int last = static_cast<int>(prompt.size()) - 1;
    Cache clean;
    nanoformer::forward(p, prompt, clean, RecordLevel::full);
    const double p_org = answer_probability(clean.logits_row(last), answer);

    const auto heads = all_heads(p.cfg);
    const std::vector<int> at_last{last};

    // shared prefix; each hooked continuation recomputes only the last row
    Cache work;
    nanoformer::forward(p, prompt.first(static_cast<std::size_t>(last)), work,
                        RecordLevel::logits_only);
    const std::span<const int> tail = prompt.subspan(static_cast<std::size_t>(last), 1);

    auto corrupt_hooks = intervene::knockout_hooks(bank, heads, at_last);
    nanoformer::forward_suffix(p, tail, work, corrupt_hooks);
    const double p_cor = answer_probability(work.logits_row(last), answer);
    const double num = p_org - p_cor;

    DecisionScore out;
    out.mu.resize(heads.size());
    out.num.resize(heads.size());
    out.den.resize(heads.size());
    std::vector<HeadRef> others;
    others.reserve(heads.size() - 1);
    for (std::size_t i = 0; i < heads.size(); ++i) {
        others.clear();
        for (std::size_t j = 0; j < heads.size(); ++j)
            if (j != i) others.push_back(heads[j]);
        auto hooks = intervene::knockout_hooks(bank, others, at_last);
        const std::vector<HeadRef> one{heads[i]};
        auto restore = intervene::patch_hooks(clean, one, at_last);
        hooks.insert(hooks.end(), restore.begin(), restore.end());

        work.truncate(last);
        nanoformer::forward_suffix(p, tail, work, hooks);
        const double p_pat = answer_probability(work.logits_row(last), answer);
        const double den_raw = p_org - p_pat;
        const double den = std::abs(den_raw) < kDecisionDenomFloor ? kDecisionDenomFloor : den_raw;
        out.mu[i] = num / den;
        out.num[i] = num;
        out.den[i] = den_raw;
    }
    return out;
}

std::vector<double> score_copy(const Params& p, std::span<const int> prompt, int answer_pos) {
    if (prompt.empty()) throw std::invalid_argument("empty copy prompt");
    const int last = static_cast<int>(prompt.size()) - 1;
    if (answer_pos < 0 || answer_pos > last)
        throw std::out_of_range("answer position outside the prompt");
    Cache c;
    nanoformer::forward(p, prompt, c, RecordLevel::full);
    std::vector<double> mu(static_cast<std::size_t>(p.cfg.n_layers) * p.cfg.n_heads);
    std::size_t i = 0;
    for (int l = 0; l < p.cfg.n_layers; ++l)
        for (int h = 0; h < p.cfg.n_heads; ++h)
            mu[i++] = static_cast<double>(c.att_row(l, h, last)[static_cast<std::size_t>(answer_pos)]);
    return mu;
}

int find_answer_source(std::span<const int> tokens, int begin, int end, int subject,
                       int answer, int is_token, int not_token) {
    begin = std::max(begin, 0);
    end = std::min(end, static_cast<int>(tokens.size()));
    for (int i = begin; i + 2 < end; ++i) {
        if (tokens[static_cast<std::size_t>(i)] != subject ||
            tokens[static_cast<std::size_t>(i) + 1] != is_token)
            continue;
        if (tokens[static_cast<std::size_t>(i) + 2] == answer) return i + 2;
        if (tokens[static_cast<std::size_t>(i) + 2] == not_token && i + 3 < end &&
            tokens[static_cast<std::size_t>(i) + 3] == answer)
            return i + 3;
    }
    throw std::runtime_error("answer position not found in context");
}

InductionScore score_induction(const Params& p, std::span<const int> probe,
                               const InductionSites& sites, const std::array<int, 3>& noise) {
    if (probe.size() < 2) throw std::invalid_argument("induction probe too short");
    const int last = static_cast<int>(probe.size()) - 1;
    const std::array<int, 3> pos{sites.b1, sites.b2, sites.c};
    for (int s : pos)
        if (s < 0 || s > last) throw std::out_of_range("induction site outside the probe");
    for (int t : noise)
        if (t < 0 || t >= p.cfg.vocab_size)
            throw std::out_of_range("noise token absent from the vocabulary");

    Cache clean;
    nanoformer::forward(p, probe, clean, RecordLevel::full);
    const auto lp_org = log_softmax_row(clean.logits_row(last));

    const auto heads = all_heads(p.cfg);
    InductionScore out;
    out.mu.assign(heads.size(), 0.0);

    std::vector<int> corrupted(probe.begin(), probe.end());
    for (int s = 0; s < 3; ++s) {
        corrupted.assign(probe.begin(), probe.end());
        corrupted[static_cast<std::size_t>(pos[s])] = noise[static_cast<std::size_t>(s)];

        Cache cor;
        nanoformer::forward(p, corrupted, cor, RecordLevel::logits_only);
        const double d_ref = kl_divergence(lp_org, log_softmax_row(cor.logits_row(last)));
        if (d_ref <= 0.0) {
            out.skipped_sites.push_back(pos[s]);
            continue;
        }
        const std::vector<int> at_site{pos[s]};
        for (std::size_t i = 0; i < heads.size(); ++i) {
            const std::vector<HeadRef> one{heads[i]};
            auto hooks = intervene::patch_hooks(clean, one, at_site);
            Cache pat;
            nanoformer::forward(p, corrupted, pat, RecordLevel::logits_only, hooks);
            const double d_pat = kl_divergence(lp_org, log_softmax_row(pat.logits_row(last)));
            out.mu[i] += (d_ref - d_pat) / d_ref;
        }
        ++out.sites_scored;
    }
    if (out.sites_scored > 0)
        for (auto& m : out.mu) m /= static_cast<double>(out.sites_scored);
    return out;
}

// ---------------------------------------------------------- set aggregation

namespace {

std::size_t set_limit(std::size_t n, int limit) {
    return limit > 0 ? std::min(n, static_cast<std::size_t>(limit)) : n;
}

} // namespace

ScoreTable score_decision_set(const Params& p, std::span<const ReasoningExample> corpus,
                              int subtask, const AblationBank& bank,
                              const std::string& dataset_id, int limit) {
    ScoreTable t = ScoreTable::make("decision", p.cfg.n_layers, p.cfg.n_heads);
    t.raw_num.assign(t.mu.size(), 0.0);
    t.raw_den.assign(t.mu.size(), 0.0);
    const std::size_t n = set_limit(corpus.size(), limit);
    for (std::size_t e = 0; e < n; ++e) {
        const auto inst = slot_instance(corpus[e], subtask, SubtaskKind::decision);
        const auto ds = score_decision(p, inst.prompt, inst.answer, bank);
        for (std::size_t i = 0; i < t.mu.size(); ++i) {
            t.mu[i] += ds.mu[i];
            t.raw_num[i] += ds.num[i];
            t.raw_den[i] += ds.den[i];
        }
    }
    if (n == 0) throw std::invalid_argument("empty evaluation set");
    for (std::size_t i = 0; i < t.mu.size(); ++i) {
        t.mu[i] /= static_cast<double>(n);
        t.raw_num[i] /= static_cast<double>(n);
        t.raw_den[i] /= static_cast<double>(n);
    }
    t.subtask = subtask;
    t.dataset_id = dataset_id;
    t.sample_count = static_cast<int>(n);
    t.validate();
    return t;
}

ScoreTable score_copy_set(const Params& p, std::span<const ReasoningExample> corpus, int subtask,
                          const Vocab& vocab, const std::string& dataset_id, int limit) {
    ScoreTable t = ScoreTable::make("copy", p.cfg.n_layers, p.cfg.n_heads);
    const std::size_t n = set_limit(corpus.size(), limit);
    for (std::size_t e = 0; e < n; ++e) {
        const auto& ex = corpus[e];
        const auto inst = slot_instance(ex, subtask, SubtaskKind::copy);
        const int subject = inst.prompt[inst.prompt.size() - 2];
        const int src = find_answer_source(inst.prompt, ex.segments.question_begin,
                                           ex.segments.question_end, subject, inst.answer,
                                           vocab.sp().is, vocab.sp().nott);
        const auto mu = score_copy(p, inst.prompt, src);
        for (std::size_t i = 0; i < t.mu.size(); ++i) t.mu[i] += mu[i];
    }
    if (n == 0) throw std::invalid_argument("empty evaluation set");
    for (auto& m : t.mu) m /= static_cast<double>(n);
    t.subtask = subtask;
    t.dataset_id = dataset_id;
    t.sample_count = static_cast<int>(n);
    t.validate();
    return t;
}

ScoreTable score_induction_set(const Params& p, std::span<const ontogen::InductionProbe> probes,
                               std::span<const int> noise_pool, const std::string& dataset_id,
                               int limit, std::ostream* log) {
    ScoreTable t = ScoreTable::make("induction", p.cfg.n_layers, p.cfg.n_heads);
    const std::size_t n = set_limit(probes.size(), limit);
    int used = 0;
    for (std::size_t e = 0; e < n; ++e) {
        const auto& probe = probes[e];
        std::array<int, 3> noise{};
        int picked = 0;
        for (int cand : noise_pool) {
            if (std::find(probe.tokens.begin(), probe.tokens.end(), cand) != probe.tokens.end())
                continue;
            if (picked > 0 && (noise[0] == cand || (picked > 1 && noise[1] == cand))) continue;
            noise[static_cast<std::size_t>(picked++)] = cand;
            if (picked == 3) break;
        }
        if (picked < 3) throw std::invalid_argument("noise pool exhausted for induction probe");
        const auto sc = score_induction(
            p, probe.tokens, {probe.b1_pos, probe.b2_pos, probe.c_pos}, noise);
        for (int s : sc.skipped_sites)
            if (log)
                *log << "induction probe " << e << ": site " << s
                     << " skipped (zero reference divergence)\n";
        if (sc.sites_scored == 0) continue;
        for (std::size_t i = 0; i < t.mu.size(); ++i) t.mu[i] += sc.mu[i];
        ++used;
    }
    if (used == 0) throw std::invalid_argument("empty evaluation set");
    for (auto& m : t.mu) m /= static_cast<double>(used);
    t.subtask = -1;
    t.dataset_id = dataset_id;
    t.sample_count = used;
    t.validate();
    return t;
}

// ----------------------------------------------------------------- pruning

std::string report_line(const EvalReport& r) {
    nlohmann::json j;
    j["subtask"] = r.subtask;
    j["n_examples"] = r.n_examples;
    j["accuracy"] = r.accuracy;
    j["relative_accuracy"] = r.relative_accuracy;
    j["heads_removed"] = r.heads_removed;
    j["fraction_active"] = r.fraction_active;
    return j.dump();
}

EvalReport parse_report_line(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    EvalReport r;
    r.subtask = j.at("subtask").get<int>();
    r.n_examples = j.at("n_examples").get<int>();
    r.accuracy = j.at("accuracy").get<double>();
    r.relative_accuracy = j.at("relative_accuracy").get<double>();
    r.heads_removed = j.at("heads_removed").get<int>();
    r.fraction_active = j.at("fraction_active").get<double>();
    return r;
}

std::vector<HeadRef> heads_outside(const ScoreTable& table, const PruneRange& range) {
    if (range.mu_min > range.mu_max) throw std::invalid_argument("inverted prune range");
    std::vector<HeadRef> out;
    for (int l = 0; l < table.n_layers; ++l)
        for (int h = 0; h < table.n_heads; ++h) {
            const double m = table.mu_at(l, h);
            if (m < range.mu_min || m > range.mu_max) out.push_back({l, h});
        }
    return out;
}

namespace {

// answer-slot hit under the given hooks, one teacher-forced forward
bool slot_hit(const Params& p, const ReasoningExample& ex, int subtask,
              std::span<const Hook> hooks) {
    const ontogen::SubtaskSpan* span = nullptr;
    for (const auto& st : ex.subtasks)
        if (st.index == subtask) span = &st;
    if (!span) throw std::invalid_argument("example has no subtask " + std::to_string(subtask));
    Cache c;
    nanoformer::forward(p, ex.tokens, c, RecordLevel::logits_only, hooks);
    const auto row = c.logits_row(span->answer_pos - 1);
    return static_cast<int>(kernels::argmax(row.data(), row.size())) == span->answer_token;
}

} // namespace

std::vector<ReasoningExample> filter_full_correct(const Params& p,
                                                  std::span<const ReasoningExample> corpus,
                                                  int subtask) {
    std::vector<ReasoningExample> out;
    for (const auto& ex : corpus)
        if (slot_hit(p, ex, subtask, {})) out.push_back(ex);
    return out;
}

EvalReport eval_with_removed(const Params& p, std::span<const HeadRef> removed,
                             std::span<const ReasoningExample> dataset, int subtask,
                             const AblationBank& bank) {
    if (dataset.empty()) throw std::invalid_argument("empty evaluation set");
    std::vector<Hook> hooks;
    if (!removed.empty()) {
        check_bank(p.cfg, bank);
        hooks = intervene::knockout_hooks(bank, removed, {});
    }
    int hits = 0, clean_hits = 0;
    for (const auto& ex : dataset) {
        if (slot_hit(p, ex, subtask, hooks)) ++hits;
        if (slot_hit(p, ex, subtask, {})) ++clean_hits;
    }
    EvalReport r;
    r.subtask = subtask;
    r.n_examples = static_cast<int>(dataset.size());
    r.accuracy = static_cast<double>(hits) / static_cast<double>(dataset.size());
    const double clean = static_cast<double>(clean_hits) / static_cast<double>(dataset.size());
    r.relative_accuracy = clean > 0.0 ? r.accuracy / clean : 0.0;
    r.heads_removed = static_cast<int>(removed.size());
    r.fraction_active =
        1.0 - static_cast<double>(removed.size()) /
                  static_cast<double>(p.cfg.n_layers * p.cfg.n_heads);
    return r;
}

EvalReport prune_and_eval(const Params& p, const ScoreTable& table, const PruneRange& range,
                          std::span<const ReasoningExample> dataset, int subtask,
                          const AblationBank& bank) {
    table.validate();
    const auto removed = heads_outside(table, range);
    return eval_with_removed(p, removed, dataset, subtask, bank);
}

std::vector<SweepStep> sweep_center_out(const Params& p, const ScoreTable& table,
                                        std::span<const ReasoningExample> dataset, int subtask,
                                        const AblationBank& bank, int n_bins) {
    table.validate();
    if (n_bins <= 0) throw std::invalid_argument("sweep needs at least one bin");
    double lo = table.mu[0], hi = table.mu[0], sum = 0.0;
    for (double m : table.mu) {
        lo = std::min(lo, m);
        hi = std::max(hi, m);
        sum += m;
    }
    const double mean = sum / static_cast<double>(table.mu.size());
    const double width = (hi - lo) / static_cast<double>(n_bins);

    // heads per bin, then bins ordered center-out by distance from the mean
    std::vector<std::vector<HeadRef>> bins(static_cast<std::size_t>(n_bins));
    for (int l = 0; l < table.n_layers; ++l)
        for (int h = 0; h < table.n_heads; ++h) {
            int b = width > 0.0
                        ? static_cast<int>((table.mu_at(l, h) - lo) / width)
                        : 0;
            b = std::clamp(b, 0, n_bins - 1);
            bins[static_cast<std::size_t>(b)].push_back({l, h});
        }
    std::vector<int> order(static_cast<std::size_t>(n_bins));
    for (int i = 0; i < n_bins; ++i) order[static_cast<std::size_t>(i)] = i;
    auto center = [&](int b) { return lo + width * (static_cast<double>(b) + 0.5); };
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double da = std::abs(center(a) - mean), db = std::abs(center(b) - mean);
        return da != db ? da < db : a < b;
    });

    std::vector<SweepStep> steps;
    std::vector<HeadRef> removed;
    double r_lo = 0.0, r_hi = 0.0;
    bool any = false;
    EvalReport last_report{};
    for (int k = 0; k < n_bins; ++k) {
        const int b = order[static_cast<std::size_t>(k)];
        const auto& members = bins[static_cast<std::size_t>(b)];
        for (const auto& hr : members) {
            const double m = table.mu_at(hr.layer, hr.head);
            r_lo = any ? std::min(r_lo, m) : m;
            r_hi = any ? std::max(r_hi, m) : m;
            any = true;
            removed.push_back(hr);
        }
        SweepStep st;
        st.bins_removed = k + 1;
        st.mu_lo = r_lo;
        st.mu_hi = r_hi;
        st.heads_removed = static_cast<int>(removed.size());
        if (members.empty() && k > 0) {
            st.report = last_report;  // nothing new removed; result is unchanged
        } else {
            st.report = eval_with_removed(p, removed, dataset, subtask, bank);
            last_report = st.report;
        }
        steps.push_back(std::move(st));
    }
    return steps;
}

// --------------------------------------------------------------- task sets

std::string ThresholdPolicy::describe() const {
    char buf[96];
    if (kind == Kind::top_fraction)
        std::snprintf(buf, sizeof buf, "top %.4g of heads by mu", fraction);
    else
        std::snprintf(buf, sizeof buf, "mu in [%.6g, %.6g]", range.mu_min, range.mu_max);
    return buf;
}

std::vector<HeadRef> select_heads(const ScoreTable& table, const ThresholdPolicy& policy) {
    table.validate();
    std::vector<HeadRef> out;
    if (policy.kind == ThresholdPolicy::Kind::mu_range) {
        if (policy.range.mu_min > policy.range.mu_max)
            throw std::invalid_argument("inverted selection range");
        for (int l = 0; l < table.n_layers; ++l)
            for (int h = 0; h < table.n_heads; ++h) {
                const double m = table.mu_at(l, h);
                if (m >= policy.range.mu_min && m <= policy.range.mu_max) out.push_back({l, h});
            }
        return out;
    }
    if (policy.fraction < 0.0 || policy.fraction > 1.0)
        throw std::invalid_argument("selection fraction outside [0, 1]");
    std::vector<HeadRef> ranked;
    ranked.reserve(table.mu.size());
    for (int l = 0; l < table.n_layers; ++l)
        for (int h = 0; h < table.n_heads; ++h) ranked.push_back({l, h});
    std::sort(ranked.begin(), ranked.end(), [&](const HeadRef& a, const HeadRef& b) {
        const double ma = table.mu_at(a.layer, a.head), mb = table.mu_at(b.layer, b.head);
        return ma != mb ? ma > mb : head_before(a, b);
    });
    const auto k = static_cast<std::size_t>(
        std::llround(policy.fraction * static_cast<double>(ranked.size())));
    ranked.resize(std::min(k, ranked.size()));
    std::sort(ranked.begin(), ranked.end(), head_before);
    return ranked;
}

TaskSets task_head_sets(const ScoreTable& decision, const ScoreTable& copy,
                        const ScoreTable& induction, const ThresholdPolicy& policy) {
    if (decision.kind != "decision" || copy.kind != "copy" || induction.kind != "induction")
        throw std::invalid_argument("task_head_sets: tables out of order");
    if (decision.n_layers != copy.n_layers || decision.n_layers != induction.n_layers ||
        decision.n_heads != copy.n_heads || decision.n_heads != induction.n_heads)
        throw std::invalid_argument("task_head_sets: tables describe different models");

    TaskSets s;
    s.decision = select_heads(decision, policy);
    s.copy = select_heads(copy, policy);
    s.induction = select_heads(induction, policy);

    auto inter = [](const std::vector<HeadRef>& a, const std::vector<HeadRef>& b) {
        std::vector<HeadRef> out;
        std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out),
                              head_before);
        return out;
    };
    auto minus = [](const std::vector<HeadRef>& a, const std::vector<HeadRef>& b) {
        std::vector<HeadRef> out;
        std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out),
                            head_before);
        return out;
    };
    s.decision_copy = inter(s.decision, s.copy);
    s.decision_induction = inter(s.decision, s.induction);
    s.copy_induction = inter(s.copy, s.induction);
    s.decision_only = minus(minus(s.decision, s.copy), s.induction);
    s.copy_only = minus(minus(s.copy, s.decision), s.induction);
    s.induction_only = minus(minus(s.induction, s.decision), s.copy);
    return s;
}

EvalReport eval_kept_heads(const Params& p, std::span<const HeadRef> kept,
                           std::span<const ReasoningExample> dataset, int subtask,
                           const AblationBank& bank) {
    std::vector<HeadRef> removed;
    for (const auto& hr : all_heads(p.cfg))
        if (std::find(kept.begin(), kept.end(), hr) == kept.end()) removed.push_back(hr);
    return eval_with_removed(p, removed, dataset, subtask, bank);
}

} // namespace cotlab::headscore
