#include "cotlab/ontogen.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "cotlab/ioutil.hpp"

namespace cotlab::ontogen {

using nlohmann::json;

const char* to_string(SubtaskKind k) {
    switch (k) {
        case SubtaskKind::decision: return "decision";
        case SubtaskKind::copy: return "copy";
        case SubtaskKind::induction: return "induction";
    }
    return "?";
}

const char* to_string(NegativeStyle s) {
    return s == NegativeStyle::substitution ? "substitution" : "explicit_not";
}

static SubtaskKind subtask_kind_of(int index) {
    switch (index) {
        case 1: case 3: case 7: return SubtaskKind::copy;
        case 5: case 9: return SubtaskKind::induction;
        default: return SubtaskKind::decision;
    }
}

// ------------------------------------------------------------ entity pools

EntityPools EntityPools::fictional(const WordLists& lists) {
    return {lists.fictional_categories, lists.attributes, lists.individuals};
}

EntityPools EntityPools::real(const WordLists& lists) {
    return {lists.real_categories, lists.attributes, lists.individuals};
}

std::pair<EntityPools, EntityPools> EntityPools::fictional_split(const WordLists& lists,
                                                                 int eval_categories) {
    const auto& cats = lists.fictional_categories;
    if (eval_categories <= 0 || eval_categories >= static_cast<int>(cats.size()))
        throw std::invalid_argument("fictional_split: eval_categories out of range");
    EntityPools train{{cats.begin(), cats.end() - eval_categories}, lists.attributes, lists.individuals};
    EntityPools eval{{cats.end() - eval_categories, cats.end()}, lists.attributes, lists.individuals};
    return {train, eval};
}

namespace {

// hands out entities without replacement; shared across the blocks of one
// example so shots and question never collide
struct EntityCursor {
    std::vector<std::string> cats, attrs, inds;
    std::size_t c = 0, a = 0, n = 0;

    EntityCursor(Rng& rng, const EntityPools& pools)
        : cats(pools.categories), attrs(pools.attributes), inds(pools.individuals) {
        rng.shuffle(cats);
        rng.shuffle(attrs);
        rng.shuffle(inds);
    }
    const std::string& next_cat() {
        if (c >= cats.size()) throw std::runtime_error("entity pool exhausted: categories");
        return cats[c++];
    }
    const std::string& next_attr() {
        if (a >= attrs.size()) throw std::runtime_error("entity pool exhausted: attributes");
        return attrs[a++];
    }
    const std::string& next_ind() {
        if (n >= inds.size()) throw std::runtime_error("entity pool exhausted: individuals");
        return inds[n++];
    }
};

OntologyTree gen_with_cursor(Rng& rng, EntityCursor& cur, const GenParams& params,
                             std::optional<bool> forced_label) {
    if (params.chain_len < 1) throw std::invalid_argument("gen_ontology: chain_len must be >= 1");
    if (params.n_distractors < 0) throw std::invalid_argument("gen_ontology: n_distractors < 0");
    if (params.polarity_mix < 0.0 || params.polarity_mix > 1.0)
        throw std::invalid_argument("gen_ontology: polarity_mix must lie in [0, 1]");

    OntologyTree t;
    t.neg_style = params.neg_style;
    t.real_words = params.real_words;
    for (int i = 0; i < params.chain_len; ++i) t.chain.push_back(cur.next_cat());
    t.individual = cur.next_ind();
    t.attribute = cur.next_attr();

    // core statements: individual edge, chain edges, canonical attribute edge
    t.statements.push_back({t.individual, t.chain.front(), false, false, {}});
    for (int i = 0; i + 1 < params.chain_len; ++i)
        t.statements.push_back({t.chain[i], t.chain[i + 1], false, false, {}});
    t.statements.push_back({t.chain.back(), t.attribute, false, false, {}});

    // optional extra attribute edge on a non-final chain category
    const bool want_extra = params.force_negative_extra ||
                            (params.chain_len >= 2 && rng.bernoulli(params.extra_attr_prob));
    if (want_extra && params.chain_len >= 2) {
        const std::string& cat = t.chain[rng.below(static_cast<std::uint64_t>(params.chain_len - 1))];
        const bool neg = params.force_negative_extra || rng.bernoulli(params.polarity_mix);
        t.statements.push_back({cat, cur.next_attr(), neg, false, {}});
    }

    // distractor statements over disjoint entities
    for (int i = 0; i < params.n_distractors; ++i) {
        Statement s;
        s.subject = cur.next_cat();
        s.distractor = true;
        s.negated = rng.bernoulli(params.polarity_mix);
        s.object = rng.bernoulli(0.5) ? cur.next_cat() : cur.next_attr();
        t.statements.push_back(std::move(s));
    }

    // query; for a false label the attribute must not be derivable
    t.query.individual = t.individual;
    t.query.label = forced_label ? *forced_label : rng.bernoulli(0.5);
    if (t.query.label) {
        t.query.attribute = t.attribute;
    } else {
        std::vector<std::string> distractor_attrs;
        for (const auto& s : t.statements)
            if (s.distractor && !s.negated) distractor_attrs.push_back(s.object);
        if (!distractor_attrs.empty() && rng.bernoulli(0.5))
            t.query.attribute = rng.choice(distractor_attrs);
        else
            t.query.attribute = cur.next_attr();
    }

    // negative rendering: substitution turns "x is not b" into "x is w"
    if (params.neg_style == NegativeStyle::substitution) {
        for (auto& s : t.statements)
            if (s.negated) {
                s.substituted_from = s.object;
                s.object = cur.next_cat();
                s.negated = false;
            }
    }
    return t;
}

} // namespace

std::vector<std::string> OntologyTree::chain_entities() const {
    std::vector<std::string> out;
    out.push_back(individual);
    out.insert(out.end(), chain.begin(), chain.end());
    for (const auto& s : statements)
        if (!s.distractor && !s.negated) out.push_back(s.object);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

OntologyTree gen_ontology(Rng& rng, const EntityPools& pools, const GenParams& params,
                          std::optional<bool> forced_label) {
    EntityCursor cur(rng, pools);
    return gen_with_cursor(rng, cur, params, forced_label);
}

std::vector<Statement> linearize(const OntologyTree& tree, Rng& rng) {
    std::vector<Statement> out = tree.statements;
    rng.shuffle(out);
    return out;
}

// ------------------------------------------------------------ rendering

namespace {

struct StreamBuilder {
    const Vocab& v;
    std::vector<int> toks;
    std::vector<std::uint8_t> mask;

    void push(int id, bool m) {
        toks.push_back(id);
        mask.push_back(m ? 1 : 0);
    }
    void push_word(const std::string& w, bool m) { push(v.id(w), m); }
    int pos() const { return static_cast<int>(toks.size()); }
};

void push_statement(StreamBuilder& b, const Statement& s, bool masked, StatementPos* rec) {
    if (rec) rec->subject_pos = b.pos();
    b.push_word(s.subject, masked);
    b.push(b.v.sp().is, masked);
    if (s.negated) b.push(b.v.sp().nott, masked);
    if (rec) {
        rec->object_pos = b.pos();
        rec->negated = s.negated;
        rec->distractor = s.distractor;
    }
    b.push_word(s.object, masked);
    b.push(b.v.sp().dot, masked);
}

// CoT statements in gold order: stated edge, then the derived fact
std::vector<Statement> cot_statements(const OntologyTree& t) {
    std::vector<Statement> out;
    out.push_back({t.individual, t.chain.front(), false, false, {}});
    std::string reached = t.chain.front();
    auto extend = [&](const std::string& next) {
        out.push_back({reached, next, false, false, {}});
        out.push_back({t.individual, next, false, false, {}});
        reached = next;
    };
    for (std::size_t i = 1; i < t.chain.size(); ++i) extend(t.chain[i]);
    extend(t.attribute);
    return out;
}

// input part: "input : <statements> true or false : <ind> is <attr> .
//              let us think step by step . response :"
void push_input(StreamBuilder& b, const OntologyTree& t, std::span<const Statement> stmts,
                std::vector<StatementPos>* positions) {
    const auto& sp = b.v.sp();
    b.push(sp.input, false);
    b.push(sp.colon, false);
    for (const auto& s : stmts) {
        StatementPos rec;
        push_statement(b, s, false, positions ? &rec : nullptr);
        if (positions) positions->push_back(rec);
    }
    b.push(sp.vtrue, false);
    b.push(sp.orr, false);
    b.push(sp.vfalse, false);
    b.push(sp.colon, false);
    b.push_word(t.query.individual, false);
    b.push(sp.is, false);
    b.push_word(t.query.attribute, false);
    b.push(sp.dot, false);
    b.push(sp.let, false);
    b.push(sp.us, false);
    b.push(sp.think, false);
    b.push(sp.step, false);
    b.push(sp.by, false);
    b.push(sp.step, false);
    b.push(sp.dot, false);
    b.push(sp.response, false);
    b.push(sp.colon, false);
}

void push_cot(StreamBuilder& b, const OntologyTree& t) {
    for (const auto& s : cot_statements(t)) push_statement(b, s, true, nullptr);
    b.push(t.query.label ? b.v.sp().vtrue : b.v.sp().vfalse, true);
}

} // namespace

ReasoningExample make_example(const OntologyTree& tree, std::span<const OntologyTree> shot_trees,
                              Rng& rng, const Vocab& vocab) {
    ReasoningExample ex;
    ex.tree = tree;
    ex.label = tree.query.label;

    StreamBuilder b{vocab, {}, {}};
    for (const auto& shot : shot_trees) {
        const auto stmts = linearize(shot, rng);
        push_input(b, shot, stmts, nullptr);
        push_cot(b, shot);
    }
    ex.segments.fewshot_begin = 0;
    ex.segments.fewshot_end = b.pos();

    ex.segments.question_begin = b.pos();
    ex.question_statements = linearize(tree, rng);
    push_input(b, tree, ex.question_statements, &ex.statement_positions);
    ex.segments.question_end = b.pos();

    ex.segments.generated_begin = b.pos();
    push_cot(b, tree);
    ex.segments.generated_end = b.pos();

    ex.tokens = std::move(b.toks);
    ex.loss_mask = std::move(b.mask);
    ex.gold_cot.assign(ex.tokens.begin() + ex.segments.generated_begin,
                       ex.tokens.begin() + ex.segments.generated_end);

    // ten subtask spans for the canonical two-category form: the answers are
    // the subject/object slots of the five CoT statements (4 tokens each)
    if (tree.chain.size() == 2) {
        const int g = ex.segments.generated_begin;
        std::vector<int> answer_pos;
        for (int stmt = 0; stmt < 5; ++stmt) {
            answer_pos.push_back(g + 4 * stmt);      // subject
            answer_pos.push_back(g + 4 * stmt + 2);  // object
        }
        for (int i = 0; i < 10; ++i) {
            SubtaskSpan s;
            s.index = i;
            s.kind = subtask_kind_of(i);
            s.answer_pos = answer_pos[static_cast<std::size_t>(i)];
            s.span_begin = s.answer_pos;
            s.span_end = i + 1 < 10 ? answer_pos[static_cast<std::size_t>(i) + 1]
                                    : ex.segments.generated_end;
            s.answer_token = ex.tokens[static_cast<std::size_t>(s.answer_pos)];
            ex.subtasks.push_back(s);
        }
    }
    return ex;
}

namespace {

ReasoningExample build_example_from_cursor(Rng& rng, EntityCursor& cur, const Vocab& vocab,
                                           const GenParams& params, int n_shots,
                                           std::optional<bool> forced_label) {
    std::vector<OntologyTree> shots;
    for (int s = 0; s < n_shots; ++s)
        shots.push_back(gen_with_cursor(rng, cur, params, s % 2 == 0));
    OntologyTree tree = gen_with_cursor(rng, cur, params, forced_label);
    return make_example(tree, shots, rng, vocab);
}

} // namespace

ReasoningExample make_false_example(Rng& rng, const Vocab& vocab, const GenParams& params,
                                    int n_shots, std::optional<bool> forced_label) {
    GenParams p = params;
    p.real_words = true;
    EntityCursor cur(rng, EntityPools::real(WordLists::builtin()));
    return build_example_from_cursor(rng, cur, vocab, p, n_shots, forced_label);
}

std::vector<ReasoningExample> generate_corpus(std::uint64_t seed, const CorpusParams& params,
                                              const EntityPools& pools, const Vocab& vocab,
                                              const std::string& id_prefix) {
    std::vector<ReasoningExample> out;
    out.reserve(static_cast<std::size_t>(params.count));
    Rng root(seed);
    for (int i = 0; i < params.count; ++i) {
        Rng ex_rng = root.fork(static_cast<std::uint64_t>(i));
        EntityCursor cur(ex_rng, pools);
        ReasoningExample ex =
            build_example_from_cursor(ex_rng, cur, vocab, params.gen, params.n_shots, i % 2 == 0);
        ex.id = id_prefix + "-" + std::to_string(i);
        out.push_back(std::move(ex));
    }
    return out;
}

// ------------------------------------------------------------ subtasks

std::vector<SubtaskInstance> decompose_subtasks(const ReasoningExample& ex) {
    if (ex.subtasks.size() != 10)
        throw std::invalid_argument("decompose_subtasks: example lacks the canonical 10-subtask form");
    std::vector<SubtaskInstance> out;
    out.reserve(10);
    for (const auto& s : ex.subtasks) {
        SubtaskInstance inst;
        inst.index = s.index;
        inst.kind = s.kind;
        inst.prompt.assign(ex.tokens.begin(), ex.tokens.begin() + s.answer_pos);
        inst.answer = s.answer_token;
        out.push_back(std::move(inst));
    }
    return out;
}

// ------------------------------------------------------------ verification

namespace {

struct ParsedCot {
    std::vector<std::pair<std::string, std::string>> stmts;
    int verdict = -1;  // vocab id
    std::string error;
};

ParsedCot parse_cot(std::span<const int> cot, const Vocab& vocab) {
    ParsedCot p;
    const auto& sp = vocab.sp();
    std::size_t i = 0;
    while (i < cot.size()) {
        if (cot[i] == sp.vtrue || cot[i] == sp.vfalse) {
            if (i + 1 != cot.size()) { p.error = "tokens after verdict"; return p; }
            p.verdict = cot[i];
            return p;
        }
        if (i + 4 > cot.size()) { p.error = "truncated statement"; return p; }
        if (cot[i + 1] != sp.is || cot[i + 3] != sp.dot) { p.error = "malformed statement"; return p; }
        if (cot[i + 2] == sp.nott) { p.error = "negated statement in chain of thought"; return p; }
        p.stmts.emplace_back(vocab.word(cot[i]), vocab.word(cot[i + 2]));
        i += 4;
    }
    p.error = "missing verdict token";
    return p;
}

} // namespace

VerifyResult verify_cot(const OntologyTree& tree, std::span<const int> cot, const Vocab& vocab) {
    ParsedCot p = parse_cot(cot, vocab);
    if (!p.error.empty()) return {false, p.error};
    if (p.stmts.empty()) return {false, "empty chain of thought"};

    std::set<std::pair<std::string, std::string>> stated;
    for (const auto& s : tree.statements)
        if (!s.negated) stated.insert({s.subject, s.object});

    for (std::size_t i = 0; i < p.stmts.size(); ++i) {
        const auto& st = p.stmts[i];
        if (stated.count(st)) continue;
        const bool step_ok = i >= 2 && p.stmts[i - 2].second == p.stmts[i - 1].first &&
                             st.first == p.stmts[i - 2].first && st.second == p.stmts[i - 1].second;
        if (!step_ok)
            return {false, "statement " + std::to_string(i) + " ('" + st.first + " is " + st.second +
                               "') is neither stated nor a transitivity step"};
    }
    const auto& last = p.stmts.back();
    if (last.first != tree.query.individual)
        return {false, "final statement is not about the queried individual"};
    const bool expect_true = last.second == tree.query.attribute;
    const bool got_true = p.verdict == vocab.sp().vtrue;
    if (expect_true != got_true) return {false, "verdict does not match the final statement"};
    return {true, {}};
}

VerifyResult oracle_verify(const OntologyTree& tree, std::span<const int> cot, const Vocab& vocab) {
    ParsedCot p = parse_cot(cot, vocab);
    if (!p.error.empty()) return {false, p.error};
    if (p.stmts.empty()) return {false, "empty chain of thought"};

    // forward-chaining closure of the stated facts
    std::set<std::pair<std::string, std::string>> closure;
    for (const auto& s : tree.statements)
        if (!s.negated) closure.insert({s.subject, s.object});
    bool grew = true;
    while (grew) {
        grew = false;
        std::vector<std::pair<std::string, std::string>> add;
        for (const auto& [x, y] : closure)
            for (const auto& [y2, z] : closure)
                if (y == y2 && !closure.count({x, z})) add.push_back({x, z});
        for (auto& e : add) grew |= closure.insert(std::move(e)).second;
    }

    for (std::size_t i = 0; i < p.stmts.size(); ++i)
        if (!closure.count(p.stmts[i]))
            return {false, "statement " + std::to_string(i) + " not entailed by the stated facts"};
    if (p.stmts.back().first != tree.query.individual)
        return {false, "final statement is not about the queried individual"};
    const bool derivable = closure.count({tree.query.individual, tree.query.attribute}) != 0;
    const bool got_true = p.verdict == vocab.sp().vtrue;
    if (derivable != got_true) return {false, "verdict does not match the entailed facts"};
    return {true, {}};
}

// ------------------------------------------------------------ probe pairs

std::vector<PairSample> extract_pairs(const ReasoningExample& ex, Rng& rng, int zero_pairs) {
    std::vector<PairSample> out;
    std::vector<int> chain_occ, distractor_occ;
    for (const auto& sp : ex.statement_positions) {
        if (sp.distractor) {
            distractor_occ.push_back(sp.subject_pos);
            distractor_occ.push_back(sp.object_pos);
        } else {
            out.push_back({sp.subject_pos, sp.object_pos, sp.negated ? -1 : +1});
            chain_occ.push_back(sp.subject_pos);
            chain_occ.push_back(sp.object_pos);
        }
    }
    if (zero_pairs > 0 && !chain_occ.empty() && !distractor_occ.empty()) {
        std::set<std::pair<int, int>> seen;
        int attempts = 0;
        while (static_cast<int>(seen.size()) < zero_pairs && attempts < zero_pairs * 20) {
            ++attempts;
            const int a = chain_occ[rng.below(chain_occ.size())];
            const int b = distractor_occ[rng.below(distractor_occ.size())];
            if (seen.insert({a, b}).second) out.push_back({a, b, 0});
        }
    }
    return out;
}

// ------------------------------------------------------------ persistence

namespace {

json statement_to_json(const Statement& s) {
    return json{{"s", s.subject}, {"o", s.object}, {"neg", s.negated},
                {"dis", s.distractor}, {"sub_from", s.substituted_from}};
}

Statement statement_from_json(const json& j) {
    return {j.at("s").get<std::string>(), j.at("o").get<std::string>(), j.at("neg").get<bool>(),
            j.at("dis").get<bool>(), j.at("sub_from").get<std::string>()};
}

} // namespace

void save_corpus(const std::filesystem::path& path, std::span<const ReasoningExample> corpus,
                 const Vocab& vocab) {
    std::string body;
    for (const auto& ex : corpus) {
        json j;
        j["id"] = ex.id;
        j["label"] = ex.label;
        j["tokens"] = ex.tokens;
        j["gold_cot"] = ex.gold_cot;
        j["segments"] = {
            {"fewshot", {ex.segments.fewshot_begin, ex.segments.fewshot_end}},
            {"question", {ex.segments.question_begin, ex.segments.question_end}},
            {"generated", {ex.segments.generated_begin, ex.segments.generated_end}},
        };
        std::vector<std::array<int, 2>> ranges;
        int start = -1;
        for (std::size_t i = 0; i <= ex.loss_mask.size(); ++i) {
            const bool on = i < ex.loss_mask.size() && ex.loss_mask[i];
            if (on && start < 0) start = static_cast<int>(i);
            if (!on && start >= 0) { ranges.push_back({start, static_cast<int>(i)}); start = -1; }
        }
        j["loss_ranges"] = ranges;
        json tree;
        tree["chain"] = ex.tree.chain;
        tree["individual"] = ex.tree.individual;
        tree["attribute"] = ex.tree.attribute;
        tree["neg_style"] = to_string(ex.tree.neg_style);
        tree["real_words"] = ex.tree.real_words;
        tree["statements"] = json::array();
        for (const auto& s : ex.tree.statements) tree["statements"].push_back(statement_to_json(s));
        tree["query"] = {{"individual", ex.tree.query.individual},
                         {"attribute", ex.tree.query.attribute},
                         {"label", ex.tree.query.label}};
        j["tree"] = std::move(tree);
        j["question_statements"] = json::array();
        for (const auto& s : ex.question_statements)
            j["question_statements"].push_back(statement_to_json(s));
        j["statement_positions"] = json::array();
        for (const auto& sp : ex.statement_positions)
            j["statement_positions"].push_back(json{{"sp", sp.subject_pos}, {"op", sp.object_pos},
                                                    {"neg", sp.negated}, {"dis", sp.distractor}});
        j["subtasks"] = json::array();
        for (const auto& s : ex.subtasks)
            j["subtasks"].push_back(json{{"i", s.index}, {"kind", to_string(s.kind)},
                                         {"ans_pos", s.answer_pos}, {"span", {s.span_begin, s.span_end}},
                                         {"tok", s.answer_token}});
        // readable text views
        std::span<const int> t(ex.tokens);
        j["few_shot"] = vocab.detokenize(t.subspan(0, static_cast<std::size_t>(ex.segments.fewshot_end)));
        j["question"] = vocab.detokenize(
            t.subspan(static_cast<std::size_t>(ex.segments.question_begin),
                      static_cast<std::size_t>(ex.segments.question_end - ex.segments.question_begin)));
        j["gold_cot_text"] = vocab.detokenize(
            t.subspan(static_cast<std::size_t>(ex.segments.generated_begin),
                      static_cast<std::size_t>(ex.segments.generated_end - ex.segments.generated_begin)));
        j["query"] = {{"individual", ex.tree.query.individual},
                      {"attribute", ex.tree.query.attribute},
                      {"label", ex.tree.query.label}};
        body += j.dump();
        body += '\n';
    }
    write_file_atomic(path, body);
}

std::vector<ReasoningExample> load_corpus(const std::filesystem::path& path, const Vocab& vocab) {
    (void)vocab;
    std::istringstream ss(read_file(path));
    std::vector<ReasoningExample> out;
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        ReasoningExample ex;
        ex.id = j.at("id").get<std::string>();
        ex.label = j.at("label").get<bool>();
        ex.tokens = j.at("tokens").get<std::vector<int>>();
        ex.gold_cot = j.at("gold_cot").get<std::vector<int>>();
        const auto& seg = j.at("segments");
        ex.segments.fewshot_begin = seg.at("fewshot")[0].get<int>();
        ex.segments.fewshot_end = seg.at("fewshot")[1].get<int>();
        ex.segments.question_begin = seg.at("question")[0].get<int>();
        ex.segments.question_end = seg.at("question")[1].get<int>();
        ex.segments.generated_begin = seg.at("generated")[0].get<int>();
        ex.segments.generated_end = seg.at("generated")[1].get<int>();
        ex.loss_mask.assign(ex.tokens.size(), 0);
        for (const auto& r : j.at("loss_ranges"))
            for (int i = r[0].get<int>(); i < r[1].get<int>(); ++i)
                ex.loss_mask[static_cast<std::size_t>(i)] = 1;
        const auto& tr = j.at("tree");
        ex.tree.chain = tr.at("chain").get<std::vector<std::string>>();
        ex.tree.individual = tr.at("individual").get<std::string>();
        ex.tree.attribute = tr.at("attribute").get<std::string>();
        ex.tree.neg_style = tr.at("neg_style").get<std::string>() == "substitution"
                                ? NegativeStyle::substitution
                                : NegativeStyle::explicit_not;
        ex.tree.real_words = tr.at("real_words").get<bool>();
        for (const auto& s : tr.at("statements")) ex.tree.statements.push_back(statement_from_json(s));
        ex.tree.query.individual = tr.at("query").at("individual").get<std::string>();
        ex.tree.query.attribute = tr.at("query").at("attribute").get<std::string>();
        ex.tree.query.label = tr.at("query").at("label").get<bool>();
        for (const auto& s : j.at("question_statements"))
            ex.question_statements.push_back(statement_from_json(s));
        for (const auto& sp : j.at("statement_positions"))
            ex.statement_positions.push_back({sp.at("sp").get<int>(), sp.at("op").get<int>(),
                                              sp.at("neg").get<bool>(), sp.at("dis").get<bool>()});
        for (const auto& s : j.at("subtasks")) {
            SubtaskSpan span;
            span.index = s.at("i").get<int>();
            span.kind = subtask_kind_of(span.index);
            span.answer_pos = s.at("ans_pos").get<int>();
            span.span_begin = s.at("span")[0].get<int>();
            span.span_end = s.at("span")[1].get<int>();
            span.answer_token = s.at("tok").get<int>();
            ex.subtasks.push_back(span);
        }
        out.push_back(std::move(ex));
    }
    return out;
}

InductionProbe make_induction_probe(const std::string& a, const std::string& b,
                                    const std::string& c, const Vocab& vocab) {
    InductionProbe p;
    const auto& sp = vocab.sp();
    const int ia = vocab.id(a), ib = vocab.id(b), ic = vocab.id(c);
    p.tokens = {ia, sp.is, ib, sp.dot, ib, sp.is, ic, sp.dot, ia, sp.is};
    p.answer = ic;
    return p;
}

std::vector<InductionProbe> generate_induction_probes(std::uint64_t seed, int count,
                                                      const EntityPools& pools, const Vocab& vocab) {
    std::vector<InductionProbe> out;
    Rng root(seed);
    for (int i = 0; i < count; ++i) {
        Rng rng = root.fork(static_cast<std::uint64_t>(i));
        EntityCursor cur(rng, pools);
        const std::string a = cur.next_ind();
        const std::string b = cur.next_cat();
        const std::string c = cur.next_attr();
        out.push_back(make_induction_probe(a, b, c, vocab));
    }
    return out;
}

} // namespace cotlab::ontogen
