#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include "cotlab/ioutil.hpp"
#include "cotlab/ontogen.hpp"
#include "cotlab/rng.hpp"
#include "cotlab/vocab.hpp"

using namespace cotlab;
using namespace cotlab::ontogen;

namespace {

const Vocab& vocab() {
    static const Vocab v = Vocab::build(WordLists::builtin());
    return v;
}

// straight-line canonical tree used by the fixed-string checks
OntologyTree simple_tree(std::vector<std::string> chain, std::string individual,
                         std::string attribute, bool label) {
    OntologyTree t;
    t.chain = std::move(chain);
    t.individual = std::move(individual);
    t.attribute = std::move(attribute);
    t.statements.push_back({t.individual, t.chain.front(), false, false, {}});
    for (std::size_t i = 0; i + 1 < t.chain.size(); ++i)
        t.statements.push_back({t.chain[i], t.chain[i + 1], false, false, {}});
    t.statements.push_back({t.chain.back(), t.attribute, false, false, {}});
    t.query = {t.individual, t.attribute, label};
    return t;
}

} // namespace

TEST_CASE("tokenizer round-trips and counts one token per word") {
    const std::string text = "max is lempus . true or false : max is bright .";
    auto ids = vocab().tokenize(text);
    CHECK(ids.size() == 12);
    CHECK(vocab().detokenize(ids) == text);
    CHECK(vocab().tokenize("").empty());
    CHECK_THROWS_WITH_AS((void)vocab().tokenize("max is qwertyplox"),
                         "unknown word: 'qwertyplox'", std::invalid_argument);
}

TEST_CASE("vocabulary save/load round-trip preserves ids") {
    const auto path = std::filesystem::temp_directory_path() / "cotlab_vocab_test.txt";
    vocab().save(path);
    const Vocab v2 = Vocab::load(path);
    CHECK(v2.size() == vocab().size());
    for (int i = 0; i < v2.size(); ++i) CHECK(v2.word(i) == vocab().word(i));
    std::filesystem::remove(path);
}

TEST_CASE("canonical two-category gold chain of thought") {
    // lempus -> tumpus chain, attribute bright, individual max
    OntologyTree t = simple_tree({"lempus", "tumpus"}, "max", "bright", true);
    Rng rng(1);
    ReasoningExample ex = make_example(t, {}, rng, vocab());
    CHECK(vocab().detokenize(ex.gold_cot) ==
          "max is lempus . lempus is tumpus . max is tumpus . tumpus is bright . "
          "max is bright . true");
    CHECK(ex.segments.fewshot_begin == ex.segments.fewshot_end);
    CHECK(ex.segments.generated_end == static_cast<int>(ex.tokens.size()));
}

TEST_CASE("one-hop degenerate tree renders a three-statement chain") {
    OntologyTree t = simple_tree({"wumpus"}, "alex", "happy", true);
    Rng rng(1);
    ReasoningExample ex = make_example(t, {}, rng, vocab());
    CHECK(vocab().detokenize(ex.gold_cot) ==
          "alex is wumpus . wumpus is happy . alex is happy . true");
    CHECK(ex.subtasks.empty());  // ten-subtask form requires two categories
}

TEST_CASE("false-ontology chain decomposes into the published prompt chain") {
    // vertebrate -> carnivore, attribute spicy, individual rex
    OntologyTree t = simple_tree({"vertebrate", "carnivore"}, "rex", "spicy", true);
    Rng rng(3);
    ReasoningExample ex = make_example(t, {}, rng, vocab());
    auto insts = decompose_subtasks(ex);
    REQUIRE(insts.size() == 10);

    const std::vector<std::string> answers = {"rex", "vertebrate", "vertebrate", "carnivore",
                                              "rex", "carnivore", "carnivore", "spicy",
                                              "rex", "spicy"};
    const std::vector<SubtaskKind> kinds = {
        SubtaskKind::decision, SubtaskKind::copy, SubtaskKind::decision, SubtaskKind::copy,
        SubtaskKind::decision, SubtaskKind::induction, SubtaskKind::decision, SubtaskKind::copy,
        SubtaskKind::decision, SubtaskKind::induction};
    for (int i = 0; i < 10; ++i) {
        CHECK(vocab().word(insts[i].answer) == answers[i]);
        CHECK(insts[i].kind == kinds[i]);
    }
    // prompt 1 ends "... rex is" and its answer is the stated category
    const auto& p1 = insts[1].prompt;
    REQUIRE(p1.size() >= 2);
    CHECK(vocab().word(p1[p1.size() - 2]) == "rex");
    CHECK(vocab().word(p1.back()) == "is");
    CHECK(vocab().word(insts[1].answer) == "vertebrate");
    // prompt 0 ends at the response marker
    CHECK(vocab().word(insts[0].prompt.back()) == ":");
}

TEST_CASE("prefix-chain property: each prompt extends the previous by answer plus separators") {
    Rng rng(44);
    auto pools = EntityPools::fictional(WordLists::builtin());
    CorpusParams cp;
    cp.count = 8;
    cp.n_shots = 2;
    auto corpus = generate_corpus(99, cp, pools, vocab(), "chain");
    for (const auto& ex : corpus) {
        auto insts = decompose_subtasks(ex);
        for (std::size_t i = 0; i + 1 < insts.size(); ++i) {
            const auto& cur = insts[i].prompt;
            const auto& nxt = insts[i + 1].prompt;
            REQUIRE(nxt.size() > cur.size());
            CHECK(std::equal(cur.begin(), cur.end(), nxt.begin()));
            CHECK(nxt[cur.size()] == insts[i].answer);
        }
        // subtask spans tile the generated segment exactly
        int cursor = ex.segments.generated_begin;
        for (const auto& s : ex.subtasks) {
            CHECK(s.span_begin == cursor);
            CHECK(s.answer_pos == s.span_begin);
            cursor = s.span_end;
        }
        CHECK(cursor == ex.segments.generated_end);
        // concatenating the spans reconstructs the gold chain of thought
        std::vector<int> respliced;
        for (const auto& s : ex.subtasks)
            for (int p = s.span_begin; p < s.span_end; ++p)
                respliced.push_back(ex.tokens[static_cast<std::size_t>(p)]);
        CHECK(respliced == ex.gold_cot);
    }
}

TEST_CASE("generation is deterministic for a fixed seed") {
    auto pools = EntityPools::fictional(WordLists::builtin());
    CorpusParams cp;
    cp.count = 16;
    cp.n_shots = 2;
    auto a = generate_corpus(7, cp, pools, vocab(), "det");
    auto b = generate_corpus(7, cp, pools, vocab(), "det");
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].tokens == b[i].tokens);
        CHECK(a[i].label == b[i].label);
    }
    auto c = generate_corpus(8, cp, pools, vocab(), "det");
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) any_diff |= a[i].tokens != c[i].tokens;
    CHECK(any_diff);
}

TEST_CASE("linearize shuffles a statement multiset identical to the tree's") {
    Rng rng(5);
    auto pools = EntityPools::fictional(WordLists::builtin());
    GenParams gp;
    auto tree = gen_ontology(rng, pools, gp);
    auto lin = linearize(tree, rng);
    auto key = [](const Statement& s) { return s.subject + "|" + s.object + "|" + (s.negated ? "n" : "p"); };
    std::multiset<std::string> a, b;
    for (const auto& s : tree.statements) a.insert(key(s));
    for (const auto& s : lin) b.insert(key(s));
    CHECK(a == b);
}

TEST_CASE("dual oracles accept every generated example and agree") {
    auto pools = EntityPools::fictional(WordLists::builtin());
    CorpusParams cp;
    cp.count = 1000;
    cp.n_shots = 1;
    auto corpus = generate_corpus(123, cp, pools, vocab(), "oracle");
    int true_count = 0;
    for (const auto& ex : corpus) {
        const auto v1 = verify_cot(ex.tree, ex.gold_cot, vocab());
        const auto v2 = oracle_verify(ex.tree, ex.gold_cot, vocab());
        CHECK_MESSAGE(v1.ok, v1.reason);
        CHECK_MESSAGE(v2.ok, v2.reason);
        true_count += ex.label ? 1 : 0;
    }
    // forced alternation keeps the label split exact
    CHECK(true_count == 500);
}

TEST_CASE("broken chains of thought are rejected by both checkers") {
    OntologyTree t = simple_tree({"lempus", "tumpus"}, "max", "bright", true);
    Rng rng(1);
    ReasoningExample ex = make_example(t, {}, rng, vocab());

    // swap one answer token for an unrelated entity
    auto bad = ex.gold_cot;
    bad[2] = vocab().id("gorpus");
    CHECK_FALSE(verify_cot(t, bad, vocab()).ok);
    CHECK_FALSE(oracle_verify(t, bad, vocab()).ok);

    // flip the verdict
    auto flipped = ex.gold_cot;
    flipped.back() = vocab().id("false");
    CHECK_FALSE(verify_cot(t, flipped, vocab()).ok);
    CHECK_FALSE(oracle_verify(t, flipped, vocab()).ok);

    // drop the verdict entirely
    auto truncated = ex.gold_cot;
    truncated.pop_back();
    CHECK_FALSE(verify_cot(t, truncated, vocab()).ok);
    CHECK_FALSE(oracle_verify(t, truncated, vocab()).ok);
}

TEST_CASE("distractors stay disjoint from the query chain") {
    auto pools = EntityPools::fictional(WordLists::builtin());
    CorpusParams cp;
    cp.count = 200;
    cp.n_shots = 0;
    auto corpus = generate_corpus(55, cp, pools, vocab(), "dis");
    for (const auto& ex : corpus) {
        std::set<std::string> chain(ex.tree.chain.begin(), ex.tree.chain.end());
        chain.insert(ex.tree.individual);
        chain.insert(ex.tree.attribute);
        for (const auto& s : ex.tree.statements)
            if (s.distractor) {
                CHECK(chain.count(s.subject) == 0);
                CHECK(chain.count(s.object) == 0);
            }
    }
}

TEST_CASE("false labels query a non-derivable attribute") {
    auto pools = EntityPools::fictional(WordLists::builtin());
    CorpusParams cp;
    cp.count = 300;
    cp.n_shots = 0;
    auto corpus = generate_corpus(77, cp, pools, vocab(), "neg");
    for (const auto& ex : corpus) {
        if (ex.label) {
            CHECK(ex.tree.query.attribute == ex.tree.attribute);
            continue;
        }
        // closure of the stated facts must not reach the queried attribute
        std::set<std::pair<std::string, std::string>> rel;
        for (const auto& s : ex.tree.statements)
            if (!s.negated) rel.insert({s.subject, s.object});
        bool grew = true;
        while (grew) {
            grew = false;
            std::vector<std::pair<std::string, std::string>> add;
            for (const auto& [x, y] : rel)
                for (const auto& [y2, z] : rel)
                    if (y == y2 && !rel.count({x, z})) add.push_back({x, z});
            for (auto& e : add) grew |= rel.insert(std::move(e)).second;
        }
        CHECK(rel.count({ex.tree.query.individual, ex.tree.query.attribute}) == 0);
    }
}

TEST_CASE("pair extraction follows immediate-occurrence rules") {
    // handmade tree: one positive chain edge, one explicit negative, one distractor
    OntologyTree t = simple_tree({"lempus", "tumpus"}, "max", "bright", true);
    t.neg_style = NegativeStyle::explicit_not;
    t.statements.push_back({"lempus", "red", true, false, {}});     // lempus is not red
    t.statements.push_back({"jompus", "lorpus", false, true, {}});  // distractor
    Rng rng(9);
    ReasoningExample ex = make_example(t, {}, rng, vocab());

    Rng prng(10);
    auto pairs = extract_pairs(ex, prng, 2);
    std::map<int, int> by_label;
    for (const auto& p : pairs) by_label[p.label]++;
    CHECK(by_label[+1] == 3);  // max-lempus, lempus-tumpus, tumpus-bright
    CHECK(by_label[-1] == 1);  // lempus-red under "is not"
    CHECK(by_label[0] == 2);

    const auto tok = [&](int pos) { return vocab().word(ex.tokens[static_cast<std::size_t>(pos)]); };
    for (const auto& p : pairs) {
        if (p.label == -1) {
            CHECK(tok(p.pos_a) == "lempus");
            CHECK(tok(p.pos_b) == "red");
            // the negated object is preceded by "not"
            CHECK(vocab().word(ex.tokens[static_cast<std::size_t>(p.pos_b) - 1]) == "not");
        }
        if (p.label == 0) {
            const std::string b = tok(p.pos_b);
            CHECK((b == "jompus" || b == "lorpus"));
        }
    }

    // brute-force recount of +1/-1 pairs from the rendered statements
    int pos_count = 0, neg_count = 0;
    for (const auto& sp : ex.statement_positions)
        if (!sp.distractor) (sp.negated ? neg_count : pos_count)++;
    CHECK(by_label[+1] == pos_count);
    CHECK(by_label[-1] == neg_count);
}

TEST_CASE("substitution rendering removes negation markers") {
    auto pools = EntityPools::fictional(WordLists::builtin());
    GenParams gp;
    gp.polarity_mix = 1.0;  // every auxiliary statement negative
    gp.force_negative_extra = true;
    Rng rng(21);
    auto tree = gen_ontology(rng, pools, gp);
    int substituted = 0;
    for (const auto& s : tree.statements) {
        CHECK_FALSE(s.negated);
        substituted += s.substituted_from.empty() ? 0 : 1;
    }
    CHECK(substituted >= 1);
    Rng rng2(22);
    ReasoningExample ex = make_example(tree, {}, rng2, vocab());
    for (int id : ex.tokens) CHECK(id != vocab().sp().nott);
}

TEST_CASE("explicit negatives render with is-not") {
    auto pools = EntityPools::fictional(WordLists::builtin());
    GenParams gp;
    gp.neg_style = NegativeStyle::explicit_not;
    gp.force_negative_extra = true;
    Rng rng(31);
    auto tree = gen_ontology(rng, pools, gp);
    Rng rng2(32);
    ReasoningExample ex = make_example(tree, {}, rng2, vocab());
    int nots = 0;
    for (int id : ex.tokens) nots += id == vocab().sp().nott ? 1 : 0;
    CHECK(nots >= 1);
    CHECK(verify_cot(tree, ex.gold_cot, vocab()).ok);
    CHECK(oracle_verify(tree, ex.gold_cot, vocab()).ok);
}

TEST_CASE("segments partition the stream and responses carry the loss mask") {
    auto pools = EntityPools::fictional(WordLists::builtin());
    CorpusParams cp;
    cp.count = 6;
    cp.n_shots = 2;
    auto corpus = generate_corpus(13, cp, pools, vocab(), "seg");
    for (const auto& ex : corpus) {
        CHECK(ex.segments.fewshot_begin == 0);
        CHECK(ex.segments.fewshot_end == ex.segments.question_begin);
        CHECK(ex.segments.question_end == ex.segments.generated_begin);
        CHECK(ex.segments.generated_end == static_cast<int>(ex.tokens.size()));
        // the generated segment is fully masked-in; the question block fully masked-out
        for (int p = ex.segments.question_begin; p < ex.segments.question_end; ++p)
            CHECK(ex.loss_mask[static_cast<std::size_t>(p)] == 0);
        for (int p = ex.segments.generated_begin; p < ex.segments.generated_end; ++p)
            CHECK(ex.loss_mask[static_cast<std::size_t>(p)] == 1);
        // few-shot blocks contain some response tokens
        int fs_mask = 0;
        for (int p = ex.segments.fewshot_begin; p < ex.segments.fewshot_end; ++p)
            fs_mask += ex.loss_mask[static_cast<std::size_t>(p)];
        CHECK(fs_mask > 0);
    }
}

TEST_CASE("corpus save/load round-trip") {
    auto pools = EntityPools::fictional(WordLists::builtin());
    CorpusParams cp;
    cp.count = 5;
    cp.n_shots = 1;
    auto corpus = generate_corpus(42, cp, pools, vocab(), "rt");
    const auto path = std::filesystem::temp_directory_path() / "cotlab_corpus_test.jsonl";
    save_corpus(path, corpus, vocab());
    auto loaded = load_corpus(path, vocab());
    REQUIRE(loaded.size() == corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        CHECK(loaded[i].tokens == corpus[i].tokens);
        CHECK(loaded[i].loss_mask == corpus[i].loss_mask);
        CHECK(loaded[i].gold_cot == corpus[i].gold_cot);
        CHECK(loaded[i].tree.chain == corpus[i].tree.chain);
        CHECK(loaded[i].subtasks.size() == corpus[i].subtasks.size());
        CHECK(loaded[i].statement_positions.size() == corpus[i].statement_positions.size());
    }
    // byte-identical re-serialization
    const std::string once = read_file(path);
    save_corpus(path, loaded, vocab());
    CHECK(read_file(path) == once);
    std::filesystem::remove(path);
}

TEST_CASE("train and eval category pools are disjoint") {
    auto [train, eval] = EntityPools::fictional_split(WordLists::builtin(), 30);
    std::set<std::string> t(train.categories.begin(), train.categories.end());
    for (const auto& c : eval.categories) CHECK(t.count(c) == 0);
    CHECK(train.categories.size() + eval.categories.size() ==
          WordLists::builtin().fictional_categories.size());
}

TEST_CASE("entity pool exhaustion raises an explicit error") {
    EntityPools tiny;
    tiny.categories = {"wumpus", "zumpus"};
    tiny.attributes = {"bright"};
    tiny.individuals = {"max"};
    Rng rng(3);
    GenParams gp;
    gp.n_distractors = 4;
    CHECK_THROWS_AS((void)gen_ontology(rng, tiny, gp), std::runtime_error);
}

TEST_CASE("induction probes have the fixed site layout") {
    auto p = make_induction_probe("alex", "sterpus", "bitter", vocab());
    CHECK(vocab().detokenize(p.tokens) == "alex is sterpus . sterpus is bitter . alex is");
    CHECK(p.tokens.size() == 10);
    CHECK(vocab().word(p.tokens[static_cast<std::size_t>(p.b1_pos)]) == "sterpus");
    CHECK(vocab().word(p.tokens[static_cast<std::size_t>(p.b2_pos)]) == "sterpus");
    CHECK(vocab().word(p.tokens[static_cast<std::size_t>(p.c_pos)]) == "bitter");
    CHECK(vocab().word(p.answer) == "bitter");

    auto pools = EntityPools::fictional(WordLists::builtin());
    auto probes = generate_induction_probes(5, 12, pools, vocab());
    CHECK(probes.size() == 12);
    for (const auto& q : probes) CHECK(q.tokens.size() == 10);
}
