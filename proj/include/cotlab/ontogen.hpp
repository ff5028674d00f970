#pragma once

// Synthetic ontology task generation.
//
// An example is built from a small ontology: an individual, a chain of
// categories (sub -> super), one canonical attribute on the last chain
// category, optional extra attribute edges, and distractor statements over
// entities disjoint from the chain. The question block lists the statements
// in jumbled order, asks "true or false : <individual> is <attr>", and the
// gold chain-of-thought re-derives the path one statement at a time before
// emitting the verdict token.
//
// With chain length 2 the chain of thought has five statements and ten
// single-token answers (one per entity slot); these are the ten subtasks:
// indices {0,2,4,6,8} pick the next statement's subject (decision), {1,3,7}
// copy a stated object (copy), {5,9} produce a derived object (induction).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cotlab/rng.hpp"
#include "cotlab/vocab.hpp"

namespace cotlab::ontogen {

enum class EntityKind { fictional_category, real_category, attribute, individual };

enum class NegativeStyle {
    substitution,  // "x is not b" rendered as "x is w" with an incorrect entity w
    explicit_not,  // rendered literally as "x is not b" (probing corpora)
};

enum class SubtaskKind { decision, copy, induction };

const char* to_string(SubtaskKind k);
const char* to_string(NegativeStyle s);

struct Statement {
    std::string subject;
    std::string object;
    bool negated = false;            // explicit_not style only; substitution clears it
    bool distractor = false;
    std::string substituted_from;    // original object when substitution was applied
};

struct Query {
    std::string individual;
    std::string attribute;
    bool label = true;               // true iff the queried attribute is derivable
};

struct OntologyTree {
    std::vector<std::string> chain;        // category names, sub -> super
    std::string individual;
    std::string attribute;                 // canonical attribute on chain.back()
    std::vector<Statement> statements;     // all question statements, canonical order
    Query query;
    NegativeStyle neg_style = NegativeStyle::substitution;
    bool real_words = false;

    std::vector<std::string> chain_entities() const;  // individual + chain + derivable objects
};

struct GenParams {
    int chain_len = 2;               // number of categories in the chain
    int n_distractors = 2;
    double polarity_mix = 0.25;      // fraction of auxiliary statements that are negative
    double extra_attr_prob = 0.35;   // extra attribute edge on a non-final chain category
    bool force_negative_extra = false;  // probing corpora: guarantee a negated chain edge
    NegativeStyle neg_style = NegativeStyle::substitution;
    bool real_words = false;
};

struct EntityPools {
    std::vector<std::string> categories;
    std::vector<std::string> attributes;
    std::vector<std::string> individuals;

    static EntityPools fictional(const WordLists& lists);
    static EntityPools real(const WordLists& lists);
    // split fictional categories into disjoint train/eval pools
    static std::pair<EntityPools, EntityPools> fictional_split(const WordLists& lists,
                                                               int eval_categories);
};

OntologyTree gen_ontology(Rng& rng, const EntityPools& pools, const GenParams& params,
                          std::optional<bool> forced_label = std::nullopt);

// shuffled copy of tree.statements
std::vector<Statement> linearize(const OntologyTree& tree, Rng& rng);

// ------------------------------------------------------------ rendered form

struct StatementPos {                 // token positions within the full stream
    int subject_pos = -1;
    int object_pos = -1;
    bool negated = false;
    bool distractor = false;
};

struct SubtaskSpan {
    int index = 0;
    SubtaskKind kind = SubtaskKind::decision;
    int answer_pos = 0;               // absolute token position of the answer
    int span_begin = 0, span_end = 0; // answer plus trailing separators
    int answer_token = 0;
};

struct Segments {
    int fewshot_begin = 0, fewshot_end = 0;      // [begin, end)
    int question_begin = 0, question_end = 0;
    int generated_begin = 0, generated_end = 0;
};

struct ReasoningExample {
    std::string id;
    OntologyTree tree;
    std::vector<Statement> question_statements;   // jumbled rendering order
    std::vector<int> tokens;                      // full stream (shots + question + gold cot)
    std::vector<std::uint8_t> loss_mask;          // 1 on response tokens (all blocks)
    Segments segments;
    std::vector<int> gold_cot;                    // CoT + verdict tokens
    bool label = true;
    std::vector<SubtaskSpan> subtasks;            // 10 entries when chain_len == 2
    std::vector<StatementPos> statement_positions;  // question-block statements, jumbled order
};

// Renders a full example. Shot trees supply the few-shot blocks and must not
// share entities with `tree`.
ReasoningExample make_example(const OntologyTree& tree, std::span<const OntologyTree> shot_trees,
                              Rng& rng, const Vocab& vocab);

// real-word ontology with false relations (Appendix-style bank inputs)
ReasoningExample make_false_example(Rng& rng, const Vocab& vocab, const GenParams& params,
                                    int n_shots, std::optional<bool> forced_label = std::nullopt);

struct CorpusParams {
    GenParams gen;
    int n_shots = 2;
    int count = 0;
};

// deterministic corpus: labels alternate exactly; entities per example are
// sampled without replacement so shots and question never share entities
std::vector<ReasoningExample> generate_corpus(std::uint64_t seed, const CorpusParams& params,
                                              const EntityPools& pools, const Vocab& vocab,
                                              const std::string& id_prefix);

// -------------------------------------------------------------- subtasks

struct SubtaskInstance {
    int index = 0;
    SubtaskKind kind = SubtaskKind::decision;
    std::vector<int> prompt;
    int answer = 0;
};

// requires the canonical 10-subtask form (chain_len == 2)
std::vector<SubtaskInstance> decompose_subtasks(const ReasoningExample& ex);

// -------------------------------------------------------------- verification

struct VerifyResult {
    bool ok = false;
    std::string reason;
};

// step checker: each CoT statement must be a stated fact or follow by one
// transitivity step from the two preceding CoT statements; the verdict must
// match the query against the final derived statement
VerifyResult verify_cot(const OntologyTree& tree, std::span<const int> cot, const Vocab& vocab);

// independent oracle: forward-chaining closure of the stated facts
VerifyResult oracle_verify(const OntologyTree& tree, std::span<const int> cot, const Vocab& vocab);

// -------------------------------------------------------------- probe pairs

struct PairSample {
    int pos_a = 0;          // token positions in the full stream
    int pos_b = 0;
    int label = 0;          // +1 related, -1 negated, 0 unrelated
};

// immediate-occurrence pairing over the question block of `ex`; label 0 pairs
// chain-statement entities with distractor-statement entities
std::vector<PairSample> extract_pairs(const ReasoningExample& ex, Rng& rng, int zero_pairs);

// -------------------------------------------------------------- persistence

void save_corpus(const std::filesystem::path& path, std::span<const ReasoningExample> corpus,
                 const Vocab& vocab);
std::vector<ReasoningExample> load_corpus(const std::filesystem::path& path, const Vocab& vocab);

// induction probes: "[a] is [b] . [b] is [c] . [a] is"
struct InductionProbe {
    std::vector<int> tokens;
    int b1_pos = 2, b2_pos = 4, c_pos = 6;
    int answer = 0;          // token id of c
};
InductionProbe make_induction_probe(const std::string& a, const std::string& b,
                                    const std::string& c, const Vocab& vocab);
std::vector<InductionProbe> generate_induction_probes(std::uint64_t seed, int count,
                                                      const EntityPools& pools, const Vocab& vocab);

} // namespace cotlab::ontogen
