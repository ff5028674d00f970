#pragma once

// Per-head importance scores and head-pruning evaluation. Three scores are
// computed per attention head:
//
//   decision  — restoration ratio (P_org - P_corrupt) / (P_org - P_patched)
//               of the answer-token probability. The corrupt run mean-ablates
//               every head at the last prompt position; each patched run
//               additionally restores one head's clean write there. The ratio
//               is 1 when restoring the head does nothing and grows as the
//               head recovers more of the answer probability (the denominator
//               is floored at kDecisionDenomFloor; raw values are kept).
//   copy      — attention probability from the last prompt position to the
//               position the answer token is copied from.
//   induction — KL-restoration Mean_l (D_ref - D_patched) / D_ref over the
//               three corruption sites of an "[a] is [b] . [b] is [c] . [a]
//               is" probe. Each site replaces one token with a noise word;
//               D_ref is KL(P_org || P_corrupt) and D_patched the same with
//               one head's clean write restored at the corrupted position.
//               Sites whose reference divergence is zero are skipped.
//
// Score tables carry delta = (mu - mean mu)^2 so pruning sweeps can remove
// heads from the population center outward.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cotlab/intervene.hpp"
#include "cotlab/nanoformer.hpp"
#include "cotlab/ontogen.hpp"
#include "cotlab/vocab.hpp"

namespace cotlab::headscore {

using intervene::AblationBank;
using intervene::HeadRef;

// Floor applied to the decision-score denominator when a head's restoration
// recovers (nearly) the full answer probability.
inline constexpr double kDecisionDenomFloor = 1e-9;

// ------------------------------------------------------------ readout math

// All scorers read model outputs through these double-precision helpers.
double answer_probability(std::span<const float> logits, int token);
std::vector<double> log_softmax_row(std::span<const float> logits);
// KL(p || q) over two log-probability rows of equal length
double kl_divergence(std::span<const double> lp, std::span<const double> lq);

// ------------------------------------------------------------ score tables

// One score kind over every head of one model, averaged over an evaluation
// set. Heads are indexed layer-major: (layer, head) -> layer * n_heads + head.
struct ScoreTable {
    int n_layers = 0;
    int n_heads = 0;
    std::string kind;        // "decision" | "copy" | "induction"
    int subtask = -1;        // -1 when not tied to one slot (probe sets, merges)
    std::string dataset_id;
    int sample_count = 0;
    std::vector<double> mu;     // per head, mean over the evaluation set
    std::vector<double> delta;  // (mu - mean mu)^2, filled by delta_scores
    // decision only: mean raw numerator/denominator before the floor
    std::vector<double> raw_num, raw_den;

    static ScoreTable make(std::string kind, int n_layers, int n_heads);

    int head_count() const { return n_layers * n_heads; }
    std::size_t idx(int layer, int head) const {
        return static_cast<std::size_t>(layer) * n_heads + head;
    }
    double mu_at(int layer, int head) const { return mu[idx(layer, head)]; }
    double delta_at(int layer, int head) const { return delta[idx(layer, head)]; }

    // dimension/shape checks plus per-kind value ranges
    void validate() const;
};

// delta = (mu - mean)^2 against the mean over all heads of the table. The
// mean sums value-sorted entries so head order cannot perturb the rounding.
void delta_scores(ScoreTable& table);

// sample-count-weighted mean of tables of one kind (per-example mean overall)
ScoreTable merge_tables(std::span<const ScoreTable> tables);

// Tabular text, one row per head per table:
//   layer	head	kind	subtask	mu	delta
// with a "# table ..." metadata line opening each table's row group.
void save_tables(const std::filesystem::path& path, std::span<const ScoreTable> tables);
std::vector<ScoreTable> load_tables(const std::filesystem::path& path);

// ------------------------------------------------------ per-instance scores

struct DecisionScore {
    std::vector<double> mu;        // per head
    std::vector<double> num, den;  // raw numerator / denominator (no floor)
};

DecisionScore score_decision(const nanoformer::Params& p, std::span<const int> prompt,
                             int answer, const AblationBank& bank);

// mu per head = attention from the last prompt position to answer_pos
std::vector<double> score_copy(const nanoformer::Params& p, std::span<const int> prompt,
                               int answer_pos);

// Position the answer is copied from: the object token of the statement
// "<subject> is [not] <answer>" inside [begin, end). Throws when absent.
int find_answer_source(std::span<const int> tokens, int begin, int end, int subject,
                       int answer, int is_token, int not_token);

struct InductionSites {
    int b1 = 0;
    int b2 = 0;
    int c = 0;
};

struct InductionScore {
    std::vector<double> mu;          // per head, mean over scored sites
    int sites_scored = 0;            // out of 3
    std::vector<int> skipped_sites;  // positions whose reference KL was zero
};

// noise[i] replaces the token at sites {b1, b2, c}[i] in the corrupted runs
InductionScore score_induction(const nanoformer::Params& p, std::span<const int> probe,
                               const InductionSites& sites, const std::array<int, 3>& noise);

// -------------------------------------------------------- set aggregation

// Each wrapper scores one slot across a corpus (limit 0 = use everything)
// and returns the per-example arithmetic mean.
ScoreTable score_decision_set(const nanoformer::Params& p,
                              std::span<const ontogen::ReasoningExample> corpus, int subtask,
                              const AblationBank& bank, const std::string& dataset_id,
                              int limit = 0);
ScoreTable score_copy_set(const nanoformer::Params& p,
                          std::span<const ontogen::ReasoningExample> corpus, int subtask,
                          const Vocab& vocab, const std::string& dataset_id, int limit = 0);
// noise_pool supplies replacement token ids; the first three absent from each
// probe are used. Probes whose every site is skipped drop out of the mean.
ScoreTable score_induction_set(const nanoformer::Params& p,
                               std::span<const ontogen::InductionProbe> probes,
                               std::span<const int> noise_pool, const std::string& dataset_id,
                               int limit = 0, std::ostream* log = nullptr);

// ----------------------------------------------------------------- pruning

// Heads with mu inside [mu_min, mu_max] are kept; the rest are knocked out.
struct PruneRange {
    double mu_min = 0;
    double mu_max = 0;
};

struct EvalReport {
    int subtask = 0;
    int n_examples = 0;
    double accuracy = 0;           // exact answer-token match under ablation
    double relative_accuracy = 0;  // vs the unablated model on the same set
    int heads_removed = 0;
    double fraction_active = 1;
};

// single-line JSON record (the run reports are line-delimited)
std::string report_line(const EvalReport& r);
EvalReport parse_report_line(const std::string& line);

std::vector<HeadRef> heads_outside(const ScoreTable& table, const PruneRange& range);

// examples whose slot `subtask` the unablated model answers correctly
std::vector<ontogen::ReasoningExample> filter_full_correct(
    const nanoformer::Params& p, std::span<const ontogen::ReasoningExample> corpus, int subtask);

// Teacher-forced exact-match on one slot with `removed` mean-ablated at every
// position. The clean pass over the same set anchors relative accuracy.
EvalReport eval_with_removed(const nanoformer::Params& p, std::span<const HeadRef> removed,
                             std::span<const ontogen::ReasoningExample> dataset, int subtask,
                             const AblationBank& bank);

EvalReport prune_and_eval(const nanoformer::Params& p, const ScoreTable& table,
                          const PruneRange& range,
                          std::span<const ontogen::ReasoningExample> dataset, int subtask,
                          const AblationBank& bank);

// Equal-width histogram sweep: bin the mu values, then remove bins
// cumulatively ordered by |bin center - mean mu| and evaluate each step.
struct SweepStep {
    int bins_removed = 0;
    double mu_lo = 0, mu_hi = 0;  // extent of the removed mu values so far
    int heads_removed = 0;
    EvalReport report;
};

std::vector<SweepStep> sweep_center_out(const nanoformer::Params& p, const ScoreTable& table,
                                        std::span<const ontogen::ReasoningExample> dataset,
                                        int subtask, const AblationBank& bank, int n_bins = 64);

// --------------------------------------------------------------- task sets

// How a score table turns into a head set; the selection rule is a knob, so
// reports state the rule next to every fraction they quote.
struct ThresholdPolicy {
    enum class Kind { top_fraction, mu_range };
    Kind kind = Kind::top_fraction;
    double fraction = 0.25;  // top_fraction: share of heads kept, by mu
    PruneRange range{};      // mu_range: heads kept inside the range
    std::string describe() const;
};

std::vector<HeadRef> select_heads(const ScoreTable& table, const ThresholdPolicy& policy);

// Per-kind head sets with their pairwise intersections and the heads unique
// to each kind. All vectors are sorted (layer, head).
struct TaskSets {
    std::vector<HeadRef> decision, copy, induction;
    std::vector<HeadRef> decision_copy, decision_induction, copy_induction;
    std::vector<HeadRef> decision_only, copy_only, induction_only;
};

TaskSets task_head_sets(const ScoreTable& decision, const ScoreTable& copy,
                        const ScoreTable& induction, const ThresholdPolicy& policy);

// evaluate a kept-set directly: everything outside `kept` is knocked out
EvalReport eval_kept_heads(const nanoformer::Params& p, std::span<const HeadRef> kept,
                           std::span<const ontogen::ReasoningExample> dataset, int subtask,
                           const AblationBank& bank);

} // namespace cotlab::headscore
