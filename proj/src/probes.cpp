#include "cotlab/probes.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "cotlab/ioutil.hpp"
#include "cotlab/kernels.hpp"
#include "cotlab/tensorio.hpp"

namespace cotlab::probes {

using nanoformer::Cache;
using nanoformer::Params;
using nanoformer::RecordLevel;
using ontogen::ReasoningExample;

int label_to_class(int label) {
    switch (label) {
        case -1: return 0;
        case 0: return 1;
        case +1: return 2;
    }
    throw std::invalid_argument("probe label must be -1, 0 or +1");
}

int class_to_label(int cls) {
    if (cls < 0 || cls > 2) throw std::invalid_argument("probe class must be 0, 1 or 2");
    return cls - 1;
}

const char* to_string(ProbeArch a) { return a == ProbeArch::linear ? "linear" : "mlp"; }

ProbeArch parse_arch(const std::string& s) {
    if (s == "linear") return ProbeArch::linear;
    if (s == "mlp") return ProbeArch::mlp;
    throw std::invalid_argument("unknown probe architecture '" + s + "'");
}

// ---------------------------------------------------------------- datasets

std::span<const float> ProbeDataset::feature_row(int i) const {
    if (i < 0 || i >= n()) throw std::out_of_range("probe feature row out of range");
    const auto w = static_cast<std::size_t>(d_in());
    return {features.data() + static_cast<std::size_t>(i) * w, w};
}

std::array<int, 3> ProbeDataset::class_counts() const {
    std::array<int, 3> c{};
    for (int l : labels) ++c[static_cast<std::size_t>(label_to_class(l))];
    return c;
}

void ProbeDataset::validate(bool require_balanced) const {
    if (d_model <= 0) throw std::invalid_argument("probe dataset: d_model must be positive");
    if (layer < 0) throw std::invalid_argument("probe dataset: negative layer");
    const auto rows = labels.size();
    if (features.size() != rows * static_cast<std::size_t>(d_in()))
        throw std::invalid_argument("probe dataset: feature buffer does not match row count");
    if (pair_tokens.size() != rows)
        throw std::invalid_argument("probe dataset: pair tokens do not match row count");
    const auto c = class_counts();  // also checks the label alphabet
    if (require_balanced && (c[0] != c[1] || c[1] != c[2]))
        throw std::invalid_argument("probe dataset: classes are not balanced");
}

std::vector<int> entity_tokens(const ProbeDataset& ds) {
    std::vector<int> out;
    out.reserve(ds.pair_tokens.size() * 2);
    for (const auto& pt : ds.pair_tokens) {
        out.push_back(pt[0]);
        out.push_back(pt[1]);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

namespace {

struct PairSite {
    int example = 0;
    int pos_a = 0, pos_b = 0;
    int label = 0;
};

// All candidate pairs of one example: every stated relation contributes its
// subject/object positions, every (chain statement, distractor statement)
// pair contributes an unrelated row via the two subjects.
void harvest_pairs(const ReasoningExample& ex, int example_idx, std::vector<PairSite>& out) {
    std::vector<int> chain_subjects, distractor_subjects;
    for (const auto& sp : ex.statement_positions) {
        if (sp.subject_pos < 0 || sp.object_pos < 0)
            throw std::invalid_argument("example lacks statement positions");
        out.push_back({example_idx, sp.subject_pos, sp.object_pos, sp.negated ? -1 : +1});
        (sp.distractor ? distractor_subjects : chain_subjects).push_back(sp.subject_pos);
    }
    for (int a : chain_subjects)
        for (int b : distractor_subjects) out.push_back({example_idx, a, b, 0});
}

// residual read point: layer 0 = embeddings, layer j >= 1 = after block j
std::span<const float> stream_row(const Cache& c, int layer, int pos) {
    return layer == 0 ? c.x_pre_row(0, pos) : c.x_post_row(layer - 1, pos);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = seed ^ (a * 0x9e3779b97f4a7c15ull) ^ (b * 0xbf58476d1ce4e5b9ull);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

// One forward per example, features for every requested layer at once. The
// pair selection depends only on the corpus and seed, so every layer of one
// sweep sees the same rows.
std::vector<ProbeDataset> collect_layers(const Params& p,
                                         std::span<const ReasoningExample> corpus,
                                         std::span<const int> layers, int shot_count,
                                         const std::string& partition, std::uint64_t seed) {
    if (corpus.empty()) throw std::invalid_argument("probe corpus is empty");
    for (int layer : layers)
        if (layer < 0 || layer > p.cfg.n_layers)
            throw std::invalid_argument("probe layer out of range");
    if (shot_count < 0) throw std::invalid_argument("negative shot count");
    for (const auto& ex : corpus) {
        const bool has_shots = ex.segments.fewshot_end > ex.segments.fewshot_begin;
        if (has_shots != (shot_count > 0))
            throw std::invalid_argument("corpus does not match the stated shot count");
    }

    std::vector<PairSite> sites;
    for (std::size_t i = 0; i < corpus.size(); ++i)
        harvest_pairs(corpus[i], static_cast<int>(i), sites);

    std::array<std::vector<std::size_t>, 3> buckets;
    for (std::size_t i = 0; i < sites.size(); ++i)
        buckets[static_cast<std::size_t>(label_to_class(sites[i].label))].push_back(i);

    std::mt19937_64 rng(seed);
    for (auto& b : buckets) std::shuffle(b.begin(), b.end(), rng);
    const std::size_t m = std::min({buckets[0].size(), buckets[1].size(), buckets[2].size()});
    if (m == 0) {
        static const char* const names[3] = {"negated", "unrelated", "related"};
        for (std::size_t c = 0; c < 3; ++c)
            if (buckets[c].empty())
                throw std::invalid_argument(std::string("corpus yields no ") + names[c] +
                                            " pairs");
    }

    // rows ordered class-major: all -1 rows, then 0, then +1
    std::vector<std::size_t> selected;
    selected.reserve(3 * m);
    for (const auto& b : buckets) selected.insert(selected.end(), b.begin(), b.begin() + m);

    const int d = p.cfg.d_model;
    std::vector<ProbeDataset> out(layers.size());
    for (std::size_t li = 0; li < layers.size(); ++li) {
        auto& ds = out[li];
        ds.layer = layers[li];
        ds.shot_count = shot_count;
        ds.d_model = d;
        ds.partition = partition;
        ds.features.resize(selected.size() * static_cast<std::size_t>(2 * d));
        ds.labels.reserve(selected.size());
        ds.pair_tokens.reserve(selected.size());
        for (std::size_t r = 0; r < selected.size(); ++r) {
            const auto& s = sites[selected[r]];
            ds.labels.push_back(s.label);
            ds.pair_tokens.push_back({corpus[static_cast<std::size_t>(s.example)].tokens
                                          [static_cast<std::size_t>(s.pos_a)],
                                      corpus[static_cast<std::size_t>(s.example)].tokens
                                          [static_cast<std::size_t>(s.pos_b)]});
        }
    }

    // group rows by example so each example is forwarded exactly once
    std::vector<std::vector<std::size_t>> rows_of(corpus.size());
    for (std::size_t r = 0; r < selected.size(); ++r)
        rows_of[static_cast<std::size_t>(sites[selected[r]].example)].push_back(r);

    Cache cache;
    for (std::size_t e = 0; e < corpus.size(); ++e) {
        if (rows_of[e].empty()) continue;
        const auto& ex = corpus[e];
        const std::span<const int> prefix(ex.tokens.data(),
                                          static_cast<std::size_t>(ex.segments.question_end));
        forward(p, prefix, cache, RecordLevel::logits_only);
        for (std::size_t r : rows_of[e]) {
            const auto& s = sites[selected[r]];
            for (std::size_t li = 0; li < layers.size(); ++li) {
                auto& ds = out[li];
                float* row = ds.features.data() + r * static_cast<std::size_t>(2 * d);
                const auto xa = stream_row(cache, layers[li], s.pos_a);
                const auto xb = stream_row(cache, layers[li], s.pos_b);
                std::copy(xa.begin(), xa.end(), row);
                std::copy(xb.begin(), xb.end(), row + d);
            }
        }
    }
    for (auto& ds : out) ds.validate(true);
    return out;
}

} // namespace

ProbeDataset collect_pair_features(const Params& p, std::span<const ReasoningExample> corpus,
                                   int layer, int shot_count, const std::string& partition,
                                   std::uint64_t seed) {
    const int layers[1] = {layer};
    return std::move(collect_layers(p, corpus, layers, shot_count, partition, seed)[0]);
}

ProbeDataset shuffle_labels(const ProbeDataset& ds, std::uint64_t seed) {
    ProbeDataset out = ds;
    std::mt19937_64 rng(seed);
    std::shuffle(out.labels.begin(), out.labels.end(), rng);
    return out;
}

void save_dataset(const std::filesystem::path& path, const ProbeDataset& ds) {
    ds.validate(false);
    TensorFile tf;
    const std::int32_t meta[3] = {ds.layer, ds.shot_count, ds.d_model};
    tf.add_i32("meta", {3}, meta);
    std::vector<std::int32_t> part(ds.partition.begin(), ds.partition.end());
    tf.add_i32("partition", {part.size()}, part);
    tf.add_f32("features", {static_cast<std::uint64_t>(ds.n()),
                            static_cast<std::uint64_t>(ds.d_in())},
               ds.features);
    std::vector<std::int32_t> labels(ds.labels.begin(), ds.labels.end());
    tf.add_i32("labels", {labels.size()}, labels);
    std::vector<std::int32_t> pairs;
    pairs.reserve(ds.pair_tokens.size() * 2);
    for (const auto& pt : ds.pair_tokens) {
        pairs.push_back(pt[0]);
        pairs.push_back(pt[1]);
    }
    tf.add_i32("pair_tokens", {ds.pair_tokens.size(), 2}, pairs);
    tf.save(path);
}

ProbeDataset load_dataset(const std::filesystem::path& path) {
    const TensorFile tf = TensorFile::load(path);
    ProbeDataset ds;
    const auto meta = tf.section("meta").i32();
    if (meta.size() != 3) throw std::runtime_error("probe dataset: bad meta section");
    ds.layer = meta[0];
    ds.shot_count = meta[1];
    ds.d_model = meta[2];
    const auto part = tf.section("partition").i32();
    ds.partition.assign(part.begin(), part.end());
    const auto feats = tf.section("features").f32();
    ds.features.assign(feats.begin(), feats.end());
    const auto labels = tf.section("labels").i32();
    ds.labels.assign(labels.begin(), labels.end());
    const auto pairs = tf.section("pair_tokens").i32();
    if (pairs.size() != labels.size() * 2)
        throw std::runtime_error("probe dataset: pair section does not match labels");
    ds.pair_tokens.resize(labels.size());
    for (std::size_t i = 0; i < ds.pair_tokens.size(); ++i)
        ds.pair_tokens[i] = {pairs[2 * i], pairs[2 * i + 1]};
    ds.validate(false);
    return ds;
}

// ------------------------------------------------------------------ models

namespace {

std::vector<int> arch_widths(ProbeArch arch) {
    return arch == ProbeArch::linear ? std::vector<int>{3} : std::vector<int>{128, 64, 32, 3};
}

// forward one standardized row in double; returns the class logits
std::array<double, 3> row_logits(const ProbeModel& m, std::span<const float> x_std) {
    std::vector<double> act(x_std.begin(), x_std.end());
    for (std::size_t k = 0; k < m.w.size(); ++k) {
        const int in = k == 0 ? m.d_in : m.widths[k - 1];
        const int out = m.widths[k];
        std::vector<double> next(static_cast<std::size_t>(out));
        for (int o = 0; o < out; ++o) {
            double s = m.b[k][static_cast<std::size_t>(o)];
            for (int i = 0; i < in; ++i)
                s += act[static_cast<std::size_t>(i)] *
                     static_cast<double>(m.w[k][static_cast<std::size_t>(i) * out + o]);
            next[static_cast<std::size_t>(o)] = s;
        }
        if (k + 1 < m.w.size())
            for (auto& v : next) v = std::max(v, 0.0);
        act = std::move(next);
    }
    return {act[0], act[1], act[2]};
}

std::vector<float> standardize_row(const ProbeModel& m, std::span<const float> feature) {
    if (static_cast<int>(feature.size()) != m.d_in)
        throw std::invalid_argument("feature length does not match the probe");
    std::vector<float> x(feature.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = (feature[i] - m.feat_mu[i]) / m.feat_sigma[i];
    return x;
}

} // namespace

std::array<double, 3> ProbeModel::class_scores(std::span<const float> feature) const {
    const auto x = standardize_row(*this, feature);
    auto z = row_logits(*this, x);
    const double mx = std::max({z[0], z[1], z[2]});
    double sum = 0;
    for (double& v : z) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : z) v /= sum;
    return z;
}

int ProbeModel::predict(std::span<const float> feature) const {
    const auto s = class_scores(feature);
    int best = 0;
    for (int c = 1; c < 3; ++c)
        if (s[static_cast<std::size_t>(c)] > s[static_cast<std::size_t>(best)]) best = c;
    return best;
}

ProbeModel train_probe(const ProbeDataset& train, ProbeArch arch, const ProbeHyper& hy) {
    train.validate(true);
    if (train.n() == 0) throw std::invalid_argument("probe training set is empty");
    if (!(hy.lr > 0) || hy.epochs <= 0 || hy.batch_size <= 0)
        throw std::invalid_argument("bad probe hyperparameters");

    const int n = train.n(), din = train.d_in();
    ProbeModel m;
    m.arch = arch;
    m.d_in = din;
    m.widths = arch_widths(arch);
    m.train_partition = train.partition;
    m.train_entities = entity_tokens(train);

    // per-dimension standardization so the published step size transfers
    // across layers whose raw residual magnitudes differ
    m.feat_mu.assign(static_cast<std::size_t>(din), 0.0f);
    m.feat_sigma.assign(static_cast<std::size_t>(din), 1.0f);
    for (int j = 0; j < din; ++j) {
        double s = 0, s2 = 0;
        for (int i = 0; i < n; ++i) {
            const double v = train.features[static_cast<std::size_t>(i) * din + j];
            s += v;
            s2 += v * v;
        }
        const double mu = s / n;
        const double var = std::max(s2 / n - mu * mu, 0.0);
        m.feat_mu[static_cast<std::size_t>(j)] = static_cast<float>(mu);
        m.feat_sigma[static_cast<std::size_t>(j)] =
            std::max(static_cast<float>(std::sqrt(var)), 1e-6f);
    }
    std::vector<float> X(train.features.size());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < din; ++j)
            X[static_cast<std::size_t>(i) * din + j] =
                (train.features[static_cast<std::size_t>(i) * din + j] -
                 m.feat_mu[static_cast<std::size_t>(j)]) /
                m.feat_sigma[static_cast<std::size_t>(j)];

    // hidden layers get rectifier-scaled noise; the readout starts at zero so
    // the classifier is neutral and the first gradients already point along
    // the discriminative direction (the published step size is small)
    std::mt19937_64 rng(hy.seed);
    const std::size_t n_lay = m.widths.size();
    m.w.resize(n_lay);
    m.b.resize(n_lay);
    for (std::size_t k = 0; k < n_lay; ++k) {
        const int in = k == 0 ? din : m.widths[k - 1];
        const int out = m.widths[k];
        m.w[k].assign(static_cast<std::size_t>(in) * out, 0.0f);
        m.b[k].assign(static_cast<std::size_t>(out), 0.0f);
        if (k + 1 < n_lay) {
            std::normal_distribution<float> N(0.0f, std::sqrt(2.0f / static_cast<float>(in)));
            for (auto& v : m.w[k]) v = N(rng);
        }
    }

    const int B = hy.batch_size;
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::vector<float> xb, grad;
    std::vector<std::vector<float>> act(n_lay), delta(n_lay);

    for (int epoch = 0; epoch < hy.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int b0 = 0; b0 < n; b0 += B) {
            const int bs = std::min(B, n - b0);
            xb.resize(static_cast<std::size_t>(bs) * din);
            for (int r = 0; r < bs; ++r)
                std::copy_n(X.data() + static_cast<std::size_t>(order[b0 + r]) * din, din,
                            xb.data() + static_cast<std::size_t>(r) * din);

            // forward: act[k] holds the post-nonlinearity output of layer k
            const float* prev = xb.data();
            int prev_w = din;
            for (std::size_t k = 0; k < n_lay; ++k) {
                const int out = m.widths[k];
                act[k].resize(static_cast<std::size_t>(bs) * out);
                kernels::gemm_nn(static_cast<std::size_t>(bs), static_cast<std::size_t>(out),
                                 static_cast<std::size_t>(prev_w), prev,
                                 static_cast<std::size_t>(prev_w), m.w[k].data(),
                                 static_cast<std::size_t>(out), act[k].data(),
                                 static_cast<std::size_t>(out), false);
                for (int r = 0; r < bs; ++r)
                    for (int o = 0; o < out; ++o) {
                        float& v = act[k][static_cast<std::size_t>(r) * out + o];
                        v += m.b[k][static_cast<std::size_t>(o)];
                        if (k + 1 < n_lay && v < 0.0f) v = 0.0f;
                    }
                prev = act[k].data();
                prev_w = out;
            }

            // softmax cross-entropy; delta[last] = (p - onehot) / bs
            auto& logits = act[n_lay - 1];
            delta[n_lay - 1].resize(logits.size());
            double loss = 0;
            for (int r = 0; r < bs; ++r) {
                float* z = logits.data() + static_cast<std::size_t>(r) * 3;
                const double mx = std::max({z[0], z[1], z[2]});
                double sum = 0;
                std::array<double, 3> e{};
                for (int c = 0; c < 3; ++c) {
                    e[static_cast<std::size_t>(c)] = std::exp(z[c] - mx);
                    sum += e[static_cast<std::size_t>(c)];
                }
                const int tgt = label_to_class(train.labels[static_cast<std::size_t>(
                    order[b0 + r])]);
                loss -= std::log(e[static_cast<std::size_t>(tgt)] / sum);
                for (int c = 0; c < 3; ++c)
                    delta[n_lay - 1][static_cast<std::size_t>(r) * 3 + c] =
                        static_cast<float>((e[static_cast<std::size_t>(c)] / sum -
                                            (c == tgt ? 1.0 : 0.0)) /
                                           bs);
            }
            if (!std::isfinite(loss)) throw std::runtime_error("probe training diverged");

            // backward + SGD update, output layer first
            for (std::size_t k = n_lay; k-- > 0;) {
                const int out = m.widths[k];
                const int in = k == 0 ? din : m.widths[k - 1];
                const float* below = k == 0 ? xb.data() : act[k - 1].data();
                grad.assign(static_cast<std::size_t>(in) * out, 0.0f);
                kernels::gemm_tn(static_cast<std::size_t>(in), static_cast<std::size_t>(out),
                                 static_cast<std::size_t>(bs), below,
                                 static_cast<std::size_t>(in), delta[k].data(),
                                 static_cast<std::size_t>(out), grad.data(),
                                 static_cast<std::size_t>(out), false);
                if (k > 0) {
                    delta[k - 1].resize(static_cast<std::size_t>(bs) * in);
                    kernels::gemm_nt(static_cast<std::size_t>(bs), static_cast<std::size_t>(in),
                                     static_cast<std::size_t>(out), delta[k].data(),
                                     static_cast<std::size_t>(out), m.w[k].data(),
                                     static_cast<std::size_t>(out), delta[k - 1].data(),
                                     static_cast<std::size_t>(in), false);
                    for (std::size_t i = 0; i < delta[k - 1].size(); ++i)
                        if (act[k - 1][i] <= 0.0f) delta[k - 1][i] = 0.0f;
                }
                kernels::axpy(-static_cast<float>(hy.lr), grad.data(), m.w[k].data(),
                              m.w[k].size());
                for (int o = 0; o < out; ++o) {
                    float db = 0;
                    for (int r = 0; r < bs; ++r)
                        db += delta[k][static_cast<std::size_t>(r) * out + o];
                    m.b[k][static_cast<std::size_t>(o)] -= static_cast<float>(hy.lr) * db;
                }
            }
        }
    }
    return m;
}

ProbeEval eval_probe(const ProbeModel& probe, const ProbeDataset& test,
                     bool enforce_disjoint) {
    test.validate(false);
    if (enforce_disjoint) {
        const auto seen = entity_tokens(test);
        std::vector<int> overlap;
        std::set_intersection(probe.train_entities.begin(), probe.train_entities.end(),
                              seen.begin(), seen.end(), std::back_inserter(overlap));
        if (!overlap.empty()) {
            std::ostringstream msg;
            msg << "train and test entities overlap:";
            for (std::size_t i = 0; i < overlap.size() && i < 12; ++i) msg << ' ' << overlap[i];
            if (overlap.size() > 12) msg << " ... (" << overlap.size() << " total)";
            throw std::runtime_error(msg.str());
        }
    }

    ProbeEval ev;
    ev.n = test.n();
    int hits = 0;
    for (int i = 0; i < test.n(); ++i) {
        const int truth = label_to_class(test.labels[static_cast<std::size_t>(i)]);
        const int pred = probe.predict(test.feature_row(i));
        ++ev.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)];
        if (truth == pred) ++hits;
    }
    ev.accuracy = ev.n > 0 ? static_cast<double>(hits) / ev.n : 0.0;
    return ev;
}

// ------------------------------------------------------------------ sweeps

const ProbeCell* ProbeReport::cell(int layer, int shot) const {
    for (const auto& c : cells)
        if (c.layer == layer && c.shot == shot) return &c;
    return nullptr;
}

ProbeReport sweep_layers_shots(const Params& p, const CorpusFactory& factory,
                               std::span<const int> layers, std::span<const int> shots,
                               ProbeArch arch, const SweepConfig& cfg) {
    if (layers.empty() || shots.empty())
        throw std::invalid_argument("probe sweep needs at least one layer and one shot count");
    ProbeReport report;
    report.arch = to_string(arch);

    for (int shot : shots) {
        const ShotCorpora corpora = factory(shot);
        const auto train_sets = collect_layers(p, corpora.train, layers, shot,
                                               corpora.train_partition, cfg.collect_seed);
        const auto test_sets = collect_layers(p, corpora.test, layers, shot,
                                              corpora.test_partition, cfg.collect_seed + 1);

        // cells are independent; a pool of workers walks the layer axis and
        // writes into per-layer slots, so the schedule cannot reorder results
        std::vector<ProbeCell> row(layers.size());
        std::vector<std::string> errors(layers.size());
        std::atomic<std::size_t> next{0};
        const unsigned hw = std::thread::hardware_concurrency();
        const std::size_t n_workers =
            std::min<std::size_t>(layers.size(),
                                  cfg.threads > 0 ? static_cast<std::size_t>(cfg.threads)
                                                  : std::max(1u, hw));
        auto run_cell = [&](std::size_t li) {
            ProbeHyper hy = cfg.hyper;
            hy.seed = mix_seed(cfg.hyper.seed, static_cast<std::uint64_t>(layers[li]),
                               static_cast<std::uint64_t>(shot));
            const ProbeModel probe = train_probe(train_sets[li], arch, hy);
            const ProbeEval ev = eval_probe(probe, test_sets[li]);
            row[li] = {layers[li], shot, train_sets[li].n(), test_sets[li].n(), ev.accuracy,
                       ev.confusion};
        };
        auto worker = [&] {
            for (std::size_t li = next.fetch_add(1); li < layers.size();
                 li = next.fetch_add(1)) {
                try {
                    run_cell(li);
                } catch (const std::exception& e) {
                    errors[li] = e.what();
                }
            }
        };
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t + 1 < n_workers; ++t) pool.emplace_back(worker);
        worker();
        for (auto& t : pool) t.join();
        for (const auto& err : errors)
            if (!err.empty()) throw std::runtime_error("probe sweep cell failed: " + err);
        report.cells.insert(report.cells.end(), row.begin(), row.end());
    }

    std::sort(report.cells.begin(), report.cells.end(), [](const auto& a, const auto& b) {
        return a.layer != b.layer ? a.layer < b.layer : a.shot < b.shot;
    });
    return report;
}

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

constexpr const char* kReportHeader =
    "layer\tshot\tn_train\tn_test\taccuracy\tc00\tc01\tc02\tc10\tc11\tc12\tc20\tc21\tc22\n";

} // namespace

void save_report(const std::filesystem::path& path, const ProbeReport& report) {
    std::ostringstream out;
    out << "# probe arch=" << report.arch << '\n';
    out << "# read_point " << report.read_point << '\n';
    out << kReportHeader;
    for (const auto& c : report.cells) {
        out << c.layer << '\t' << c.shot << '\t' << c.n_train << '\t' << c.n_test << '\t'
            << format_double(c.accuracy);
        for (const auto& row : c.confusion)
            for (int v : row) out << '\t' << v;
        out << '\n';
    }
    write_file_atomic(path, out.str());
}

ProbeReport load_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open probe report: " + path.string());
    ProbeReport report;
    std::string line;
    bool saw_header = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("# probe arch=", 0) == 0) {
            report.arch = line.substr(13);
            continue;
        }
        if (line.rfind("# read_point ", 0) == 0) {
            report.read_point = line.substr(13);
            continue;
        }
        if (!saw_header) {
            if (line + "\n" != kReportHeader)
                throw std::runtime_error("probe report header mismatch: " + path.string());
            saw_header = true;
            continue;
        }
        std::istringstream ls(line);
        ProbeCell c;
        if (!(ls >> c.layer >> c.shot >> c.n_train >> c.n_test >> c.accuracy))
            throw std::runtime_error("bad probe report row: " + line);
        for (auto& row : c.confusion)
            for (int& v : row)
                if (!(ls >> v)) throw std::runtime_error("bad probe report row: " + line);
        report.cells.push_back(c);
    }
    if (!saw_header) throw std::runtime_error("probe report lacks a header: " + path.string());
    if (report.arch.empty()) throw std::runtime_error("probe report lacks an architecture line");
    return report;
}

std::pair<ontogen::EntityPools, ontogen::EntityPools> disjoint_probe_pools(
    const WordLists& lists, int eval_categories, int eval_attributes, int eval_individuals) {
    auto [train, eval] = ontogen::EntityPools::fictional_split(lists, eval_categories);
    auto split_tail = [](std::vector<std::string>& keep, std::vector<std::string>& take,
                         int count, const char* what) {
        if (count <= 0 || count >= static_cast<int>(keep.size()))
            throw std::invalid_argument(std::string("cannot split ") + what +
                                        ": pool too small");
        take.assign(keep.end() - count, keep.end());
        keep.erase(keep.end() - count, keep.end());
    };
    split_tail(train.attributes, eval.attributes, eval_attributes, "attributes");
    split_tail(train.individuals, eval.individuals, eval_individuals, "individuals");
    return {std::move(train), std::move(eval)};
}

} // namespace cotlab::probes
