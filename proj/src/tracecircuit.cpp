#include "cotlab/tracecircuit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <set>
#include <stdexcept>
#include <tuple>
#include <unordered_set>

#include "cotlab/tensorio.hpp"

namespace cotlab::tracecircuit {

namespace {

std::size_t att_offset(const ModelConfig& cfg, int i, int k) {
    const std::size_t ii = static_cast<std::size_t>(i);
    return (ii * (ii + 1) / 2) * static_cast<std::size_t>(cfg.n_heads) +
           static_cast<std::size_t>(k) * (ii + 1);
}

std::size_t att_layer_len(const ModelConfig& cfg, int n) {
    const std::size_t nn = static_cast<std::size_t>(n);
    return nn * (nn + 1) / 2 * static_cast<std::size_t>(cfg.n_heads);
}

// Unembedded logits of one stream vector, double-accumulated so every caller
// (lens, abidance, writers, flow trees) agrees on argmax and probabilities.
std::vector<double> project_logits(const TraceView& t, std::span<const float> vec) {
    const int d = t.cfg.d_model, V = t.cfg.vocab_size;
    if (static_cast<int>(vec.size()) != d)
        throw std::invalid_argument("logit lens: vector length != d_model");
    std::vector<double> logits(static_cast<std::size_t>(V), 0.0);
    for (int i = 0; i < d; ++i) {
        const double vi = vec[static_cast<std::size_t>(i)];
        const float* row = t.unembed.data() + static_cast<std::size_t>(i) * V;
        for (int o = 0; o < V; ++o) logits[static_cast<std::size_t>(o)] += vi * row[o];
    }
    return logits;
}

int argmax_lowest(std::span<const double> v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) best = i;
    return best;
}

int project_argmax(const TraceView& t, std::span<const float> vec) {
    const auto logits = project_logits(t, vec);
    return argmax_lowest(logits);
}

std::uint64_t pack_bigram(int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
}

} // namespace

// ---------------------------------------------------------------- trace

std::span<const float> TraceView::x_row(int layer, int pos) const {
    if (layer < 0 || layer > cfg.n_layers) throw std::out_of_range("trace: bad stream layer");
    if (pos < 0 || pos >= n) throw std::out_of_range("trace: bad position");
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    return {x_pre.data() + (static_cast<std::size_t>(layer) * n + pos) * d, d};
}

std::span<const float> TraceView::y_row(int layer, int head, int pos) const {
    if (layer < 0 || layer >= cfg.n_layers) throw std::out_of_range("trace: bad layer");
    if (head < 0 || head >= cfg.n_heads) throw std::out_of_range("trace: bad head");
    if (pos < 0 || pos >= n) throw std::out_of_range("trace: bad position");
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    const std::size_t per_layer = static_cast<std::size_t>(n) * cfg.n_heads * d;
    return {y.data() + static_cast<std::size_t>(layer) * per_layer +
                (static_cast<std::size_t>(pos) * cfg.n_heads + head) * d,
            d};
}

std::span<const float> TraceView::att_row(int layer, int head, int pos) const {
    if (layer < 0 || layer >= cfg.n_layers) throw std::out_of_range("trace: bad layer");
    if (head < 0 || head >= cfg.n_heads) throw std::out_of_range("trace: bad head");
    if (pos < 0 || pos >= n) throw std::out_of_range("trace: bad position");
    const std::size_t per_layer = att_layer_len(cfg, n);
    return {att.data() + static_cast<std::size_t>(layer) * per_layer +
                att_offset(cfg, pos, head),
            static_cast<std::size_t>(pos) + 1};
}

void TraceView::validate() const {
    cfg.validate();
    if (n < 1) throw std::invalid_argument("trace: empty token sequence");
    if (static_cast<int>(tokens.size()) != n)
        throw std::invalid_argument("trace: token count != n");
    for (int tok : tokens)
        if (tok < 0 || tok >= cfg.vocab_size)
            throw std::invalid_argument("trace: token id out of vocabulary");
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    const std::size_t nn = static_cast<std::size_t>(n);
    if (x_pre.size() != (static_cast<std::size_t>(cfg.n_layers) + 1) * nn * d)
        throw std::invalid_argument("trace: residual stream shape mismatch");
    if (y.size() != static_cast<std::size_t>(cfg.n_layers) * nn * cfg.n_heads * d)
        throw std::invalid_argument("trace: head output shape mismatch");
    if (att.size() != static_cast<std::size_t>(cfg.n_layers) * att_layer_len(cfg, n))
        throw std::invalid_argument("trace: attention shape mismatch");
    if (unembed.size() != d * static_cast<std::size_t>(cfg.vocab_size))
        throw std::invalid_argument("trace: unembedding shape mismatch");
}

TraceView make_trace(const Params& p, const Cache& cache, const ontogen::Segments& segments) {
    if (cache.level != nanoformer::RecordLevel::full)
        throw std::invalid_argument("trace needs a full-level cache");
    if (cache.n < 1) throw std::invalid_argument("trace: cache is empty");
    if (!(p.cfg == cache.cfg))
        throw std::invalid_argument("trace: cache was built with a different config");

    TraceView t;
    t.cfg = p.cfg;
    t.tokens = cache.tokens;
    t.segments = segments;
    t.n = cache.n;

    const std::size_t d = static_cast<std::size_t>(p.cfg.d_model);
    const std::size_t nn = static_cast<std::size_t>(cache.n);
    t.x_pre.reserve((static_cast<std::size_t>(p.cfg.n_layers) + 1) * nn * d);
    for (const auto& lc : cache.layers)
        t.x_pre.insert(t.x_pre.end(), lc.x_pre.begin(), lc.x_pre.end());
    t.x_pre.insert(t.x_pre.end(), cache.x_final.begin(), cache.x_final.end());
    for (const auto& lc : cache.layers) t.y.insert(t.y.end(), lc.y.begin(), lc.y.end());
    for (const auto& lc : cache.layers) t.att.insert(t.att.end(), lc.att.begin(), lc.att.end());
    t.unembed = p.unembed;
    t.validate();
    return t;
}

TraceView run_trace(const Params& p, std::span<const int> tokens,
                    const ontogen::Segments& segments) {
    Cache cache;
    nanoformer::forward(p, tokens, cache, nanoformer::RecordLevel::full);
    return make_trace(p, cache, segments);
}

void export_trace(const std::filesystem::path& path, const TraceView& trace) {
    trace.validate();
    TensorFile tf;
    tf.meta["kind"] = "trace";
    tf.meta["trace_version"] = TraceView::kVersion;
    tf.meta["config"] = {{"n_layers", trace.cfg.n_layers},   {"n_heads", trace.cfg.n_heads},
                         {"d_model", trace.cfg.d_model},     {"d_ff", trace.cfg.d_ff},
                         {"vocab_size", trace.cfg.vocab_size}, {"max_seq", trace.cfg.max_seq},
                         {"rope_base", trace.cfg.rope_base}, {"norm_eps", trace.cfg.norm_eps}};
    tf.meta["segments"] = {{"fewshot_begin", trace.segments.fewshot_begin},
                           {"fewshot_end", trace.segments.fewshot_end},
                           {"question_begin", trace.segments.question_begin},
                           {"question_end", trace.segments.question_end},
                           {"generated_begin", trace.segments.generated_begin},
                           {"generated_end", trace.segments.generated_end}};

    std::vector<std::int32_t> toks(trace.tokens.begin(), trace.tokens.end());
    const auto L = static_cast<std::uint64_t>(trace.cfg.n_layers);
    const auto H = static_cast<std::uint64_t>(trace.cfg.n_heads);
    const auto d = static_cast<std::uint64_t>(trace.cfg.d_model);
    const auto V = static_cast<std::uint64_t>(trace.cfg.vocab_size);
    const auto nn = static_cast<std::uint64_t>(trace.n);
    tf.add_i32("tokens", {nn}, toks);
    tf.add_f32("x_pre", {L + 1, nn, d}, trace.x_pre);
    tf.add_f32("y", {L, nn, H, d}, trace.y);
    tf.add_f32("att", {L, att_layer_len(trace.cfg, trace.n)}, trace.att);
    tf.add_f32("unembed", {d, V}, trace.unembed);
    tf.save(path);
}

TraceView import_trace(const std::filesystem::path& path) {
    const TensorFile tf = TensorFile::load(path);
    if (!tf.meta.contains("kind") || tf.meta["kind"] != "trace")
        throw std::runtime_error(path.string() + ": not a trace file");
    if (!tf.meta.contains("trace_version") ||
        tf.meta["trace_version"].get<int>() != TraceView::kVersion)
        throw std::runtime_error(path.string() + ": unsupported trace version");

    TraceView t;
    const auto& c = tf.meta.at("config");
    t.cfg.n_layers = c.at("n_layers").get<int>();
    t.cfg.n_heads = c.at("n_heads").get<int>();
    t.cfg.d_model = c.at("d_model").get<int>();
    t.cfg.d_ff = c.at("d_ff").get<int>();
    t.cfg.vocab_size = c.at("vocab_size").get<int>();
    t.cfg.max_seq = c.at("max_seq").get<int>();
    t.cfg.rope_base = c.at("rope_base").get<float>();
    t.cfg.norm_eps = c.at("norm_eps").get<float>();
    const auto& s = tf.meta.at("segments");
    t.segments.fewshot_begin = s.at("fewshot_begin").get<int>();
    t.segments.fewshot_end = s.at("fewshot_end").get<int>();
    t.segments.question_begin = s.at("question_begin").get<int>();
    t.segments.question_end = s.at("question_end").get<int>();
    t.segments.generated_begin = s.at("generated_begin").get<int>();
    t.segments.generated_end = s.at("generated_end").get<int>();

    const auto toks = tf.section("tokens").i32();
    t.tokens.assign(toks.begin(), toks.end());
    t.n = static_cast<int>(t.tokens.size());
    const auto xs = tf.section("x_pre").f32();
    t.x_pre.assign(xs.begin(), xs.end());
    const auto ys = tf.section("y").f32();
    t.y.assign(ys.begin(), ys.end());
    const auto as = tf.section("att").f32();
    t.att.assign(as.begin(), as.end());
    const auto us = tf.section("unembed").f32();
    t.unembed.assign(us.begin(), us.end());
    t.validate();
    return t;
}

// ------------------------------------------------------------ logit lens

LensResult logit_lens(const TraceView& trace, std::span<const float> vec) {
    for (float v : vec)
        if (!std::isfinite(v)) throw std::invalid_argument("logit lens: non-finite vector");
    const auto logits = project_logits(trace, vec);
    LensResult r;
    r.token = argmax_lowest(logits);
    const double mx = logits[static_cast<std::size_t>(r.token)];
    double z = 0.0;
    r.dist.resize(logits.size());
    for (std::size_t o = 0; o < logits.size(); ++o) {
        r.dist[o] = std::exp(logits[o] - mx);
        z += r.dist[o];
    }
    for (auto& p : r.dist) p /= z;
    r.prob = r.dist[static_cast<std::size_t>(r.token)];
    return r;
}

// ------------------------------------------------------- context abidance

double ContextAbidanceMatrix::at(int layer, int head) const {
    return c.at(static_cast<std::size_t>(layer) * n_heads + head);
}

bool ContextAbidanceMatrix::is_masked(int layer, int head) const {
    return masked.at(static_cast<std::size_t>(layer) * n_heads + head) != 0;
}

ContextAbidanceMatrix context_abidance(const TraceView& trace) {
    trace.validate();
    const int L = trace.cfg.n_layers, H = trace.cfg.n_heads;

    std::unordered_set<std::uint64_t> bigrams;
    std::unordered_set<int> starts;
    for (int i = 0; i + 1 < trace.n; ++i) {
        bigrams.insert(pack_bigram(trace.tokens[static_cast<std::size_t>(i)],
                                   trace.tokens[static_cast<std::size_t>(i) + 1]));
        starts.insert(trace.tokens[static_cast<std::size_t>(i)]);
    }
    std::vector<int> evaluable;
    for (int i = 0; i < trace.n; ++i)
        if (starts.count(trace.tokens[static_cast<std::size_t>(i)])) evaluable.push_back(i);

    ContextAbidanceMatrix m;
    m.n_layers = L;
    m.n_heads = H;
    m.c.assign(static_cast<std::size_t>(L) * H, 0.0);
    m.masked.assign(static_cast<std::size_t>(L) * H, evaluable.empty() ? 1 : 0);
    if (evaluable.empty()) return m;

    for (int j = 0; j < L; ++j)
        for (int k = 0; k < H; ++k) {
            int hits = 0;
            for (int i : evaluable) {
                const int projected = project_argmax(trace, trace.y_row(j, k, i));
                if (bigrams.count(
                        pack_bigram(trace.tokens[static_cast<std::size_t>(i)], projected)))
                    ++hits;
            }
            m.c[static_cast<std::size_t>(j) * H + k] =
                static_cast<double>(hits) / static_cast<double>(evaluable.size());
        }
    return m;
}

// --------------------------------------------------------- answer writers

AnswerWriterReport find_answer_writers(const TraceView& trace, int pos, int answer,
                                       int subtask) {
    if (pos < 0 || pos >= trace.n) throw std::out_of_range("answer writers: bad position");
    if (answer < 0 || answer >= trace.cfg.vocab_size)
        throw std::out_of_range("answer writers: answer outside the vocabulary");

    AnswerWriterReport rep;
    rep.subtask = subtask;
    rep.pos = pos;
    rep.answer = answer;
    for (int j = 0; j < trace.cfg.n_layers; ++j)
        for (int k = 0; k < trace.cfg.n_heads; ++k) {
            const auto lens = logit_lens(trace, trace.y_row(j, k, pos));
            if (lens.token == answer) rep.writers.push_back({j, k, lens.prob});
        }
    std::sort(rep.writers.begin(), rep.writers.end(), [](const auto& a, const auto& b) {
        return a.prob != b.prob ? a.prob > b.prob
                                : std::tie(a.layer, a.head) < std::tie(b.layer, b.head);
    });
    return rep;
}

AnswerWriterReport find_answer_writers(const TraceView& trace,
                                       const ontogen::SubtaskInstance& inst) {
    if (trace.n != static_cast<int>(inst.prompt.size()) ||
        !std::equal(inst.prompt.begin(), inst.prompt.end(), trace.tokens.begin()))
        throw std::invalid_argument("trace does not match the instance prompt");
    return find_answer_writers(trace, trace.n - 1, inst.answer, inst.index);
}

// -------------------------------------------------------------- flow tree

namespace {

struct TreeBuilder {
    const TraceView& t;
    const Vocab& vocab;
    FlowTree& tree;
    std::map<std::tuple<int, int, int>, int> seen;  // (layer, head, target) -> node

    int expand(int layer, int head, int target, int depth) {
        const auto key = std::make_tuple(layer, head, target);
        if (const auto it = seen.find(key); it != seen.end()) return it->second;

        FlowNode node;
        node.layer = layer;
        node.head = head;
        node.target = target;

        const auto row = t.att_row(layer, head, target);
        int src = 0;
        for (int m = 1; m < static_cast<int>(row.size()); ++m)
            if (row[static_cast<std::size_t>(m)] > row[static_cast<std::size_t>(src)]) src = m;
        node.source = src;

        const auto lens = logit_lens(t, t.y_row(layer, head, target));
        node.info = lens.token;
        node.info_prob = lens.prob;
        node.source_content = project_argmax(t, t.x_row(layer, src));
        node.label = std::to_string(layer) + "-" + std::to_string(head) + "<" +
                     vocab.word(node.source_content) + ">" + std::to_string(src) + "<" +
                     vocab.word(node.info) + ">";

        const int idx = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(node);
        seen.emplace(key, idx);

        // stop: first decoder block, first token position, or the depth cap
        if (layer == 0 || src == 0) return idx;
        if (depth >= tree.depth_cap) {
            tree.nodes[static_cast<std::size_t>(idx)].depth_truncated = true;
            return idx;
        }

        // candidate children: heads below that write this node's source
        // content into its source stream, strongest writers first
        struct Cand {
            double prob;
            int layer, head;
        };
        std::vector<Cand> cands;
        for (int j = 0; j < layer; ++j)
            for (int k = 0; k < t.cfg.n_heads; ++k) {
                const auto cl = logit_lens(t, t.y_row(j, k, src));
                if (cl.token == node.source_content) cands.push_back({cl.prob, j, k});
            }
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            return a.prob != b.prob ? a.prob > b.prob
                                    : std::tie(a.layer, a.head) < std::tie(b.layer, b.head);
        });
        if (static_cast<int>(cands.size()) > tree.fanout_cap) {
            cands.resize(static_cast<std::size_t>(tree.fanout_cap));
            tree.nodes[static_cast<std::size_t>(idx)].children_truncated = true;
        }
        std::vector<int> children;
        children.reserve(cands.size());
        for (const auto& c : cands) children.push_back(expand(c.layer, c.head, src, depth + 1));
        tree.nodes[static_cast<std::size_t>(idx)].children = std::move(children);
        return idx;
    }
};

} // namespace

FlowTree build_flow_tree(const TraceView& trace, const AnswerWriterReport& writers,
                         const Vocab& vocab, int depth_cap, int fanout_cap) {
    if (depth_cap < 1 || fanout_cap < 1)
        throw std::invalid_argument("flow tree: caps must be positive");
    if (writers.pos < 0 || writers.pos >= trace.n)
        throw std::out_of_range("flow tree: report position outside the trace");

    FlowTree tree;
    tree.depth_cap = depth_cap;
    tree.fanout_cap = fanout_cap;
    tree.answer = writers.answer;
    TreeBuilder b{trace, vocab, tree, {}};
    for (const auto& w : writers.writers)
        tree.roots.push_back(b.expand(w.layer, w.head, writers.pos, 1));
    return tree;
}

// ------------------------------------------------------ source attribution

std::string to_string(SegmentLabel s) {
    switch (s) {
        case SegmentLabel::fewshot: return "few-shot";
        case SegmentLabel::question: return "question";
        case SegmentLabel::generated: return "generated";
    }
    throw std::invalid_argument("bad segment label");
}

int SourceAttribution::count(SegmentLabel s) const {
    int n = 0;
    for (const auto& e : entries) n += e.segment == s ? 1 : 0;
    return n;
}

SourceAttribution attribute_answer_sources(const FlowTree& tree, const TraceView& trace) {
    const auto& seg = trace.segments;
    auto label_of = [&](int pos) {
        if (pos >= seg.fewshot_begin && pos < seg.fewshot_end) return SegmentLabel::fewshot;
        if (pos >= seg.question_begin && pos < seg.question_end) return SegmentLabel::question;
        if (pos >= seg.generated_begin) return SegmentLabel::generated;
        throw std::invalid_argument("source position outside every segment");
    };

    SourceAttribution out;
    out.answer = tree.answer;
    std::set<std::tuple<int, int, int>> seen;
    for (const auto& node : tree.nodes) {
        if (node.source < 0 || node.source >= trace.n)
            throw std::invalid_argument("tree references a position outside the trace");
        if (trace.tokens[static_cast<std::size_t>(node.source)] != tree.answer) continue;
        if (!seen.emplace(node.layer, node.head, node.source).second) continue;
        out.entries.push_back({node.layer, node.head, node.source, label_of(node.source)});
    }
    std::sort(out.entries.begin(), out.entries.end(), [](const auto& a, const auto& b) {
        return std::tie(a.layer, a.head, a.source) < std::tie(b.layer, b.head, b.source);
    });
    return out;
}

// ------------------------------------------------------ attention profile

std::vector<double> attention_profile(const TraceView& trace, int query, int key_begin,
                                      int key_end) {
    if (query < 0 || query >= trace.n)
        throw std::out_of_range("attention profile: bad query position");
    if (key_begin < 0 || key_end < key_begin || key_end > trace.n)
        throw std::out_of_range("attention profile: bad key range");

    const int L = trace.cfg.n_layers, H = trace.cfg.n_heads;
    std::vector<double> profile(static_cast<std::size_t>(key_end - key_begin), 0.0);
    for (int j = 0; j < L; ++j)
        for (int k = 0; k < H; ++k) {
            const auto row = trace.att_row(j, k, query);
            for (int m = key_begin; m < key_end && m <= query; ++m)
                profile[static_cast<std::size_t>(m - key_begin)] +=
                    row[static_cast<std::size_t>(m)];
        }
    const double scale = 1.0 / (static_cast<double>(L) * H);
    for (auto& v : profile) v *= scale;
    return profile;
}

} // namespace cotlab::tracecircuit
