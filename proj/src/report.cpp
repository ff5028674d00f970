#include "cotlab/report.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "cotlab/headscore.hpp"
#include "cotlab/inicfg.hpp"
#include "cotlab/ioutil.hpp"
#include "cotlab/probes.hpp"
#include "cotlab/svg.hpp"

namespace cotlab::report {

namespace fs = std::filesystem;
using nlohmann::json;
using svg::Canvas;
using svg::fmt;

namespace {

// ------------------------------------------------------------- chart scales

struct Scale {
    double v0 = 0, v1 = 1;   // value range
    double p0 = 0, p1 = 1;   // pixel range
    double operator()(double v) const {
        const double span = v1 - v0;
        const double t = span == 0 ? 0.5 : (v - v0) / span;
        return p0 + t * (p1 - p0);
    }
};

// frame with left/bottom axis lines, ticks and labels
void axes(Canvas& c, const Scale& x, const Scale& y, const std::string& x_label,
          const std::string& y_label, int x_ticks = 5, int y_ticks = 4) {
    x_ticks = std::max(1, x_ticks);
    y_ticks = std::max(1, y_ticks);
    c.line(x.p0, y.p1, x.p0, y.p0, "#888");
    c.line(x.p0, y.p0, x.p1, y.p0, "#888");
    for (int i = 0; i <= x_ticks; ++i) {
        const double v = x.v0 + (x.v1 - x.v0) * i / x_ticks;
        c.line(x(v), y.p0, x(v), y.p0 + 3, "#888");
        c.text(x(v), y.p0 + 14, fmt(v), 9, "middle", "#666");
    }
    for (int i = 0; i <= y_ticks; ++i) {
        const double v = y.v0 + (y.v1 - y.v0) * i / y_ticks;
        c.line(x.p0 - 3, y(v), x.p0, y(v), "#888");
        c.text(x.p0 - 5, y(v) + 3, fmt(v), 9, "end", "#666");
    }
    c.text((x.p0 + x.p1) / 2, y.p0 + 26, x_label, 10, "middle");
    c.text(x.p0 - 36, y.p1 - 4, y_label, 10, "start");
}

constexpr const char* kPalette[] = {"#2c6fbb", "#c2504d", "#3e9651", "#8a5fb0",
                                    "#b08a3e", "#477f87", "#96465f", "#5b5b5b"};

std::string color(int i) { return kPalette[i % (sizeof kPalette / sizeof *kPalette)]; }

// ----------------------------------------------------------- file plumbing

std::optional<std::string> read_if_exists(const fs::path& p) {
    if (!fs::exists(p)) return std::nullopt;
    return read_file(p);
}

std::vector<json> read_jsonl(const std::string& text) {
    std::vector<json> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(json::parse(line));
    return out;
}

void notice(std::string& html, const std::string& title, const std::string& why) {
    html += "<p class=\"notice\">figure skipped (" + svg::escape(title) + "): " +
            svg::escape(why) + "</p>\n";
}

void figure(std::string& html, const std::string& title, const std::string& body,
            const std::string& digest) {
    html += "<figure>\n<figcaption>" + svg::escape(title) + " &mdash; config <code>" +
            svg::escape(digest) + "</code></figcaption>\n" + body + "</figure>\n";
}

// runs one figure builder; a missing artifact or parse problem becomes a
// notice so a partial run still renders everything it can
template <class Fn>
void try_figure(std::string& html, const std::string& title, const std::string& digest, Fn&& fn) {
    try {
        figure(html, title, fn(), digest);
    } catch (const std::exception& e) {
        notice(html, title, e.what());
    }
}

[[noreturn]] void missing(const char* file) {
    throw std::runtime_error(std::string("missing artifact ") + file);
}

std::string require_file(const fs::path& dir, const char* name) {
    auto text = read_if_exists(dir / name);
    if (!text) missing(name);
    return *text;
}

// ----------------------------------------------------------------- charts

std::string bar_chart(const std::vector<std::string>& labels, const std::vector<double>& values,
                      const std::string& y_label, double y_max) {
    const double bw = 34;
    const double w = 56 + bw * values.size() + 12;
    Canvas c(w, 210);
    const Scale y{0, y_max, 176, 12};
    c.line(50, y.p0, w - 8, y.p0, "#888");
    for (int i = 0; i <= 4; ++i) {
        const double v = y_max * i / 4;
        c.line(47, y(v), 50, y(v), "#888");
        c.text(45, y(v) + 3, fmt(v), 9, "end", "#666");
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double x = 56 + bw * i;
        c.rect(x, y(values[i]), bw - 8, y.p0 - y(values[i]), color(0));
        c.tooltip(labels[i] + ": " + fmt(values[i]));
        c.text(x + (bw - 8) / 2, 190, labels[i], 9, "middle");
        c.text(x + (bw - 8) / 2, y(values[i]) - 3, fmt(values[i]), 8, "middle", "#555");
    }
    c.text(8, 12, y_label, 10);
    return c.str();
}

struct Series {
    std::string name;
    std::vector<double> xs, ys;
};

std::string line_chart(const std::vector<Series>& series, const std::string& x_label,
                       const std::string& y_label, double y_lo, double y_hi,
                       double band_lo = 0, double band_hi = 0,
                       const std::vector<std::pair<std::string, double>>& markers = {}) {
    Canvas c(460, 240);
    double x_lo = 0, x_hi = 1;
    bool first = true;
    for (const auto& s : series)
        for (double v : s.xs) {
            x_lo = first ? v : std::min(x_lo, v);
            x_hi = first ? v : std::max(x_hi, v);
            first = false;
        }
    if (x_hi == x_lo) x_hi = x_lo + 1;
    const Scale x{x_lo, x_hi, 52, 440};
    const Scale y{y_lo, y_hi, 200, 14};
    if (band_hi > band_lo) {
        c.rect(x.p0, y(band_hi), x.p1 - x.p0, y(band_lo) - y(band_hi), "#eee");
        c.tooltip("chance band " + fmt(band_lo) + " - " + fmt(band_hi));
    }
    axes(c, x, y, x_label, y_label, std::min(8, static_cast<int>(x_hi - x_lo)), 4);
    int ci = 0;
    double ly = 20;
    for (const auto& s : series) {
        std::vector<double> px, py;
        for (std::size_t i = 0; i < s.xs.size(); ++i) {
            px.push_back(x(s.xs[i]));
            py.push_back(y(s.ys[i]));
        }
        c.polyline(px, py, color(ci));
        for (std::size_t i = 0; i < px.size(); ++i) {
            c.circle(px[i], py[i], 2.4, color(ci));
            c.tooltip(s.name + " (" + fmt(s.xs[i]) + ", " + fmt(s.ys[i]) + ")");
        }
        c.text(x.p1 - 2, ly, s.name, 9, "end", color(ci));
        ly += 11;
        ++ci;
    }
    for (const auto& [name, value] : markers) {
        c.line(x.p0, y(value), x.p1, y(value), color(ci), 1.0);
        c.text(x.p1 - 2, y(value) - 3, name + " " + fmt(value), 9, "end", color(ci));
        ++ci;
    }
    return c.str();
}

std::string heatmap(const std::string& name, int n_layers, int n_heads,
                    const std::vector<double>& mu) {
    const double cell = 24;
    const double w = 44 + cell * n_heads + 8;
    const double h = 30 + cell * n_layers + 26;
    Canvas c(w, h);
    c.text(44, 14, name, 11);
    double lo = mu[0], hi = mu[0];
    for (double v : mu) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (int l = 0; l < n_layers; ++l)
        for (int k = 0; k < n_heads; ++k) {
            const double v = mu[static_cast<std::size_t>(l) * n_heads + k];
            const double t = hi == lo ? 0.5 : (v - lo) / (hi - lo);
            // layer 0 renders at the bottom
            c.rect(44 + cell * k, 22 + cell * (n_layers - 1 - l), cell - 2, cell - 2,
                   svg::ramp(t, "#f5f7fa", "#18547a"), "class=\"hm\"");
            c.tooltip("layer " + std::to_string(l) + " head " + std::to_string(k) + ": " + fmt(v));
        }
    for (int l = 0; l < n_layers; ++l)
        c.text(40, 22 + cell * (n_layers - 1 - l) + cell / 2 + 2, std::to_string(l), 8, "end",
               "#666");
    for (int k = 0; k < n_heads; ++k)
        c.text(44 + cell * k + cell / 2 - 1, 22 + cell * n_layers + 10, std::to_string(k), 8,
               "middle", "#666");
    c.text(44, h - 4, "head \xe2\x86\x92 / layer \xe2\x86\x91  (" + fmt(lo) + " .. " + fmt(hi) + ")",
           9, "start", "#666");
    return c.str();
}

std::string scatter(const std::string& x_name, const std::string& y_name,
                    const std::vector<double>& xs, const std::vector<double>& ys,
                    const std::vector<std::string>& tips) {
    Canvas c(300, 260);
    double x_lo = xs[0], x_hi = xs[0], y_lo = ys[0], y_hi = ys[0];
    for (double v : xs) {
        x_lo = std::min(x_lo, v);
        x_hi = std::max(x_hi, v);
    }
    for (double v : ys) {
        y_lo = std::min(y_lo, v);
        y_hi = std::max(y_hi, v);
    }
    if (x_hi == x_lo) x_hi = x_lo + 1;
    if (y_hi == y_lo) y_hi = y_lo + 1;
    const Scale x{x_lo, x_hi, 52, 290};
    const Scale y{y_lo, y_hi, 220, 14};
    axes(c, x, y, x_name, y_name, 4, 4);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        c.circle(x(xs[i]), y(ys[i]), 3, color(0), "fill-opacity=\"0.55\"");
        c.tooltip(tips[i]);
    }
    return c.str();
}

} // namespace

// ------------------------------------------------------------- figure set

namespace {

std::string fig_subtask_accuracy(const fs::path& dir) {
    const json ev = json::parse(require_file(dir, "eval.json"));
    std::vector<std::string> labels;
    std::vector<double> values;
    int i = 0;
    for (const auto& v : ev.at("slot_em")) {
        labels.push_back("s" + std::to_string(i++));
        values.push_back(v.get<double>());
    }
    labels.push_back("verdict");
    values.push_back(ev.at("verdict_acc").get<double>());
    return bar_chart(labels, values, "exact match", 1.0) +
           "<p>held-out examples: " + std::to_string(ev.at("n_examples").get<int>()) +
           ", training steps: " + std::to_string(ev.at("steps_run").get<int>()) + "</p>\n";
}

const headscore::ScoreTable& find_table(const std::vector<headscore::ScoreTable>& tables,
                                        const std::string& kind, int subtask) {
    for (const auto& t : tables)
        if (t.kind == kind && t.subtask == subtask) return t;
    throw std::runtime_error("scores.tsv has no " + kind + " table for subtask " +
                             std::to_string(subtask));
}

std::string fig_prune_histogram(const fs::path& dir) {
    require_file(dir, "scores.tsv");
    const auto tables = headscore::load_tables(dir / "scores.tsv");
    const auto& merged = find_table(tables, "decision", -1);
    const auto steps = read_jsonl(require_file(dir, "sweep.jsonl"));
    if (steps.empty()) throw std::runtime_error("sweep.jsonl is empty");

    double lo = merged.mu[0], hi = merged.mu[0];
    for (double v : merged.mu) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi == lo) hi = lo + 1e-12;
    const int n_bins = static_cast<int>(steps.size());
    std::vector<int> counts(n_bins, 0);
    for (double v : merged.mu) {
        int b = static_cast<int>((v - lo) / (hi - lo) * n_bins);
        counts[std::clamp(b, 0, n_bins - 1)]++;
    }
    // shade each bin by the relative accuracy of the earliest sweep step
    // whose cumulative removal covers the bin center
    std::vector<double> shade(n_bins, -1.0);
    for (int b = 0; b < n_bins; ++b) {
        const double center = lo + (hi - lo) * (b + 0.5) / n_bins;
        for (const auto& st : steps) {
            if (center >= st.at("mu_lo").get<double>() && center <= st.at("mu_hi").get<double>()) {
                shade[b] = st.at("relative_accuracy").get<double>();
                break;
            }
        }
    }
    int max_count = 1;
    for (int v : counts) max_count = std::max(max_count, v);

    Canvas c(470, 240);
    const Scale x{lo, hi, 52, 450};
    const Scale y{0, static_cast<double>(max_count), 200, 14};
    axes(c, x, y, "decision score mu", "heads per bin", 4, 4);
    const double bw = (x.p1 - x.p0) / n_bins;
    for (int b = 0; b < n_bins; ++b) {
        const std::string fill =
            shade[b] < 0 ? "#bbb" : svg::ramp(shade[b], "#c2504d", "#3e9651");
        c.rect(x.p0 + bw * b, y(counts[b]), bw - 1, y.p0 - y(counts[b]), fill);
        c.tooltip("mu in [" + fmt(lo + (hi - lo) * b / n_bins) + ", " +
                  fmt(lo + (hi - lo) * (b + 1) / n_bins) + "]: " + std::to_string(counts[b]) +
                  " heads" +
                  (shade[b] < 0 ? std::string(", never removed")
                                : ", rel acc when removed " + fmt(shade[b])));
    }
    std::string html = c.str();

    Series curve{"relative accuracy", {}, {}};
    const double total = merged.mu.size();
    for (const auto& st : steps) {
        curve.xs.push_back(st.at("heads_removed").get<double>() / total);
        curve.ys.push_back(st.at("relative_accuracy").get<double>());
    }
    html += line_chart({curve}, "fraction of heads removed (center-out)", "relative accuracy",
                       0.0, 1.05);
    html += "<p>sweep on subtask " + std::to_string(steps[0].at("subtask").get<int>()) + ", " +
            std::to_string(steps[0].at("n_examples").get<int>()) +
            " examples; gray bins were never removed, removed bins are shaded red (accuracy "
            "lost) to green (accuracy kept)</p>\n";
    return html;
}

std::string fig_probe_depth(const fs::path& dir) {
    require_file(dir, "probes.tsv");
    const auto rep = probes::load_report(dir / "probes.tsv");
    if (rep.cells.empty()) throw std::runtime_error("probes.tsv has no cells");
    std::vector<int> shots;
    for (const auto& cell : rep.cells)
        if (std::find(shots.begin(), shots.end(), cell.shot) == shots.end())
            shots.push_back(cell.shot);
    std::sort(shots.begin(), shots.end());
    std::vector<Series> series;
    for (int s : shots) {
        Series ser{std::to_string(s) + "-shot", {}, {}};
        for (const auto& cell : rep.cells)
            if (cell.shot == s) {
                ser.xs.push_back(cell.layer);
                ser.ys.push_back(cell.accuracy);
            }
        series.push_back(ser);
    }
    std::vector<std::pair<std::string, double>> markers;
    if (auto controls = read_if_exists(dir / "probe_controls.json")) {
        const json cj = json::parse(*controls);
        markers.emplace_back("shuffled", cj.at("control_accuracy").get<double>());
        markers.emplace_back("linear", cj.at("linear_accuracy").get<double>());
    }
    std::string html = line_chart(series, "residual depth (0 = embeddings)", "probe accuracy",
                                  0.0, 1.0, probes::kChanceLo, probes::kChanceHi, markers);
    html += "<p>arch " + rep.arch + "; " + rep.read_point +
            "; shaded band = chance for the balanced 3-way task</p>\n";
    return html;
}

std::string fig_heatmaps(const fs::path& dir) {
    require_file(dir, "scores.tsv");
    const auto tables = headscore::load_tables(dir / "scores.tsv");
    std::string html;
    for (const auto& [kind, title] :
         std::vector<std::pair<std::string, std::string>>{{"decision", "decision mu (merged)"},
                                                          {"copy", "copy mu (merged)"},
                                                          {"induction", "induction mu"}}) {
        const auto& t = find_table(tables, kind, -1);
        html += heatmap(title, t.n_layers, t.n_heads, t.mu);
    }
    return html;
}

std::string fig_scatter(const fs::path& dir) {
    require_file(dir, "scores.tsv");
    const auto tables = headscore::load_tables(dir / "scores.tsv");
    const auto& dec = find_table(tables, "decision", -1);
    const auto& cop = find_table(tables, "copy", -1);
    const auto& ind = find_table(tables, "induction", -1);
    std::vector<std::string> tips;
    for (int l = 0; l < dec.n_layers; ++l)
        for (int h = 0; h < dec.n_heads; ++h)
            tips.push_back("head " + std::to_string(l) + "-" + std::to_string(h));
    return scatter("decision mu", "copy mu", dec.mu, cop.mu, tips) +
           scatter("decision mu", "induction mu", dec.mu, ind.mu, tips);
}

std::string fig_attention(const fs::path& dir) {
    const json aj = json::parse(require_file(dir, "attention.json"));
    const auto& seg = aj.at("segments");
    const int q_begin = seg.at("question")[0].get<int>();
    const int g_begin = seg.at("generated")[0].get<int>();
    std::string html;
    for (const auto& pj : aj.at("profiles")) {
        const auto prof = pj.at("profile").get<std::vector<double>>();
        double hi = 1e-9;
        for (double v : prof) hi = std::max(hi, v);
        Canvas c(470, 120);
        const Scale x{0, static_cast<double>(prof.size() - 1), 52, 456};
        const Scale y{0, hi, 96, 10};
        c.line(x.p0, y.p0, x.p1, y.p0, "#888");
        std::vector<double> px, py;
        for (std::size_t i = 0; i < prof.size(); ++i) {
            px.push_back(x(static_cast<double>(i)));
            py.push_back(y(prof[i]));
        }
        c.polyline(px, py, color(0), 1.0);
        c.line(x(q_begin), y.p0, x(q_begin), y.p1, "#c2504d", 0.8);
        c.line(x(g_begin), y.p0, x(g_begin), y.p1, "#3e9651", 0.8);
        c.text(x(q_begin) + 2, 18, "question", 8, "start", "#c2504d");
        c.text(x(g_begin) + 2, 18, "generated", 8, "start", "#3e9651");
        c.text(56, 10, "subtask " + std::to_string(pj.at("subtask").get<int>()) + " (" +
                           pj.at("kind").get<std::string>() + "), mean attention from position " +
                           std::to_string(pj.at("query").get<int>()),
               9);
        html += c.str();
    }
    return html;
}

std::string fig_flow_tree(const fs::path& dir) {
    const json fj = json::parse(require_file(dir, "flowtree.json"));
    const json& tree = fj.at("tree");
    const auto& nodes = tree.at("nodes");
    if (nodes.empty()) throw std::runtime_error("flow tree has no nodes");

    // group nodes by layer, highest layer on top; x order by node index
    std::vector<int> order(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) order[i] = static_cast<int>(i);
    std::vector<int> layers;
    for (const auto& n : nodes)
        if (std::find(layers.begin(), layers.end(), n.at("layer").get<int>()) == layers.end())
            layers.push_back(n.at("layer").get<int>());
    std::sort(layers.rbegin(), layers.rend());

    const double row_h = 64, node_w = 150, node_h = 30, gap = 16;
    std::size_t widest = 0;
    std::vector<std::pair<double, double>> pos(nodes.size());
    for (std::size_t li = 0; li < layers.size(); ++li) {
        std::size_t col = 0;
        for (std::size_t i = 0; i < nodes.size(); ++i)
            if (nodes[i].at("layer").get<int>() == layers[li]) {
                pos[i] = {16 + static_cast<double>(col) * (node_w + gap), 30 + row_h * li};
                ++col;
            }
        widest = std::max(widest, col);
    }
    Canvas c(32 + widest * (node_w + gap), 40 + row_h * layers.size());
    for (std::size_t i = 0; i < nodes.size(); ++i)
        for (const auto& ch : nodes[i].at("children")) {
            const auto& [cx, cy] = pos[ch.get<int>()];
            c.line(pos[i].first + node_w / 2, pos[i].second + node_h, cx + node_w / 2, cy, "#999",
                   0.9);
        }
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const auto& n = nodes[i];
        const bool root = std::find(tree.at("roots").begin(), tree.at("roots").end(), json(i)) !=
                          tree.at("roots").end();
        c.rect(pos[i].first, pos[i].second, node_w, node_h, root ? "#dcebf7" : "#f4f4f4",
               "class=\"fnode\" stroke=\"#777\"");
        c.tooltip("info_prob " + fmt(n.at("info_prob").get<double>()) +
                  (n.at("children_truncated").get<bool>() ? ", children truncated" : ""));
        c.text(pos[i].first + 5, pos[i].second + 19, n.at("label").get<std::string>(), 10);
    }
    std::string html = c.str();
    html += "<p>subtask " + std::to_string(fj.at("subtask").get<int>()) + " (" +
            fj.at("kind").get<std::string>() + "), answer \"" +
            svg::escape(fj.at("answer_word").get<std::string>()) +
            "\"; label format layer-head&lt;source token&gt;source position&lt;written "
            "token&gt;; shaded boxes are answer writers</p>\n";
    return html;
}

std::string fig_writer_depth(const fs::path& dir) {
    const json dj = json::parse(require_file(dir, "depth_report.json"));
    const auto& wd = dj.at("writer_depth");
    const auto all = wd.at("all").get<std::vector<double>>();
    const int L = static_cast<int>(all.size());
    const char* kinds[] = {"decision", "copy", "induction"};
    const double gw = 10, group = gw * 3 + 10;
    Canvas c(64 + group * L, 210);
    double hi = 1;
    for (const char* k : kinds)
        for (double v : wd.at(k).get<std::vector<double>>()) hi = std::max(hi, v);
    const Scale y{0, hi, 176, 12};
    c.line(52, y.p0, 58 + group * L, y.p0, "#888");
    for (int ki = 0; ki < 3; ++ki) {
        const auto vals = wd.at(kinds[ki]).get<std::vector<double>>();
        for (int l = 0; l < L; ++l) {
            const double x = 58 + group * l + gw * ki;
            c.rect(x, y(vals[l]), gw - 2, y.p0 - y(vals[l]), color(ki));
            c.tooltip(std::string(kinds[ki]) + " layer " + std::to_string(l) + ": " +
                      fmt(vals[l]));
        }
        c.text(58 + 80.0 * ki, 12, kinds[ki], 9, "start", color(ki));
    }
    for (int l = 0; l < L; ++l)
        c.text(58 + group * l + group / 2 - 5, 190, std::to_string(l), 9, "middle");
    c.text(52 + group * L / 2, 204, "layer of answer-writing head", 10, "middle");
    return c.str() + "<p>writer occurrences over " +
           std::to_string(dj.at("examples").get<int>()) +
           " held-out examples, ten subtasks each</p>\n";
}

std::string fig_abidance_depth(const fs::path& dir) {
    const json dj = json::parse(require_file(dir, "depth_report.json"));
    const auto ab = dj.at("abidance_depth").get<std::vector<double>>();
    Series s{"mean context abidance", {}, {}};
    for (std::size_t l = 0; l < ab.size(); ++l) {
        s.xs.push_back(static_cast<double>(l));
        s.ys.push_back(ab[l]);
    }
    return line_chart({s}, "layer", "context abidance", 0.0, 1.0);
}

std::string fig_sources(const fs::path& dir) {
    const json dj = json::parse(require_file(dir, "depth_report.json"));
    std::string html = "<table><tr><th>subtask</th><th>kind</th><th>few-shot</th>"
                       "<th>question</th><th>generated</th></tr>\n";
    const char* segs[] = {"fewshot", "question", "generated"};
    const auto& rows = dj.at("sources_by_subtask");
    Canvas c(64 + 42.0 * 10, 210);
    double hi = 1;
    for (const auto& r : rows)
        for (const char* s : segs) hi = std::max(hi, r.at(s).get<double>());
    const Scale y{0, hi, 176, 12};
    c.line(52, y.p0, 60 + 42.0 * 10, y.p0, "#888");
    int idx = 0;
    for (const auto& r : rows) {
        html += "<tr><td>" + std::to_string(r.at("subtask").get<int>()) + "</td><td>" +
                r.at("kind").get<std::string>() + "</td>";
        for (int si = 0; si < 3; ++si) {
            const double v = r.at(segs[si]).get<double>();
            html += "<td>" + fmt(v) + "</td>";
            const double x = 58 + 42.0 * idx + 12.0 * si;
            c.rect(x, y(v), 10, y.p0 - y(v), color(si));
            c.tooltip(std::string(segs[si]) + " s" + std::to_string(r.at("subtask").get<int>()) +
                      ": " + fmt(v));
        }
        c.text(58 + 42.0 * idx + 18, 190, "s" + std::to_string(r.at("subtask").get<int>()), 9,
               "middle");
        html += "</tr>\n";
        ++idx;
    }
    html += "</table>\n";
    for (int si = 0; si < 3; ++si)
        c.text(58 + 90.0 * si, 12, segs[si], 9, "start", color(si));
    return c.str() + html;
}

} // namespace

std::string render_report(const fs::path& run_dir) {
    std::string title = "synthetic chain-of-thought lab";
    std::string digest = "unavailable";
    if (auto ini = read_if_exists(run_dir / "config.ini")) {
        digest = sha256_hex(*ini).substr(0, 16);
        title = inicfg::get_str(inicfg::parse_ini(*ini), "report", "title", title);
    }

    std::string html =
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" + svg::escape(title) +
        "</title>\n<style>\n"
        "body{font-family:monospace;max-width:1100px;margin:24px auto;padding:0 12px;color:#222}\n"
        "figure{margin:18px 0;border:1px solid #ddd;padding:10px;overflow-x:auto}\n"
        "figcaption{font-size:12px;color:#555;margin-bottom:6px}\n"
        ".notice{background:#fdf3d7;border:1px solid #e0c36a;padding:8px;font-size:12px}\n"
        "table{border-collapse:collapse;font-size:12px;margin:8px 0}\n"
        "td,th{border:1px solid #ccc;padding:3px 8px;text-align:right}\n"
        "h1{font-size:18px}h2{font-size:15px;margin-top:26px}\n"
        "p{font-size:12px;color:#444}\n"
        "</style></head><body>\n<h1>" +
        svg::escape(title) + "</h1>\n<p>run directory artifacts rendered in place; config digest <code>" +
        digest + "</code></p>\n";

    html += "<h2>task performance</h2>\n";
    try_figure(html, "per-subtask exact match", digest,
               [&] { return fig_subtask_accuracy(run_dir); });

    html += "<h2>head scores and pruning</h2>\n";
    try_figure(html, "decision-score distribution with center-out pruning", digest,
               [&] { return fig_prune_histogram(run_dir); });
    try_figure(html, "per-head score heatmaps", digest, [&] { return fig_heatmaps(run_dir); });
    try_figure(html, "per-head score scatter", digest, [&] { return fig_scatter(run_dir); });

    html += "<h2>probing</h2>\n";
    try_figure(html, "probe accuracy by depth", digest, [&] { return fig_probe_depth(run_dir); });

    html += "<h2>circuit tracing</h2>\n";
    try_figure(html, "attention profiles at answer positions", digest,
               [&] { return fig_attention(run_dir); });
    try_figure(html, "information flow tree", digest, [&] { return fig_flow_tree(run_dir); });

    html += "<h2>depth summaries</h2>\n";
    try_figure(html, "answer-writer depth distribution", digest,
               [&] { return fig_writer_depth(run_dir); });
    try_figure(html, "context abidance by depth", digest,
               [&] { return fig_abidance_depth(run_dir); });
    try_figure(html, "answer sources by subtask", digest, [&] { return fig_sources(run_dir); });

    html += "</body></html>\n";
    return html;
}

void write_report(const fs::path& run_dir) {
    write_file_atomic(run_dir / "report.html", render_report(run_dir));
}

} // namespace cotlab::report
