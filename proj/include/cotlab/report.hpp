#pragma once

// Static report rendering. One self-contained HTML page per run directory,
// with every figure drawn as inline SVG from the artifact files alone: the
// per-subtask accuracy bars, the score-distribution histogram with pruning
// shading, probe accuracy by depth, per-head score heatmaps and scatter,
// attention profiles at the answer positions, the information-flow tree, and
// the depth summaries (answer-writer depth, context abidance by layer,
// answer-source segments per subtask). Each caption carries the digest of the
// materialized config that produced the artifacts; a missing artifact skips
// its figure with a notice instead of failing. Rendering reads only artifact
// bytes, so identical artifacts give an identical page.

#include <filesystem>
#include <string>

namespace cotlab::report {

std::string render_report(const std::filesystem::path& run_dir);

// render_report written to <run_dir>/report.html (atomic)
void write_report(const std::filesystem::path& run_dir);

} // namespace cotlab::report
