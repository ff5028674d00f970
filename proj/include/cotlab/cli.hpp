#pragma once

// Command-line front end. One verb per stage plus `all`; every verb loads the
// experiment config, optionally reseeds it, resolves the run directory under
// the artifact root (--out, else $COTLAB_ARTIFACTS, else ./artifacts) and
// executes through run_experiment. Exit status is nonzero exactly when a
// stage failed. Lives in the library so the argument handling is testable
// in-process.

namespace cotlab::cli {

int run(int argc, const char* const* argv);

} // namespace cotlab::cli
