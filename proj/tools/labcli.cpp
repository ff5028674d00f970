#include "cotlab/cli.hpp"

int main(int argc, char** argv) { return cotlab::cli::run(argc, argv); }
