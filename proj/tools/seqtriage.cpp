#include "seqtriage/cli.hpp"

int main(int argc, char** argv) { return seqtriage::cli::run(argc, argv); }
