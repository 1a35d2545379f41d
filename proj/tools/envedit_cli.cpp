#include "envedit/cli.hpp"

int main(int argc, char** argv) { return envedit::cli::run(argc, argv); }
