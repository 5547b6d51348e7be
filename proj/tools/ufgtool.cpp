#include "ufg/cli.hpp"

int main(int argc, char** argv) { return ufg::cli::run(argc, argv); }
