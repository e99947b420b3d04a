#include "rgmm/cli.hpp"

int main(int argc, char** argv) { return rgmm::cli::run(argc, argv); }
