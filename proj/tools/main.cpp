#include "rgmdt/cli.hpp"

int main(int argc, char** argv) { return rgmdt::cli::run(argc, argv); }
