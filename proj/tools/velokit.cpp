#include "velokit/cli.hpp"

int main(int argc, char** argv) { return velokit::cli::run(argc, argv); }
