#include "pathprox/harness.hpp"

int main(int argc, char** argv) { return pathprox::run_cli(argc, argv); }
