#include "concner/cli.hpp"

int main(int argc, char** argv) { return concner::run_cli(argc, argv); }
