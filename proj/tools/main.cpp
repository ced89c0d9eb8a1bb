#include "lookalike/cli.hpp"

int main(int argc, char** argv) { return lookalike::run_cli(argc, argv); }
