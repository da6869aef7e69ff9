#include "bopkit/cli.hpp"

int main(int argc, char** argv) { return bopkit::run_cli(argc, argv); }
