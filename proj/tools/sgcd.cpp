#include "sgcd/cli.hpp"

int main(int argc, char** argv) { return sgcd::run_cli(argc, argv); }
