#include "loopscope/cli.hpp"

int main(int argc, char** argv) { return loopscope::run_cli(argc, argv); }
