#include "densconf/cli.hpp"

int main(int argc, char** argv) { return densconf::run_cli(argc, argv); }
