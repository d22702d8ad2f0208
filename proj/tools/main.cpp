#include "cli.hpp"

int main(int argc, char** argv) { return vmfnet::run_cli(argc, argv); }
