#include "knnssd/cli.hpp"

int main(int argc, char** argv) { return knnssd::run_cli(argc, argv); }
