#include "cli.hpp"

int main(int argc, char** argv) { return ifblend::run_cli(argc, argv); }
