#include "dgsd/cli.hpp"

int main(int argc, char** argv) { return dgsd::cli::run(argc, argv); }
