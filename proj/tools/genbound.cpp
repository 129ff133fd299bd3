#include "genbound/cli.hpp"

int main(int argc, char** argv) { return genbound::cli::run(argc, argv); }
