#include "bridgemark/cli.hpp"

int main(int argc, char** argv) { return bridgemark::cli::main(argc, argv); }
