#include "lutnet/cli.hpp"

int main(int argc, char** argv) { return lutnet::cli::run(argc, argv); }
