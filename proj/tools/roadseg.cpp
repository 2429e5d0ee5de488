#include "roadseg/cli.hpp"

int main(int argc, char** argv) { return roadseg::cli::run(argc, argv); }
