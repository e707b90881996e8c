#include "sketchdiff/cli.hpp"

int main(int argc, char** argv) { return sketchdiff::cli::run(argc, argv); }
