#include "microdesign/cli.hpp"

int main(int argc, char** argv) { return md::cli::run(argc, argv); }
