#include "stratalloc/cli.hpp"

int main(int argc, char** argv) { return stratalloc::cli::main(argc, argv); }
