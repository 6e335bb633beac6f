#include "store/cli.hpp"

int main(int argc, char** argv) { return store::cli::run(argc, argv); }
