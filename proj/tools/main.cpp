#include "cli.hpp"

int main(int argc, char** argv) { return excir::cli::dispatch(argc, argv); }
