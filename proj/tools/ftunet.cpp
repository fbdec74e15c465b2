#include "ftunet/cli.hpp"

int main(int argc, char** argv) { return ftunet::cli::dispatch(argc, argv); }
