#include "moco/cli.hpp"

int main(int argc, char **argv) { return moco::cli::dispatch(argc, argv); }
