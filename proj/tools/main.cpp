#include "lmmtc/cli.hpp"

int main(int argc, char** argv) { return lmmtc::cli::dispatch(argc, argv); }
