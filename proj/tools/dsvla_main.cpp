#include "dsvla/cli.hpp"

int main(int argc, char** argv) { return dsvla::cli::run(argc, argv); }
