#include "jsqlab/cli.hpp"

int main(int argc, char** argv) { return jsq::cli::run(argc, argv); }
