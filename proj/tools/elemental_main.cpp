#include "elemental/pipeline.hpp"

int main(int argc, char** argv) { return elemental::cli_main(argc, argv); }
