#include "hierssl/cli.hpp"

int main(int argc, char** argv) { return hierssl::run_cli(argc, argv); }
