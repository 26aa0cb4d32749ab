#include "cropcube/cli.hpp"

int main(int argc, char** argv) { return cropcube::run(argc, argv); }
