#include <iostream>

#include "lmvae/trainer/cli.hpp"

int main(int argc, char** argv) { return lmvae::trainer::cli(argc, argv, std::cout, std::cerr); }
