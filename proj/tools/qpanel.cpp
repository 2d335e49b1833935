#include "qpanel/cli.hpp"

#include <iostream>

int
main(int argc, char** argv)
{
  return qpanel::cli::run(argc, argv, std::cout, std::cerr);
}
