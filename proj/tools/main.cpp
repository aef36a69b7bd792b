#include "cli.hpp"

int
main(int argc, char** argv)
{
  return addlink::cli::run(argc, argv);
}
