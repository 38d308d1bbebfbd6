#include "skad/cli.hpp"

int main(int argc, char** argv) {
  skad::keep_heap_resident();
  return skad::run_cli(argc, argv);
}
