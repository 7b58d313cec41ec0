// SPDX-License-Identifier: Apache-2.0

#include "sag/harness.hpp"

int main(int argc, char** argv) {
  return sag::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
