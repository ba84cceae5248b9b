/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "babverify/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  return babverify::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
