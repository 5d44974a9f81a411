// Writes the synthetic two-class fixture (corpus, embeddings, config).

#include <CLI11.hpp>

#include <iostream>

#include "repronlp/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate the synthetic fixture corpus"};
  std::string dir = "fixture";
  repronlp::SyntheticSpec spec;
  app.add_option("dir", dir, "output directory")->capture_default_str();
  app.add_option("--documents", spec.documents)->capture_default_str();
  app.add_option("--seed", spec.seed)->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  const auto files = repronlp::write_synthetic_fixture(dir, spec);
  std::cout << files.config.generic_string() << "\n";
  return 0;
}
