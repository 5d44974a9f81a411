#pragma once

// Synthetic experiment on disk with an encoded store.

#include <filesystem>
#include <string>

#include "repronlp/pipeline.hpp"
#include "repronlp/synthetic.hpp"
#include "support.hpp"

namespace testing_support {

struct Fixture {
  TempDir dir;
  repronlp::SyntheticFiles files;
  repronlp::Experiment exp;
  std::filesystem::path store;

  explicit Fixture(const std::string& tag, const repronlp::ConfigOverrides& overrides = {},
                   const repronlp::SyntheticSpec& spec = {})
      : dir(tag), files(repronlp::write_synthetic_fixture(dir.path(), spec)),
        exp(repronlp::Experiment::load(files.config, overrides)), store(dir / "store") {
    repronlp::encode_store(exp.plan, store, exp.plan.workers);
  }

  repronlp::Experiment with(const repronlp::ConfigOverrides& overrides) const {
    return repronlp::Experiment::load(files.config, overrides);
  }
};

}  // namespace testing_support
