#pragma once

// Deterministic two-class fixture: POS-annotated corpus, GloVe-format
// embeddings and a matching experiment config. Labels are recoverable from
// the token distribution.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

namespace repronlp {

struct SyntheticSpec {
  std::size_t documents = 500;
  std::size_t vocabulary = 200;
  std::size_t embedding_dim = 16;
  std::size_t oov_words = 10;  // highest-numbered words get no embedding
  std::uint64_t seed = 2024;
};

std::string synthetic_corpus(const SyntheticSpec& spec);
std::string synthetic_embeddings(const SyntheticSpec& spec);
std::string synthetic_config();

struct SyntheticFiles {
  std::filesystem::path corpus;
  std::filesystem::path embeddings;
  std::filesystem::path config;
};

/// Writes corpus.ndjson, glove.txt and experiment.conf into `dir`.
SyntheticFiles write_synthetic_fixture(const std::filesystem::path& dir, const SyntheticSpec& spec = {});

}  // namespace repronlp
