#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "repronlp/rng.hpp"

namespace repronlp {

struct Document {
  std::string doc_id;
  std::vector<std::string> tokens;
  std::map<std::string, std::vector<std::string>> annotations;
  std::string label;

  /// Throws DataError naming the doc and key unless every annotation list
  /// has one tag per token.
  void validate() const;
};

/// Parses one NDJSON corpus line (`label` optional for prediction input).
Document parse_document(std::string_view json_line, bool require_label = true);

class Corpus {
 public:
  Corpus() = default;
  Corpus(std::vector<Document> docs, std::string digest);

  const std::vector<Document>& documents() const { return docs_; }
  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }
  const std::string& digest() const { return digest_; }

  const Document& at(std::string_view doc_id) const;
  bool contains(std::string_view doc_id) const;

 private:
  std::vector<Document> docs_;
  std::string digest_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Newline-delimited JSON, one document per line; digest is SHA-256 of the
/// raw file bytes. Blank lines are skipped.
Corpus load_corpus(const std::filesystem::path& path);
Corpus parse_corpus(std::string_view bytes, std::string_view origin = "corpus");

inline const std::vector<std::string> kSplitNames = {"train", "validation", "test"};

struct SplitSpec {
  // Listed order matters: rounding remainders go to the first entry.
  std::vector<std::pair<std::string, double>> proportions;
  bool shuffle = true;

  void validate() const;
};

struct SplitAssignment {
  std::map<std::string, std::vector<std::string>> splits;
  std::string corpus_digest;

  const std::vector<std::string>& at(const std::string& split) const;
  friend bool operator==(const SplitAssignment&, const SplitAssignment&) = default;
};

/// `stream` should be split(root, "splits").
SplitAssignment make_splits(const Corpus& corpus, const SplitSpec& spec, RngStream& stream);

std::string splits_to_json(const SplitAssignment& assignment);
SplitAssignment splits_from_json(std::string_view text, std::string_view origin = "splits.json");

void save_splits(const SplitAssignment& assignment, const std::filesystem::path& store_path);
/// Refuses with "corpus digest mismatch" when the corpus changed since the
/// splits were made.
SplitAssignment load_splits(const std::filesystem::path& store_path, std::string_view expected_corpus_digest);

}  // namespace repronlp
