#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "repronlp/corpus.hpp"
#include "repronlp/tensor.hpp"

namespace repronlp {

enum class FeatureCategory { token, document, multi_document, embedding };
enum class UnknownPolicy { error, ignore_row_zero };

std::string_view category_name(FeatureCategory c);
FeatureCategory parse_category(std::string_view name);

/// Ordered tag vocabulary for one annotation key; index order is part of
/// the value.
struct CategoryMap {
  std::string key;
  std::vector<std::string> categories;
  UnknownPolicy unknown_policy = UnknownPolicy::error;

  CategoryMap() = default;
  CategoryMap(std::string key, std::vector<std::string> categories, UnknownPolicy policy);

  std::optional<std::size_t> index_of(const std::string& tag) const;
  std::size_t size() const { return categories.size(); }

  /// Collects tags in first-seen order.
  static CategoryMap fit(std::string key, std::span<const Document* const> docs, UnknownPolicy policy);

  friend bool operator==(const CategoryMap& a, const CategoryMap& b) {
    return a.key == b.key && a.categories == b.categories && a.unknown_policy == b.unknown_policy;
  }

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

/// Smoothed idf: ln((1 + N) / (1 + df)) + 1.
struct TfidfModel {
  std::vector<std::string> vocabulary;
  std::vector<double> idf;
  std::size_t doc_count = 0;

  TfidfModel() = default;
  TfidfModel(std::vector<std::string> vocabulary, std::vector<double> idf, std::size_t doc_count);

  std::optional<std::size_t> index_of(const std::string& term) const;
  bool fitted() const { return doc_count > 0; }

  /// Vocabulary in first-seen order over `docs`.
  static TfidfModel fit(std::span<const Document* const> docs);

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

/// GloVe text format table. Out-of-vocabulary words map to zero rows.
struct EmbeddingTable {
  std::size_t dimension = 0;
  std::unordered_map<std::string, std::vector<float>> vectors;
  std::string source_digest;
  std::vector<std::string> warnings;

  const std::vector<float>* find(const std::string& word) const;
};

EmbeddingTable load_embeddings(const std::filesystem::path& path);
EmbeddingTable parse_embeddings(std::string_view text, std::string_view origin = "embeddings");

// Single-document transforms.
Tensor token_onehot(const Document& doc, const CategoryMap& map);
Tensor doc_tag_counts(const Document& doc, const CategoryMap& map);
Tensor doc_tfidf(const Document& doc, const TfidfModel& model);
Tensor multidoc_overlap(const Document& a, const Document& b, const CategoryMap& map);
Tensor embed_tokens(const Document& doc, const EmbeddingTable& table);

/// [T, D] followed by each [T, Ci] block in order -> [T, D + sum Ci].
/// `feature_ids` names the blocks in error messages.
Tensor concat_token_features(const Tensor& embedding, std::span<const Tensor> features,
                             std::span<const std::string> feature_ids = {});

enum class VectorizerKind { token_onehot, doc_tag_counts, doc_tfidf, multidoc_overlap, embedding };

std::string_view kind_name(VectorizerKind k);
VectorizerKind parse_kind(std::string_view name);
FeatureCategory category_of(VectorizerKind k);

struct VectorizerDescriptor {
  std::string name;
  FeatureCategory category = FeatureCategory::document;
  std::string feature_id;
  // -1 marks the variable token axis.
  std::vector<std::int64_t> output_shape;
  bool fit_required = false;
};

/// Configuration of one vectorizer before fitting.
struct VectorizerSpec {
  std::string name;
  std::string feature_id;
  VectorizerKind kind = VectorizerKind::doc_tfidf;
  std::string annotation;                       // tag-based kinds
  UnknownPolicy unknown_policy = UnknownPolicy::ignore_row_zero;
  std::vector<std::string> fixed_categories;    // empty => fit from train split
  std::filesystem::path embedding_path;         // embedding kind
  std::string embedding_source;                 // path as configured, recorded in the manifest
};

/// A configured vectorizer plus its fitted state. Immutable once fitted,
/// safe to share across encode workers.
class Vectorizer {
 public:
  explicit Vectorizer(VectorizerSpec spec);

  const VectorizerSpec& spec() const { return spec_; }
  const std::string& feature_id() const { return spec_.feature_id; }
  VectorizerKind kind() const { return spec_.kind; }
  FeatureCategory category() const { return category_of(spec_.kind); }
  bool fit_required() const;
  bool ready() const;

  /// Fits (tag maps, tf-idf) or loads (embeddings) the state. `docs` must be
  /// non-empty when fitting is required.
  void fit(std::span<const Document* const> docs);

  /// Feature width: categories, vocabulary size, or embedding dimension.
  std::size_t width() const;
  VectorizerDescriptor descriptor() const;

  /// Batch tensor: [B, T_max, W] zero-padded for token-axis kinds, [B, W]
  /// otherwise. Overlap pairs document i with document (i + 1) mod B.
  Tensor transform_batch(std::span<const Document* const> docs) const;

  nlohmann::json fitted_state() const;
  /// Restores state serialized by fitted_state(); embeddings are reloaded
  /// from `spec.embedding_path` and checked against the recorded digest.
  void restore_state(const nlohmann::json& state);

  const CategoryMap& category_map() const;
  const TfidfModel& tfidf() const;
  const EmbeddingTable& embeddings() const;

 private:
  VectorizerSpec spec_;
  std::variant<std::monostate, CategoryMap, TfidfModel, EmbeddingTable> state_;
};

/// [B, T_max] f32 mask, 1.0 at real tokens.
Tensor token_mask(std::span<const Document* const> docs);

}  // namespace repronlp
