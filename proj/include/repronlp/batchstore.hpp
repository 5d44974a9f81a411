#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "repronlp/corpus.hpp"
#include "repronlp/rng.hpp"
#include "repronlp/tensor.hpp"
#include "repronlp/vectorize.hpp"

namespace repronlp {

inline constexpr int kManifestFormatVersion = 1;
inline constexpr const char* kLabelsFeature = "labels";
inline constexpr const char* kMaskFeature = "mask";

struct FeatureEntry {
  std::string feature_id;
  std::string name;
  FeatureCategory category = FeatureCategory::document;
  DType dtype = DType::f32;
  std::vector<std::int64_t> shape;  // per-document signature, -1 = token axis
  std::optional<std::string> fit_split;
  nlohmann::json fitted;
};

/// The store's index. `batch_docs` is keyed by split, then batch_id; batch
/// ids restart at 000000 in every split.
struct BatchManifest {
  int format_version = kManifestFormatVersion;
  std::size_t batch_size = 0;
  std::size_t chunk_size = 0;
  std::vector<std::string> classes;
  std::vector<FeatureEntry> features;
  std::map<std::string, std::vector<std::string>> splits;
  std::map<std::string, std::map<std::string, std::vector<std::string>>> batch_docs;
  std::string config_fingerprint;
  std::string corpus_digest;

  const FeatureEntry& feature(const std::string& feature_id) const;
  bool has_feature(const std::string& feature_id) const;
  /// Splits in canonical train, validation, test order.
  std::vector<std::string> split_order() const;
  /// Doc ids of a split in batch order.
  std::vector<std::string> split_docs(const std::string& split) const;

  nlohmann::json to_json() const;
  std::string serialize() const;
  static BatchManifest from_json(const nlohmann::json& j);
};

std::string format_batch_id(std::size_t index);

struct EncodeOptions {
  std::size_t batch_size = 32;
  std::size_t chunk_size = 1;
  std::size_t workers = 1;
  std::vector<std::string> class_names;
  std::string config_fingerprint;
};

/// Fits every vectorizer that needs it on the train split, in order,
/// single-threaded. Loads embedding tables.
void fit_vectorizers(std::vector<Vectorizer>& vectorizers, const Corpus& corpus, const SplitAssignment& splits);

/// Writes batch/<split>/<batch_id>/<feature_id>.tns (+ labels, mask) in
/// parallel chunks, then splits.json, then manifest.json atomically.
/// Output bytes depend only on the inputs, never on `workers`.
BatchManifest encode(const Corpus& corpus, const SplitAssignment& splits, const std::vector<Vectorizer>& vectorizers,
                     const EncodeOptions& options, const std::filesystem::path& store_path,
                     const RngStream& root_stream);

/// SHA-256 over sorted relative paths, each followed by the file bytes.
std::string store_digest(const std::filesystem::path& store_path);

/// Human-readable composition report; byte-stable for a given store.
std::string inspect(const std::filesystem::path& store_path);

/// File-level read accounting for one opened store.
struct IoAudit {
  std::atomic<std::uint64_t> files_opened{0};
  std::atomic<std::uint64_t> bytes_read{0};

  std::map<std::string, std::uint64_t> opens_by_file() const;
  void record(const std::string& file_name, std::uint64_t bytes);
  void reset();

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::uint64_t> by_file_;
};

/// LRU tensor cache bounded by encoded file bytes. Entries larger than the
/// budget pass through uncached. Safe for concurrent readers; entries are
/// published only once fully loaded.
class TensorCache {
 public:
  explicit TensorCache(std::size_t max_bytes = std::numeric_limits<std::size_t>::max()) : max_bytes_(max_bytes) {}

  template <class Loader>
  std::shared_ptr<const Tensor> get_or_load(const std::string& key, Loader&& load);

  std::size_t max_bytes() const { return max_bytes_; }
  std::size_t resident_bytes() const;
  std::uint64_t hits() const { return hits_; }
  std::uint64_t misses() const { return misses_; }
  std::uint64_t evictions() const { return evictions_; }

 private:
  struct Entry {
    std::shared_ptr<const Tensor> tensor;
    std::size_t bytes;
    std::list<std::string>::iterator lru_pos;
  };

  void insert_locked(const std::string& key, std::shared_ptr<const Tensor> t, std::size_t bytes);

  std::size_t max_bytes_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, Entry> entries_;
  std::list<std::string> lru_;  // front = most recent
  std::size_t resident_ = 0;
  std::atomic<std::uint64_t> hits_{0}, misses_{0}, evictions_{0};
};

struct Batch {
  std::string split;
  std::string batch_id;
  std::vector<std::string> doc_ids;
  std::map<std::string, Tensor> tensors;
  Tensor labels;  // [B] i64 class indices
  Tensor mask;    // [B, T_max] f32

  std::size_t size() const { return doc_ids.size(); }
};

class BatchStream;

/// An opened, validated store.
class BatchStore : public std::enable_shared_from_this<BatchStore> {
 public:
  static std::shared_ptr<BatchStore> open(const std::filesystem::path& store_path);

  const BatchManifest& manifest() const { return manifest_; }
  const std::filesystem::path& path() const { return path_; }
  const std::string& manifest_digest() const { return manifest_digest_; }
  IoAudit& audit() const { return audit_; }

  /// Throws before yielding anything when a feature id is unknown.
  BatchStream stream(const std::string& split, const std::vector<std::string>& feature_set,
                     std::shared_ptr<TensorCache> cache = nullptr) const;

  Batch load_batch(const std::string& split, const std::string& batch_id, const std::vector<std::string>& feature_set,
                   TensorCache* cache) const;

 private:
  BatchStore() = default;
  std::shared_ptr<const Tensor> load_file(const std::string& split, const std::string& batch_id,
                                          const std::string& feature_id, TensorCache* cache) const;

  std::filesystem::path path_;
  BatchManifest manifest_;
  std::string manifest_digest_;
  mutable IoAudit audit_;
};

/// Batches of one split in manifest order.
class BatchStream {
 public:
  std::optional<Batch> next();
  std::size_t batch_count() const { return batch_ids_.size(); }
  const BatchStore& store() const { return *store_; }

 private:
  friend class BatchStore;
  BatchStream(std::shared_ptr<const BatchStore> store, std::string split, std::vector<std::string> feature_set,
              std::shared_ptr<TensorCache> cache);

  std::shared_ptr<const BatchStore> store_;
  std::string split_;
  std::vector<std::string> feature_set_;
  std::shared_ptr<TensorCache> cache_;
  std::vector<std::string> batch_ids_;
  std::size_t cursor_ = 0;
};

BatchStream decode(const std::filesystem::path& store_path, const std::string& split,
                   const std::vector<std::string>& feature_set, std::shared_ptr<TensorCache> cache = nullptr);

template <class Loader>
std::shared_ptr<const Tensor> TensorCache::get_or_load(const std::string& key, Loader&& load) {
  {
    std::lock_guard lock(mu_);
    auto it = entries_.find(key);
    if (it != entries_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second.lru_pos);
      ++hits_;
      return it->second.tensor;
    }
  }
  ++misses_;
  auto [tensor, bytes] = load();
  auto shared = std::make_shared<const Tensor>(std::move(tensor));
  if (bytes <= max_bytes_) {
    std::lock_guard lock(mu_);
    auto it = entries_.find(key);
    if (it != entries_.end()) return it->second.tensor;
    insert_locked(key, shared, bytes);
  }
  return shared;
}

}  // namespace repronlp
