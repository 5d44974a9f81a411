#include "repronlp/batchstore.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <sstream>
#include <thread>

#include "repronlp/digest.hpp"
#include "repronlp/error.hpp"

namespace repronlp {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- manifest

const FeatureEntry& BatchManifest::feature(const std::string& feature_id) const {
  for (const auto& f : features) {
    if (f.feature_id == feature_id) return f;
  }
  throw StoreError("unknown feature '" + feature_id + "' (not in manifest)");
}

bool BatchManifest::has_feature(const std::string& feature_id) const {
  return std::any_of(features.begin(), features.end(), [&](const auto& f) { return f.feature_id == feature_id; });
}

std::vector<std::string> BatchManifest::split_order() const {
  std::vector<std::string> out;
  for (const auto& name : kSplitNames) {
    if (splits.count(name)) out.push_back(name);
  }
  return out;
}

std::vector<std::string> BatchManifest::split_docs(const std::string& split) const {
  auto sit = splits.find(split);
  if (sit == splits.end()) throw StoreError("store has no split '" + split + "'");
  const auto& docs = batch_docs.at(split);
  std::vector<std::string> out;
  for (const auto& id : sit->second) {
    const auto& ids = docs.at(id);
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

json BatchManifest::to_json() const {
  json j;
  j["format_version"] = format_version;
  j["batch_size"] = batch_size;
  j["chunk_size"] = chunk_size;
  j["classes"] = classes;
  j["config_fingerprint"] = config_fingerprint;
  j["corpus_digest"] = corpus_digest;
  auto feats = json::array();
  for (const auto& f : features) {
    json fj;
    fj["feature_id"] = f.feature_id;
    fj["name"] = f.name;
    fj["category"] = category_name(f.category);
    fj["dtype"] = dtype_name(f.dtype);
    fj["shape"] = f.shape;
    fj["fit_split"] = f.fit_split ? json(*f.fit_split) : json(nullptr);
    fj["fitted"] = f.fitted;
    feats.push_back(std::move(fj));
  }
  j["features"] = std::move(feats);
  j["splits"] = splits;
  j["batch_docs"] = batch_docs;
  return j;
}

std::string BatchManifest::serialize() const { return to_json().dump(1) + "\n"; }

BatchManifest BatchManifest::from_json(const json& j) {
  BatchManifest m;
  m.format_version = j.at("format_version").get<int>();
  if (m.format_version != kManifestFormatVersion) {
    throw StoreError("unsupported manifest format_version " + std::to_string(m.format_version));
  }
  m.batch_size = j.at("batch_size").get<std::size_t>();
  m.chunk_size = j.at("chunk_size").get<std::size_t>();
  m.classes = j.at("classes").get<std::vector<std::string>>();
  m.config_fingerprint = j.at("config_fingerprint").get<std::string>();
  m.corpus_digest = j.at("corpus_digest").get<std::string>();
  for (const auto& fj : j.at("features")) {
    FeatureEntry f;
    f.feature_id = fj.at("feature_id").get<std::string>();
    f.name = fj.at("name").get<std::string>();
    f.category = parse_category(fj.at("category").get<std::string>());
    f.dtype = parse_dtype(fj.at("dtype").get<std::string>());
    f.shape = fj.at("shape").get<std::vector<std::int64_t>>();
    if (!fj.at("fit_split").is_null()) f.fit_split = fj.at("fit_split").get<std::string>();
    f.fitted = fj.at("fitted");
    m.features.push_back(std::move(f));
  }
  m.splits = j.at("splits").get<std::map<std::string, std::vector<std::string>>>();
  m.batch_docs = j.at("batch_docs").get<std::map<std::string, std::map<std::string, std::vector<std::string>>>>();
  for (const auto& [split, ids] : m.splits) {
    auto it = m.batch_docs.find(split);
    if (it == m.batch_docs.end()) throw StoreError("manifest: no batch_docs for split '" + split + "'");
    for (const auto& id : ids) {
      if (!it->second.count(id)) throw StoreError("manifest: batch " + split + "/" + id + " has no doc list");
    }
  }
  return m;
}

std::string format_batch_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return buf;
}

// ---------------------------------------------------------------- encode

void fit_vectorizers(std::vector<Vectorizer>& vectorizers, const Corpus& corpus, const SplitAssignment& splits) {
  std::vector<const Document*> train;
  if (auto it = splits.splits.find("train"); it != splits.splits.end()) {
    for (const auto& id : it->second) train.push_back(&corpus.at(id));
  }
  for (auto& v : vectorizers) {
    if (v.fit_required() && train.empty()) {
      throw DataError("vectorizer '" + v.spec().name + "' must be fit but the train split is empty");
    }
    v.fit(train);
  }
}

namespace {

struct PlannedBatch {
  std::string split;
  std::string batch_id;
  std::vector<const Document*> docs;
};

void write_batch(const PlannedBatch& b, const std::vector<Vectorizer>& vectorizers,
                 const std::vector<std::string>& classes, const fs::path& store_path) {
  const fs::path dir = store_path / "batch" / b.split / b.batch_id;
  fs::create_directories(dir);
  for (const auto& v : vectorizers) write_tns(dir / (v.feature_id() + ".tns"), v.transform_batch(b.docs));

  std::vector<std::int64_t> labels;
  labels.reserve(b.docs.size());
  for (const Document* d : b.docs) {
    auto it = std::find(classes.begin(), classes.end(), d->label);
    if (it == classes.end()) throw DataError("document '" + d->doc_id + "' has undeclared label '" + d->label + "'");
    labels.push_back(it - classes.begin());
  }
  write_tns(dir / "labels.tns", Tensor::i64(std::move(labels)));
  write_tns(dir / "mask.tns", token_mask(b.docs));
}

}  // namespace

BatchManifest encode(const Corpus& corpus, const SplitAssignment& splits, const std::vector<Vectorizer>& vectorizers,
                     const EncodeOptions& options, const fs::path& store_path, const RngStream& root_stream) {
  if (options.batch_size == 0 || options.chunk_size == 0 || options.workers == 0) {
    throw ConfigError("encode: batch_size, chunk_size and workers must be positive");
  }
  if (fs::exists(store_path) && !fs::is_empty(store_path)) {
    throw StoreError("store directory " + store_path.string() + " is not empty");
  }
  if (splits.corpus_digest != corpus.digest()) throw DataError("corpus digest mismatch between corpus and splits");
  for (const auto& v : vectorizers) {
    if (!v.ready()) throw DataError("vectorizer '" + v.spec().name + "' is not fitted");
  }

  BatchManifest manifest;
  manifest.batch_size = options.batch_size;
  manifest.chunk_size = options.chunk_size;
  manifest.classes = options.class_names;
  manifest.config_fingerprint = options.config_fingerprint;
  manifest.corpus_digest = corpus.digest();
  for (const auto& v : vectorizers) {
    const auto d = v.descriptor();
    FeatureEntry f;
    f.feature_id = d.feature_id;
    f.name = d.name;
    f.category = d.category;
    f.dtype = DType::f32;
    f.shape = d.output_shape;
    if (d.fit_required) f.fit_split = "train";
    f.fitted = v.fitted_state();
    manifest.features.push_back(std::move(f));
  }

  // Cut every split (canonical order) into batches; chunk indices run
  // across splits.
  std::vector<PlannedBatch> planned;
  for (const auto& split : kSplitNames) {
    auto it = splits.splits.find(split);
    if (it == splits.splits.end()) continue;
    const auto& ids = it->second;
    auto& batch_ids = manifest.splits[split];
    auto& docs_map = manifest.batch_docs[split];
    for (std::size_t start = 0, index = 0; start < ids.size(); start += options.batch_size, ++index) {
      PlannedBatch b{split, format_batch_id(index), {}};
      const auto end = std::min(ids.size(), start + options.batch_size);
      std::vector<std::string> doc_ids(ids.begin() + static_cast<std::ptrdiff_t>(start),
                                       ids.begin() + static_cast<std::ptrdiff_t>(end));
      for (const auto& id : doc_ids) b.docs.push_back(&corpus.at(id));
      batch_ids.push_back(b.batch_id);
      docs_map[b.batch_id] = std::move(doc_ids);
      planned.push_back(std::move(b));
    }
  }

  fs::create_directories(store_path);
  save_splits(splits, store_path);
  for (const auto& [split, ids] : manifest.splits) fs::create_directories(store_path / "batch" / split);

  const std::size_t chunk_count = (planned.size() + options.chunk_size - 1) / options.chunk_size;
  std::atomic<std::size_t> next_chunk{0};
  std::atomic<bool> abort{false};
  std::mutex err_mu;
  std::size_t err_chunk = chunk_count;
  std::exception_ptr err;

  auto worker = [&] {
    for (;;) {
      const std::size_t c = next_chunk.fetch_add(1);
      if (c >= chunk_count || abort) return;
      try {
        // Per-chunk stream for stochastic vectorizers.
        RngStream chunk_stream = root_stream.split("chunk/" + std::to_string(c));
        (void)chunk_stream;
        const std::size_t first = c * options.chunk_size;
        const std::size_t last = std::min(planned.size(), first + options.chunk_size);
        for (std::size_t i = first; i < last && !abort; ++i) {
          write_batch(planned[i], vectorizers, options.class_names, store_path);
        }
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (c < err_chunk) {
          err_chunk = c;
          err = std::current_exception();
        }
        abort = true;
      }
    }
  };

  const std::size_t n_threads = std::min(options.workers, std::max<std::size_t>(chunk_count, 1));
  {
    std::vector<std::jthread> pool;
    for (std::size_t i = 1; i < n_threads; ++i) pool.emplace_back(worker);
    worker();
  }
  if (err) std::rethrow_exception(err);

  write_file_atomic(store_path / "manifest.json", manifest.serialize());
  return manifest;
}

// ---------------------------------------------------------------- digest / inspect

std::string store_digest(const fs::path& store_path) {
  if (!fs::exists(store_path / "manifest.json")) {
    throw StoreError("no manifest.json in " + store_path.string() + " (store missing or incomplete)");
  }
  std::vector<std::pair<std::string, fs::path>> files;
  for (const auto& entry : fs::recursive_directory_iterator(store_path)) {
    if (entry.is_regular_file()) {
      files.emplace_back(fs::relative(entry.path(), store_path).generic_string(), entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  Sha256 h;
  for (const auto& [rel, full] : files) {
    h.update(rel);
    h.update(read_file_bytes(full));
  }
  return h.hex_digest();
}

namespace {

BatchManifest read_manifest(const fs::path& store_path, std::string* raw_out = nullptr) {
  const auto path = store_path / "manifest.json";
  if (!fs::exists(path)) throw StoreError("no manifest.json in " + store_path.string());
  std::string raw;
  try {
    raw = read_file_bytes(path);
  } catch (const DataError&) {
    throw StoreError("cannot read " + path.string());
  }
  try {
    auto m = BatchManifest::from_json(json::parse(raw));
    if (raw_out) *raw_out = std::move(raw);
    return m;
  } catch (const json::exception& e) {
    throw StoreError("corrupt manifest " + path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw StoreError("corrupt manifest " + path.string() + ": " + e.what());
  }
}

std::string shape_signature(const FeatureEntry& f) {
  std::string s = "[B";
  for (auto e : f.shape) s += "," + (e < 0 ? std::string("T") : std::to_string(e));
  return s + "]";
}

std::string describe_sizes(const std::vector<std::size_t>& sizes) {
  std::string out;
  std::size_t i = 0;
  while (i < sizes.size()) {
    std::size_t j = i;
    while (j < sizes.size() && sizes[j] == sizes[i]) ++j;
    if (!out.empty()) out += ", ";
    out += std::to_string(sizes[i]);
    if (j - i > 1) out += " x " + std::to_string(j - i);
    i = j;
  }
  return out;
}

}  // namespace

std::string inspect(const fs::path& store_path) {
  const auto m = read_manifest(store_path);
  std::map<std::string, std::uintmax_t> bytes_by_feature;
  for (const auto& [split, ids] : m.splits) {
    for (const auto& id : ids) {
      const auto dir = store_path / "batch" / split / id;
      for (const auto& f : m.features) bytes_by_feature[f.feature_id] += fs::file_size(dir / (f.feature_id + ".tns"));
      bytes_by_feature[kLabelsFeature] += fs::file_size(dir / "labels.tns");
      bytes_by_feature[kMaskFeature] += fs::file_size(dir / "mask.tns");
    }
  }

  std::ostringstream out;
  out << "format_version: " << m.format_version << "\n";
  out << "corpus_digest: " << m.corpus_digest << "\n";
  out << "config_fingerprint: " << m.config_fingerprint << "\n";
  out << "batch_size: " << m.batch_size << "\n";
  out << "chunk_size: " << m.chunk_size << "\n";
  out << "classes:";
  for (const auto& c : m.classes) out << " " << c;
  out << "\nsplits:\n";
  for (const auto& split : m.split_order()) {
    const auto& ids = m.splits.at(split);
    std::vector<std::size_t> sizes;
    std::size_t docs = 0;
    for (const auto& id : ids) {
      sizes.push_back(m.batch_docs.at(split).at(id).size());
      docs += sizes.back();
    }
    out << "  " << split << ": " << ids.size() << " batches, " << docs << " docs (sizes " << describe_sizes(sizes)
        << ")\n";
  }
  out << "features:\n";
  for (const auto& f : m.features) {
    out << "  " << f.feature_id << " (" << category_name(f.category) << ", " << f.name << "): " << dtype_name(f.dtype)
        << " " << shape_signature(f) << ", " << bytes_by_feature[f.feature_id] << " bytes";
    if (f.fit_split) out << ", fit on " << *f.fit_split;
    out << "\n";
  }
  out << "  labels: i64 [B], " << bytes_by_feature[kLabelsFeature] << " bytes\n";
  out << "  mask: f32 [B,T], " << bytes_by_feature[kMaskFeature] << " bytes\n";
  return out.str();
}

// ---------------------------------------------------------------- audit / cache

std::map<std::string, std::uint64_t> IoAudit::opens_by_file() const {
  std::lock_guard lock(mu_);
  return by_file_;
}

void IoAudit::record(const std::string& file_name, std::uint64_t bytes) {
  ++files_opened;
  bytes_read += bytes;
  std::lock_guard lock(mu_);
  ++by_file_[file_name];
}

void IoAudit::reset() {
  files_opened = 0;
  bytes_read = 0;
  std::lock_guard lock(mu_);
  by_file_.clear();
}

std::size_t TensorCache::resident_bytes() const {
  std::lock_guard lock(mu_);
  return resident_;
}

void TensorCache::insert_locked(const std::string& key, std::shared_ptr<const Tensor> t, std::size_t bytes) {
  while (resident_ + bytes > max_bytes_ && !lru_.empty()) {
    const auto victim = lru_.back();
    auto it = entries_.find(victim);
    resident_ -= it->second.bytes;
    entries_.erase(it);
    lru_.pop_back();
    ++evictions_;
  }
  lru_.push_front(key);
  entries_.emplace(key, Entry{std::move(t), bytes, lru_.begin()});
  resident_ += bytes;
}

// ---------------------------------------------------------------- decode

std::shared_ptr<BatchStore> BatchStore::open(const fs::path& store_path) {
  std::shared_ptr<BatchStore> s(new BatchStore());
  s->path_ = store_path;
  std::string raw;
  s->manifest_ = read_manifest(store_path, &raw);
  s->manifest_digest_ = sha256_hex(raw);
  return s;
}

std::shared_ptr<const Tensor> BatchStore::load_file(const std::string& split, const std::string& batch_id,
                                                    const std::string& feature_id, TensorCache* cache) const {
  const std::string rel = "batch/" + split + "/" + batch_id + "/" + feature_id + ".tns";
  auto load = [&]() -> std::pair<Tensor, std::size_t> {
    std::string bytes;
    try {
      bytes = read_file_bytes(path_ / rel);
    } catch (const DataError&) {
      throw StoreError("missing tensor file " + (path_ / rel).string());
    }
    audit_.record(feature_id + ".tns", bytes.size());
    return {decode_tns(bytes, rel), bytes.size()};
  };
  if (cache == nullptr) {
    auto [t, n] = load();
    return std::make_shared<const Tensor>(std::move(t));
  }
  return cache->get_or_load(rel, load);
}

Batch BatchStore::load_batch(const std::string& split, const std::string& batch_id,
                             const std::vector<std::string>& feature_set, TensorCache* cache) const {
  Batch b;
  b.split = split;
  b.batch_id = batch_id;
  b.doc_ids = manifest_.batch_docs.at(split).at(batch_id);
  const std::size_t n = b.doc_ids.size();
  const std::string where = split + "/" + batch_id;

  b.labels = *load_file(split, batch_id, kLabelsFeature, cache);
  if (b.labels.dtype() != DType::i64 || b.labels.shape() != std::vector<std::size_t>{n}) {
    throw StoreError(where + "/labels.tns: expected i64 [" + std::to_string(n) + "], found " + b.labels.shape_string());
  }
  for (auto l : b.labels.i64_data()) {
    if (l < 0 || static_cast<std::size_t>(l) >= manifest_.classes.size()) {
      throw StoreError(where + "/labels.tns: label index out of range");
    }
  }
  b.mask = *load_file(split, batch_id, kMaskFeature, cache);
  if (b.mask.dtype() != DType::f32 || b.mask.rank() != 2 || b.mask.extent(0) != n) {
    throw StoreError(where + "/mask.tns: bad shape " + b.mask.shape_string());
  }
  const std::size_t t_max = b.mask.extent(1);

  for (const auto& id : feature_set) {
    const auto& f = manifest_.feature(id);
    auto t = load_file(split, batch_id, id, cache);
    std::vector<std::size_t> expected{n};
    for (auto e : f.shape) expected.push_back(e < 0 ? t_max : static_cast<std::size_t>(e));
    if (t->dtype() != f.dtype || t->shape() != expected) {
      Tensor probe(f.dtype, expected);
      throw StoreError(where + "/" + id + ".tns: shape " + t->shape_string() + " does not match manifest " +
                       probe.shape_string());
    }
    b.tensors.emplace(id, *t);
  }
  return b;
}

BatchStream BatchStore::stream(const std::string& split, const std::vector<std::string>& feature_set,
                               std::shared_ptr<TensorCache> cache) const {
  for (const auto& id : feature_set) {
    if (!manifest_.has_feature(id)) throw StoreError("unknown feature '" + id + "' requested from store");
  }
  if (!manifest_.splits.count(split)) throw StoreError("store has no split '" + split + "'");
  return BatchStream(shared_from_this(), split, feature_set, std::move(cache));
}

BatchStream::BatchStream(std::shared_ptr<const BatchStore> store, std::string split,
                         std::vector<std::string> feature_set, std::shared_ptr<TensorCache> cache)
    : store_(std::move(store)),
      split_(std::move(split)),
      feature_set_(std::move(feature_set)),
      cache_(std::move(cache)),
      batch_ids_(store_->manifest().splits.at(split_)) {}

std::optional<Batch> BatchStream::next() {
  if (cursor_ >= batch_ids_.size()) return std::nullopt;
  return store_->load_batch(split_, batch_ids_[cursor_++], feature_set_, cache_.get());
}

BatchStream decode(const fs::path& store_path, const std::string& split, const std::vector<std::string>& feature_set,
                   std::shared_ptr<TensorCache> cache) {
  return BatchStore::open(store_path)->stream(split, feature_set, std::move(cache));
}

}  // namespace repronlp
