#include "repronlp/vectorize.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "repronlp/digest.hpp"
#include "repronlp/error.hpp"

namespace repronlp {

using nlohmann::json;

std::string_view category_name(FeatureCategory c) {
  switch (c) {
    case FeatureCategory::token: return "token";
    case FeatureCategory::document: return "document";
    case FeatureCategory::multi_document: return "multi_document";
    case FeatureCategory::embedding: return "embedding";
  }
  return "?";
}

FeatureCategory parse_category(std::string_view name) {
  for (auto c : {FeatureCategory::token, FeatureCategory::document, FeatureCategory::multi_document,
                 FeatureCategory::embedding}) {
    if (category_name(c) == name) return c;
  }
  throw DataError("unknown feature category '" + std::string(name) + "'");
}

// ---------------------------------------------------------------- CategoryMap

CategoryMap::CategoryMap(std::string k, std::vector<std::string> cats, UnknownPolicy policy)
    : key(std::move(k)), categories(std::move(cats)), unknown_policy(policy) {
  for (std::size_t i = 0; i < categories.size(); ++i) {
    if (!index_.emplace(categories[i], i).second) {
      throw ConfigError("category map '" + key + "': duplicate category '" + categories[i] + "'");
    }
  }
}

std::optional<std::size_t> CategoryMap::index_of(const std::string& tag) const {
  auto it = index_.find(tag);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

CategoryMap CategoryMap::fit(std::string key, std::span<const Document* const> docs, UnknownPolicy policy) {
  if (docs.empty()) throw DataError("category map '" + key + "': cannot fit on an empty document sequence");
  std::vector<std::string> cats;
  std::set<std::string> seen;
  for (const Document* d : docs) {
    auto it = d->annotations.find(key);
    if (it == d->annotations.end()) {
      throw DataError("document '" + d->doc_id + "' has no annotation '" + key + "'");
    }
    for (const auto& tag : it->second) {
      if (seen.insert(tag).second) cats.push_back(tag);
    }
  }
  return CategoryMap(std::move(key), std::move(cats), policy);
}

// ---------------------------------------------------------------- TfidfModel

TfidfModel::TfidfModel(std::vector<std::string> vocab, std::vector<double> weights, std::size_t n)
    : vocabulary(std::move(vocab)), idf(std::move(weights)), doc_count(n) {
  if (idf.size() != vocabulary.size()) throw DataError("tfidf: idf length differs from vocabulary length");
  for (std::size_t i = 0; i < vocabulary.size(); ++i) {
    if (!index_.emplace(vocabulary[i], i).second) throw DataError("tfidf: duplicate term '" + vocabulary[i] + "'");
  }
}

std::optional<std::size_t> TfidfModel::index_of(const std::string& term) const {
  auto it = index_.find(term);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TfidfModel TfidfModel::fit(std::span<const Document* const> docs) {
  if (docs.empty()) throw DataError("tfidf: cannot fit on an empty document sequence");
  std::vector<std::string> vocab;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::size_t> df;
  for (const Document* d : docs) {
    std::set<std::size_t> present;
    for (const auto& tok : d->tokens) {
      auto [it, inserted] = index.emplace(tok, vocab.size());
      if (inserted) {
        vocab.push_back(tok);
        df.push_back(0);
      }
      present.insert(it->second);
    }
    for (auto i : present) ++df[i];
  }
  const double n = static_cast<double>(docs.size());
  std::vector<double> idf(vocab.size());
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    idf[i] = std::log((1.0 + n) / (1.0 + static_cast<double>(df[i]))) + 1.0;
  }
  return TfidfModel(std::move(vocab), std::move(idf), docs.size());
}

// ---------------------------------------------------------------- embeddings

const std::vector<float>* EmbeddingTable::find(const std::string& word) const {
  auto it = vectors.find(word);
  return it == vectors.end() ? nullptr : &it->second;
}

EmbeddingTable parse_embeddings(std::string_view text, std::string_view origin) {
  EmbeddingTable table;
  table.source_digest = sha256_hex(text);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  const std::string where(origin);
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(' ') == std::string_view::npos) continue;

    std::vector<std::string_view> fields;
    std::size_t f = 0;
    while (f < line.size()) {
      while (f < line.size() && line[f] == ' ') ++f;
      if (f >= line.size()) break;
      auto end = line.find(' ', f);
      if (end == std::string_view::npos) end = line.size();
      fields.push_back(line.substr(f, end - f));
      f = end;
    }
    const std::string word(fields.front());
    const std::size_t dim = fields.size() - 1;
    if (table.dimension == 0) {
      if (dim == 0) throw DataError(where + ":" + std::to_string(line_no) + ": no vector values");
      table.dimension = dim;
    } else if (dim != table.dimension) {
      throw DataError(where + ":" + std::to_string(line_no) + ": expected " + std::to_string(table.dimension) +
                      " values, found " + std::to_string(dim));
    }
    std::vector<float> vec(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      const auto field = fields[i + 1];
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), vec[i]);
      if (ec != std::errc() || ptr != field.data() + field.size()) {
        throw DataError(where + ":" + std::to_string(line_no) + ": non-numeric value '" + std::string(field) + "'");
      }
    }
    if (table.vectors.count(word) != 0) {
      table.warnings.push_back(where + ":" + std::to_string(line_no) + ": duplicate word '" + word +
                               "', later vector wins");
    }
    table.vectors[word] = std::move(vec);
  }
  return table;
}

EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  return parse_embeddings(read_file_bytes(path), path.string());
}

// ---------------------------------------------------------------- transforms

namespace {

const std::vector<std::string>& tags_of(const Document& doc, const std::string& key) {
  auto it = doc.annotations.find(key);
  if (it == doc.annotations.end()) {
    throw DataError("document '" + doc.doc_id + "' has no annotation '" + key + "'");
  }
  return it->second;
}

std::optional<std::size_t> lookup_tag(const Document& doc, const CategoryMap& map, const std::string& tag) {
  auto idx = map.index_of(tag);
  if (!idx && map.unknown_policy == UnknownPolicy::error) {
    throw DataError("document '" + doc.doc_id + "': unknown '" + map.key + "' tag '" + tag + "'");
  }
  return idx;
}

std::vector<std::size_t> tag_counts(const Document& doc, const CategoryMap& map) {
  std::vector<std::size_t> counts(map.size(), 0);
  for (const auto& tag : tags_of(doc, map.key)) {
    if (auto idx = lookup_tag(doc, map, tag)) ++counts[*idx];
  }
  return counts;
}

}  // namespace

Tensor token_onehot(const Document& doc, const CategoryMap& map) {
  const auto& tags = tags_of(doc, map.key);
  const std::size_t c = map.size();
  Tensor out(DType::f32, {tags.size(), c});
  auto data = out.f32_data();
  for (std::size_t t = 0; t < tags.size(); ++t) {
    if (auto idx = lookup_tag(doc, map, tags[t])) data[t * c + *idx] = 1.0f;
  }
  return out;
}

Tensor doc_tag_counts(const Document& doc, const CategoryMap& map) {
  const auto counts = tag_counts(doc, map);
  std::vector<float> v(counts.begin(), counts.end());
  return Tensor::f32(std::move(v));
}

Tensor doc_tfidf(const Document& doc, const TfidfModel& model) {
  if (!model.fitted()) throw DataError("tfidf: model is not fitted");
  std::vector<std::size_t> tf(model.vocabulary.size(), 0);
  for (const auto& tok : doc.tokens) {
    if (auto idx = model.index_of(tok)) ++tf[*idx];
  }
  std::vector<float> v(tf.size());
  for (std::size_t i = 0; i < tf.size(); ++i) v[i] = static_cast<float>(static_cast<double>(tf[i]) * model.idf[i]);
  return Tensor::f32(std::move(v));
}

Tensor multidoc_overlap(const Document& a, const Document& b, const CategoryMap& map) {
  const auto ca = tag_counts(a, map);
  const auto cb = tag_counts(b, map);
  std::vector<float> v(ca.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(std::min(ca[i], cb[i]));
  return Tensor::f32(std::move(v));
}

Tensor embed_tokens(const Document& doc, const EmbeddingTable& table) {
  const std::size_t d = table.dimension;
  Tensor out(DType::f32, {doc.tokens.size(), d});
  auto data = out.f32_data();
  for (std::size_t t = 0; t < doc.tokens.size(); ++t) {
    if (const auto* vec = table.find(doc.tokens[t])) std::copy(vec->begin(), vec->end(), data.begin() + t * d);
  }
  return out;
}

Tensor concat_token_features(const Tensor& embedding, std::span<const Tensor> features,
                             std::span<const std::string> feature_ids) {
  if (embedding.rank() != 2) throw DataError("concat: embedding must be rank 2, got " + embedding.shape_string());
  const std::size_t rows = embedding.extent(0);
  std::size_t width = embedding.extent(1);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& f = features[i];
    const std::string name = i < feature_ids.size() ? feature_ids[i] : "feature " + std::to_string(i);
    if (f.rank() != 2 || f.extent(0) != rows) {
      throw DataError("concat: '" + name + "' has shape " + f.shape_string() + ", expected " +
                      std::to_string(rows) + " rows");
    }
    width += f.extent(1);
  }
  Tensor out(DType::f32, {rows, width});
  auto dst = out.f32_data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t col = 0;
    auto copy_row = [&](const Tensor& src) {
      const std::size_t w = src.extent(1);
      auto s = src.f32_data().subspan(r * w, w);
      std::copy(s.begin(), s.end(), dst.begin() + r * width + col);
      col += w;
    };
    copy_row(embedding);
    for (const auto& f : features) copy_row(f);
  }
  return out;
}

// ---------------------------------------------------------------- Vectorizer

std::string_view kind_name(VectorizerKind k) {
  switch (k) {
    case VectorizerKind::token_onehot: return "token_onehot";
    case VectorizerKind::doc_tag_counts: return "doc_tag_counts";
    case VectorizerKind::doc_tfidf: return "doc_tfidf";
    case VectorizerKind::multidoc_overlap: return "multidoc_overlap";
    case VectorizerKind::embedding: return "embedding";
  }
  return "?";
}

VectorizerKind parse_kind(std::string_view name) {
  for (auto k : {VectorizerKind::token_onehot, VectorizerKind::doc_tag_counts, VectorizerKind::doc_tfidf,
                 VectorizerKind::multidoc_overlap, VectorizerKind::embedding}) {
    if (kind_name(k) == name) return k;
  }
  throw ConfigError("unknown vectorizer type '" + std::string(name) + "'");
}

FeatureCategory category_of(VectorizerKind k) {
  switch (k) {
    case VectorizerKind::token_onehot: return FeatureCategory::token;
    case VectorizerKind::doc_tag_counts:
    case VectorizerKind::doc_tfidf: return FeatureCategory::document;
    case VectorizerKind::multidoc_overlap: return FeatureCategory::multi_document;
    case VectorizerKind::embedding: return FeatureCategory::embedding;
  }
  return FeatureCategory::document;
}

namespace {

bool tag_based(VectorizerKind k) {
  return k == VectorizerKind::token_onehot || k == VectorizerKind::doc_tag_counts ||
         k == VectorizerKind::multidoc_overlap;
}

bool has_token_axis(VectorizerKind k) { return k == VectorizerKind::token_onehot || k == VectorizerKind::embedding; }

std::string_view policy_name(UnknownPolicy p) { return p == UnknownPolicy::error ? "error" : "ignore_row_zero"; }

UnknownPolicy parse_policy(std::string_view s) {
  if (s == "error") return UnknownPolicy::error;
  if (s == "ignore_row_zero") return UnknownPolicy::ignore_row_zero;
  throw DataError("unknown policy '" + std::string(s) + "'");
}

}  // namespace

Vectorizer::Vectorizer(VectorizerSpec spec) : spec_(std::move(spec)) {
  if (spec_.feature_id.empty()) throw ConfigError("vectorizer '" + spec_.name + "': empty feature_id");
  if (spec_.feature_id == "labels" || spec_.feature_id == "mask") {
    throw ConfigError("vectorizer '" + spec_.name + "': feature_id '" + spec_.feature_id + "' is reserved");
  }
  if (tag_based(spec_.kind) && spec_.annotation.empty()) {
    throw ConfigError("vectorizer '" + spec_.name + "': missing annotation key");
  }
  if (spec_.kind == VectorizerKind::embedding && spec_.embedding_path.empty()) {
    throw ConfigError("vectorizer '" + spec_.name + "': missing embedding path");
  }
  if (tag_based(spec_.kind) && !spec_.fixed_categories.empty()) {
    state_ = CategoryMap(spec_.annotation, spec_.fixed_categories, spec_.unknown_policy);
  }
}

bool Vectorizer::fit_required() const {
  if (spec_.kind == VectorizerKind::doc_tfidf) return true;
  return tag_based(spec_.kind) && spec_.fixed_categories.empty();
}

bool Vectorizer::ready() const { return !std::holds_alternative<std::monostate>(state_); }

void Vectorizer::fit(std::span<const Document* const> docs) {
  if (spec_.kind == VectorizerKind::embedding) {
    state_ = load_embeddings(spec_.embedding_path);
    return;
  }
  if (!fit_required()) return;
  if (docs.empty()) throw DataError("vectorizer '" + spec_.name + "': fit on empty document sequence");
  if (spec_.kind == VectorizerKind::doc_tfidf) state_ = TfidfModel::fit(docs);
  else state_ = CategoryMap::fit(spec_.annotation, docs, spec_.unknown_policy);
}

const CategoryMap& Vectorizer::category_map() const {
  if (auto* m = std::get_if<CategoryMap>(&state_)) return *m;
  throw DataError("vectorizer '" + spec_.name + "' has no fitted category map");
}

const TfidfModel& Vectorizer::tfidf() const {
  if (auto* m = std::get_if<TfidfModel>(&state_)) return *m;
  throw DataError("vectorizer '" + spec_.name + "' has no fitted tf-idf model");
}

const EmbeddingTable& Vectorizer::embeddings() const {
  if (auto* m = std::get_if<EmbeddingTable>(&state_)) return *m;
  throw DataError("vectorizer '" + spec_.name + "' has no loaded embedding table");
}

std::size_t Vectorizer::width() const {
  switch (spec_.kind) {
    case VectorizerKind::doc_tfidf: return tfidf().vocabulary.size();
    case VectorizerKind::embedding: return embeddings().dimension;
    default: return category_map().size();
  }
}

VectorizerDescriptor Vectorizer::descriptor() const {
  VectorizerDescriptor d;
  d.name = spec_.name;
  d.category = category();
  d.feature_id = spec_.feature_id;
  d.fit_required = fit_required();
  const auto w = static_cast<std::int64_t>(width());
  d.output_shape = has_token_axis(spec_.kind) ? std::vector<std::int64_t>{-1, w} : std::vector<std::int64_t>{w};
  return d;
}

Tensor Vectorizer::transform_batch(std::span<const Document* const> docs) const {
  const std::size_t b = docs.size();
  const std::size_t w = width();
  if (has_token_axis(spec_.kind)) {
    std::size_t t_max = 0;
    for (const Document* d : docs) t_max = std::max(t_max, d->tokens.size());
    Tensor out(DType::f32, {b, t_max, w});
    auto dst = out.f32_data();
    for (std::size_t i = 0; i < b; ++i) {
      Tensor one = spec_.kind == VectorizerKind::embedding ? embed_tokens(*docs[i], embeddings())
                                                           : token_onehot(*docs[i], category_map());
      auto src = one.f32_data();
      std::copy(src.begin(), src.end(), dst.begin() + i * t_max * w);
    }
    return out;
  }
  Tensor out(DType::f32, {b, w});
  auto dst = out.f32_data();
  for (std::size_t i = 0; i < b; ++i) {
    Tensor one;
    switch (spec_.kind) {
      case VectorizerKind::doc_tfidf: one = doc_tfidf(*docs[i], tfidf()); break;
      case VectorizerKind::doc_tag_counts: one = doc_tag_counts(*docs[i], category_map()); break;
      default: one = multidoc_overlap(*docs[i], *docs[(i + 1) % b], category_map()); break;
    }
    auto src = one.f32_data();
    std::copy(src.begin(), src.end(), dst.begin() + i * w);
  }
  return out;
}

json Vectorizer::fitted_state() const {
  json j;
  j["type"] = kind_name(spec_.kind);
  if (tag_based(spec_.kind)) {
    const auto& m = category_map();
    j["annotation"] = m.key;
    j["categories"] = m.categories;
    j["unknown_policy"] = policy_name(m.unknown_policy);
  } else if (spec_.kind == VectorizerKind::doc_tfidf) {
    const auto& m = tfidf();
    j["vocabulary"] = m.vocabulary;
    j["idf"] = m.idf;
    j["doc_count"] = m.doc_count;
  } else {
    const auto& t = embeddings();
    j["source"] = spec_.embedding_source.empty() ? spec_.embedding_path.generic_string() : spec_.embedding_source;
    j["dimension"] = t.dimension;
    j["source_digest"] = t.source_digest;
  }
  return j;
}

void Vectorizer::restore_state(const json& j) {
  try {
    if (parse_kind(j.at("type").get<std::string>()) != spec_.kind) {
      throw DataError("vectorizer '" + spec_.name + "': stored state has a different type");
    }
    if (tag_based(spec_.kind)) {
      state_ = CategoryMap(j.at("annotation").get<std::string>(), j.at("categories").get<std::vector<std::string>>(),
                           parse_policy(j.at("unknown_policy").get<std::string>()));
    } else if (spec_.kind == VectorizerKind::doc_tfidf) {
      state_ = TfidfModel(j.at("vocabulary").get<std::vector<std::string>>(), j.at("idf").get<std::vector<double>>(),
                          j.at("doc_count").get<std::size_t>());
    } else {
      auto table = load_embeddings(spec_.embedding_path);
      if (table.source_digest != j.at("source_digest").get<std::string>()) {
        throw DataError("embedding file " + spec_.embedding_path.string() + " changed since the store was encoded");
      }
      state_ = std::move(table);
    }
  } catch (const json::exception& e) {
    throw DataError("vectorizer '" + spec_.name + "': bad fitted state: " + e.what());
  }
}

Tensor token_mask(std::span<const Document* const> docs) {
  std::size_t t_max = 0;
  for (const Document* d : docs) t_max = std::max(t_max, d->tokens.size());
  Tensor out(DType::f32, {docs.size(), t_max});
  auto dst = out.f32_data();
  for (std::size_t i = 0; i < docs.size(); ++i) {
    std::fill_n(dst.begin() + i * t_max, docs[i]->tokens.size(), 1.0f);
  }
  return out;
}

}  // namespace repronlp
