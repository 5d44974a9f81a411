#include "repronlp/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "repronlp/digest.hpp"
#include "repronlp/error.hpp"

namespace repronlp {

using nlohmann::json;

void Document::validate() const {
  for (const auto& [key, tags] : annotations) {
    if (tags.size() != tokens.size()) {
      throw DataError("document '" + doc_id + "': annotation '" + key + "' has " + std::to_string(tags.size()) +
                      " tags for " + std::to_string(tokens.size()) + " tokens");
    }
  }
}

Document parse_document(std::string_view json_line, bool require_label) {
  json j;
  try {
    j = json::parse(json_line);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("malformed JSON: ") + e.what());
  }
  Document d;
  try {
    d.doc_id = j.at("id").get<std::string>();
    d.tokens = j.at("tokens").get<std::vector<std::string>>();
    if (j.contains("annotations")) {
      d.annotations = j.at("annotations").get<std::map<std::string, std::vector<std::string>>>();
    }
    if (j.contains("label")) d.label = j.at("label").get<std::string>();
    else if (require_label) throw DataError("document '" + d.doc_id + "' has no label");
  } catch (const json::exception& e) {
    throw DataError(std::string("bad document fields: ") + e.what());
  }
  d.validate();
  return d;
}

Corpus::Corpus(std::vector<Document> docs, std::string digest) : docs_(std::move(docs)), digest_(std::move(digest)) {
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    if (!index_.emplace(docs_[i].doc_id, i).second) {
      throw DataError("duplicate doc_id '" + docs_[i].doc_id + "'");
    }
  }
}

const Document& Corpus::at(std::string_view doc_id) const {
  auto it = index_.find(std::string(doc_id));
  if (it == index_.end()) throw DataError("unknown doc_id '" + std::string(doc_id) + "'");
  return docs_[it->second];
}

bool Corpus::contains(std::string_view doc_id) const { return index_.count(std::string(doc_id)) != 0; }

Corpus parse_corpus(std::string_view bytes, std::string_view origin) {
  std::vector<Document> docs;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    auto nl = bytes.find('\n', pos);
    if (nl == std::string_view::npos) nl = bytes.size();
    auto line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    try {
      docs.push_back(parse_document(line));
    } catch (const DataError& e) {
      throw DataError(std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  try {
    return Corpus(std::move(docs), sha256_hex(bytes));
  } catch (const DataError& e) {
    throw DataError(std::string(origin) + ": " + e.what());
  }
}

Corpus load_corpus(const std::filesystem::path& path) {
  return parse_corpus(read_file_bytes(path), path.string());
}

void SplitSpec::validate() const {
  if (proportions.empty()) throw ConfigError("split spec: no splits given");
  std::set<std::string> seen;
  double total = 0.0;
  for (const auto& [name, p] : proportions) {
    if (std::find(kSplitNames.begin(), kSplitNames.end(), name) == kSplitNames.end()) {
      throw ConfigError("split spec: unknown split '" + name + "' (expected train, validation, test)");
    }
    if (!seen.insert(name).second) throw ConfigError("split spec: split '" + name + "' listed twice");
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("split spec: proportion for '" + name + "' must be in (0, 1]");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split spec: proportions sum to " + std::to_string(total));
}

const std::vector<std::string>& SplitAssignment::at(const std::string& split) const {
  auto it = splits.find(split);
  if (it == splits.end()) throw DataError("no split named '" + split + "'");
  return it->second;
}

SplitAssignment make_splits(const Corpus& corpus, const SplitSpec& spec, RngStream& stream) {
  spec.validate();
  const std::size_t n = corpus.size();
  if (n == 0) throw DataError("make_splits: corpus is empty");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (spec.shuffle) {
    for (std::size_t i = n - 1; i > 0; --i) {
      std::swap(order[i], order[stream.next_below(i + 1)]);
    }
  }

  // floor(n*p) per split; the tolerance keeps products like 100*0.29 from
  // flooring one short.
  std::vector<std::size_t> counts;
  std::size_t assigned = 0;
  for (const auto& [name, p] : spec.proportions) {
    const auto c = static_cast<std::size_t>(std::floor(static_cast<double>(n) * p + 1e-9));
    counts.push_back(c);
    assigned += c;
  }
  counts.front() += n - assigned;

  SplitAssignment out;
  out.corpus_digest = corpus.digest();
  std::size_t cursor = 0;
  for (std::size_t s = 0; s < spec.proportions.size(); ++s) {
    auto& ids = out.splits[spec.proportions[s].first];
    for (std::size_t k = 0; k < counts[s]; ++k) ids.push_back(corpus.documents()[order[cursor++]].doc_id);
  }
  return out;
}

std::string splits_to_json(const SplitAssignment& assignment) {
  json j;
  j["corpus_digest"] = assignment.corpus_digest;
  j["splits"] = json::object();
  for (const auto& [name, ids] : assignment.splits) j["splits"][name] = ids;
  return j.dump(2) + "\n";
}

SplitAssignment splits_from_json(std::string_view text, std::string_view origin) {
  try {
    const auto j = json::parse(text);
    SplitAssignment a;
    a.corpus_digest = j.at("corpus_digest").get<std::string>();
    a.splits = j.at("splits").get<std::map<std::string, std::vector<std::string>>>();
    std::set<std::string> seen;
    for (const auto& [name, ids] : a.splits) {
      for (const auto& id : ids) {
        if (!seen.insert(id).second) {
          throw DataError(std::string(origin) + ": doc_id '" + id + "' appears in more than one split position");
        }
      }
    }
    return a;
  } catch (const json::exception& e) {
    throw DataError(std::string(origin) + ": " + e.what());
  }
}

void save_splits(const SplitAssignment& assignment, const std::filesystem::path& store_path) {
  std::filesystem::create_directories(store_path);
  write_file_atomic(store_path / "splits.json", splits_to_json(assignment));
}

SplitAssignment load_splits(const std::filesystem::path& store_path, std::string_view expected_corpus_digest) {
  const auto path = store_path / "splits.json";
  if (!std::filesystem::exists(path)) throw StoreError("missing " + path.string());
  auto a = splits_from_json(read_file_bytes(path), path.string());
  if (a.corpus_digest != expected_corpus_digest) {
    throw DataError("corpus digest mismatch: " + path.string() + " was made from " + a.corpus_digest +
                    ", corpus is now " + std::string(expected_corpus_digest));
  }
  return a;
}

}  // namespace repronlp
