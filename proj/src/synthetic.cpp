#include "repronlp/synthetic.hpp"

#include <array>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "repronlp/digest.hpp"
#include "repronlp/rng.hpp"

namespace repronlp {

namespace {

constexpr std::array<const char*, 8> kTags = {"DT", "NN", "VBD", "JJ", "RB", "IN", "PRP", "."};

std::string word(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "w%03zu", i);
  return buf;
}

// Words [0, v/5) lean "pos", [v/5, 2v/5) lean "neg", the rest are neutral.
std::size_t class_words(const SyntheticSpec& spec) { return spec.vocabulary / 5; }

}  // namespace

std::string synthetic_corpus(const SyntheticSpec& spec) {
  RngStream r = RngStream::seed_root(spec.seed).split("corpus");
  const std::size_t cw = class_words(spec);
  const std::size_t neutral_begin = 2 * cw;
  std::string out;
  for (std::size_t d = 0; d < spec.documents; ++d) {
    const bool pos = r.next_f64_unit() < 0.5;
    const std::size_t len = d % 97 == 0 ? 0 : 4 + r.next_below(17);
    nlohmann::ordered_json doc;
    char id[16];
    std::snprintf(id, sizeof id, "doc%04zu", d);
    doc["id"] = id;
    std::vector<std::string> tokens, tags;
    for (std::size_t t = 0; t < len; ++t) {
      const double u = r.next_f64_unit();
      std::size_t w;
      if (u < 0.45) w = (pos ? 0 : cw) + r.next_below(cw);
      else if (u < 0.48) w = (pos ? cw : 0) + r.next_below(cw);
      else w = neutral_begin + r.next_below(spec.vocabulary - neutral_begin);
      tokens.push_back(word(w));
      tags.emplace_back(kTags[w % kTags.size()]);
    }
    doc["tokens"] = tokens;
    doc["annotations"] = {{"pos", tags}};
    doc["label"] = pos ? "pos" : "neg";
    out += doc.dump() + "\n";
  }
  return out;
}

std::string synthetic_embeddings(const SyntheticSpec& spec) {
  RngStream r = RngStream::seed_root(spec.seed).split("embeddings");
  const std::size_t cw = class_words(spec);
  std::string out;
  char buf[32];
  for (std::size_t w = 0; w + spec.oov_words < spec.vocabulary; ++w) {
    out += word(w);
    for (std::size_t k = 0; k < spec.embedding_dim; ++k) {
      double v = 0.5 * r.next_f64_normal();
      if (k == 0 && w < cw) v += 1.0;
      if (k == 0 && w >= cw && w < 2 * cw) v -= 1.0;
      std::snprintf(buf, sizeof buf, " %.6f", v);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

std::string synthetic_config() {
  return R"(# Synthetic two-class experiment.
[experiment]
seed = 1

[corpus]
path = corpus.ndjson

[splits]
proportions = train:0.8, validation:0.1, test:0.1
shuffle = true

[batch]
batch_size = 32
chunk_size = 2

[runtime]
workers = 2

[embeddings]
path = glove.txt

[vectorizer:glove]
type = embedding
table = ref:embeddings

[vectorizer:pos_onehot]
type = token_onehot
annotation = pos

[vectorizer:pos_counts]
type = doc_tag_counts
annotation = pos

[vectorizer:pos_overlap]
type = multidoc_overlap
annotation = pos

[vectorizer:tfidf]
type = doc_tfidf

[feature_set:embedding]
features = glove

[feature_set:full]
features = glove, pos_onehot, tfidf

[feature_set:all]
features = glove, pos_onehot, pos_counts, pos_overlap, tfidf

[model]
feature_set = ref:feature_set:full
hidden = 16
activation = relu
learning_rate = 0.1
epochs = 10
early_stop_patience = 0
classes = neg, pos
)";
}

SyntheticFiles write_synthetic_fixture(const std::filesystem::path& dir, const SyntheticSpec& spec) {
  std::filesystem::create_directories(dir);
  SyntheticFiles f{dir / "corpus.ndjson", dir / "glove.txt", dir / "experiment.conf"};
  write_file_atomic(f.corpus, synthetic_corpus(spec));
  write_file_atomic(f.embeddings, synthetic_embeddings(spec));
  write_file_atomic(f.config, synthetic_config());
  return f;
}

}  // namespace repronlp
