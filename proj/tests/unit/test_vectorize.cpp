#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "repronlp/error.hpp"
#include "repronlp/synthetic.hpp"
#include "repronlp/vectorize.hpp"
#include "support.hpp"

using namespace repronlp;
using testing_support::TempDir;

namespace {

Document make_doc(std::string id, std::vector<std::string> tokens) {
  Document d;
  d.doc_id = std::move(id);
  d.tokens = std::move(tokens);
  d.label = "x";
  return d;
}

Document make_doc(std::string id, std::vector<std::string> tokens, std::vector<std::string> tags) {
  auto d = make_doc(std::move(id), std::move(tokens));
  d.annotations["pos"] = std::move(tags);
  return d;
}

const std::vector<std::string> kCats{"DT", "NN", "VBD", "."};

CategoryMap pos_map(UnknownPolicy p = UnknownPolicy::error) { return CategoryMap("pos", kCats, p); }

std::vector<float> values(const Tensor& t) { return {t.f32_data().begin(), t.f32_data().end()}; }

std::vector<const Document*> ptrs(const std::vector<Document>& docs) {
  std::vector<const Document*> out;
  for (const auto& d : docs) out.push_back(&d);
  return out;
}

// Nested-loop tf-idf oracle in double precision.
std::vector<double> brute_tfidf(const Document& doc, const std::vector<Document>& fit_docs,
                                const std::vector<std::string>& vocab) {
  const double n = static_cast<double>(fit_docs.size());
  std::vector<double> out;
  for (const auto& term : vocab) {
    double df = 0;
    for (const auto& d : fit_docs) {
      bool present = false;
      for (const auto& tok : d.tokens) present = present || tok == term;
      if (present) df += 1;
    }
    double tf = 0;
    for (const auto& tok : doc.tokens) tf += tok == term ? 1 : 0;
    out.push_back(tf * (std::log((1 + n) / (1 + df)) + 1));
  }
  return out;
}

}  // namespace

TEST(CategoryMap, FitFirstSeenOrder) {
  std::vector<Document> docs{make_doc("a", {"x", "y", "z", "w"}, {"DT", "NN", "VBD", "DT"})};
  const auto m = CategoryMap::fit("pos", ptrs(docs), UnknownPolicy::error);
  EXPECT_EQ(m.categories, (std::vector<std::string>{"DT", "NN", "VBD"}));
  EXPECT_EQ(m.index_of("VBD"), 2u);
  EXPECT_FALSE(m.index_of("JJ").has_value());
}

TEST(CategoryMap, FitOnEmptyRejected) {
  EXPECT_THROW(CategoryMap::fit("pos", {}, UnknownPolicy::error), DataError);
  EXPECT_THROW(CategoryMap("pos", {"A", "A"}, UnknownPolicy::error), ConfigError);
}

TEST(Tfidf, FitHandExample) {
  std::vector<Document> docs{make_doc("1", {"a", "b"}), make_doc("2", {"a", "c"})};
  const auto m = TfidfModel::fit(ptrs(docs));
  EXPECT_EQ(m.vocabulary, (std::vector<std::string>{"a", "b", "c"}));
  ASSERT_EQ(m.idf.size(), 3u);
  EXPECT_NEAR(m.idf[0], 1.0, 1e-6);
  EXPECT_NEAR(m.idf[1], 1.405465, 1e-6);
  EXPECT_NEAR(m.idf[2], 1.405465, 1e-6);
  EXPECT_EQ(m.doc_count, 2u);
  const auto oracle = brute_tfidf(docs[0], docs, m.vocabulary);
  EXPECT_NEAR(oracle[1], std::log(1.5) + 1, 1e-12);
}

TEST(Tfidf, FitOnEmptyRejected) { EXPECT_THROW(TfidfModel::fit({}), DataError); }

TEST(Tfidf, TransformCountsTermsAndSkipsUnknown) {
  std::vector<Document> docs{make_doc("1", {"a", "b"}), make_doc("2", {"a", "c"})};
  const auto m = TfidfModel::fit(ptrs(docs));
  const auto v = values(doc_tfidf(make_doc("q", {"b", "b", "zzz", "a"}), m));
  ASSERT_EQ(v.size(), 3u);
  EXPECT_NEAR(v[0], 1.0, 1e-6);
  EXPECT_NEAR(v[1], 2 * 1.405465, 1e-6);
  EXPECT_EQ(v[2], 0.0f);
  EXPECT_THROW(doc_tfidf(docs[0], TfidfModel{}), DataError);
}

TEST(Tfidf, MatchesBruteForceOnSyntheticCorpus) {
  SyntheticSpec spec;
  spec.documents = 120;
  const auto corpus = parse_corpus(synthetic_corpus(spec));
  std::vector<Document> fit_docs(corpus.documents().begin(), corpus.documents().begin() + 80);
  const auto m = TfidfModel::fit(ptrs(fit_docs));
  for (const auto& d : corpus.documents()) {
    const auto got = values(doc_tfidf(d, m));
    const auto want = brute_tfidf(d, fit_docs, m.vocabulary);
    for (std::size_t i = 0; i < want.size(); ++i) ASSERT_NEAR(got[i], want[i], 1e-6) << d.doc_id << " term " << i;
  }
}

TEST(TokenOnehot, BoyExample) {
  const auto t = token_onehot(make_doc("s", {"The", "boy"}, {"DT", "NN"}), pos_map());
  EXPECT_EQ(t.shape(), (std::vector<std::size_t>{2, 4}));
  EXPECT_EQ(values(t), (std::vector<float>{1, 0, 0, 0, 0, 1, 0, 0}));
}

TEST(TokenOnehot, EmptyDoc) {
  const auto t = token_onehot(make_doc("e", {}, {}), pos_map());
  EXPECT_EQ(t.shape(), (std::vector<std::size_t>{0, 4}));
}

TEST(TokenOnehot, UnknownTagPolicies) {
  const auto d = make_doc("u", {"a", "b"}, {"XX", "NN"});
  EXPECT_EQ(values(token_onehot(d, pos_map(UnknownPolicy::ignore_row_zero))),
            (std::vector<float>{0, 0, 0, 0, 0, 1, 0, 0}));
  EXPECT_THROW(token_onehot(d, pos_map(UnknownPolicy::error)), DataError);
}

TEST(TokenOnehot, MissingAnnotationRejected) {
  EXPECT_THROW(token_onehot(make_doc("m", {"a"}), pos_map()), DataError);
}

TEST(TokenOnehot, RowsSumToOne) {
  const auto corpus = parse_corpus(synthetic_corpus({}));
  const auto docs = ptrs(corpus.documents());
  const auto m = CategoryMap::fit("pos", docs, UnknownPolicy::error);
  for (const auto& d : corpus.documents()) {
    const auto t = token_onehot(d, m);
    const auto c = m.size();
    for (std::size_t r = 0; r < d.tokens.size(); ++r) {
      float s = 0;
      for (std::size_t k = 0; k < c; ++k) s += t.f32_data()[r * c + k];
      ASSERT_EQ(s, 1.0f);
    }
  }
}

TEST(DocTagCounts, Examples) {
  EXPECT_EQ(values(doc_tag_counts(make_doc("a", {"x", "y", "z"}, {"NN", "NN", "VBD"}), pos_map())),
            (std::vector<float>{0, 2, 1, 0}));
  EXPECT_EQ(values(doc_tag_counts(make_doc("e", {}, {}), pos_map())), (std::vector<float>{0, 0, 0, 0}));
  EXPECT_EQ(values(doc_tag_counts(make_doc("u", {"x"}, {"ZZ"}), pos_map(UnknownPolicy::ignore_row_zero))),
            (std::vector<float>{0, 0, 0, 0}));
}

TEST(Overlap, MinCountExamples) {
  const auto a = make_doc("a", {"1", "2", "3"}, {"NN", "NN", "VBD"});
  const auto b = make_doc("b", {"1", "2"}, {"NN", "."});
  EXPECT_EQ(values(multidoc_overlap(a, b, pos_map())), (std::vector<float>{0, 1, 0, 0}));
  EXPECT_EQ(values(multidoc_overlap(a, a, pos_map())), values(doc_tag_counts(a, pos_map())));
  const auto c = make_doc("c", {"1"}, {"DT"});
  EXPECT_EQ(values(multidoc_overlap(a, c, pos_map())), (std::vector<float>{0, 0, 0, 0}));
  EXPECT_THROW(multidoc_overlap(a, make_doc("n", {"x"}), pos_map()), DataError);
}

TEST(Overlap, SymmetricOnSyntheticCorpus) {
  SyntheticSpec spec;
  spec.documents = 60;
  const auto corpus = parse_corpus(synthetic_corpus(spec));
  const auto m = CategoryMap::fit("pos", ptrs(corpus.documents()), UnknownPolicy::error);
  const auto& docs = corpus.documents();
  for (std::size_t i = 0; i < docs.size(); ++i) {
    for (std::size_t j = i; j < docs.size(); ++j) {
      ASSERT_EQ(multidoc_overlap(docs[i], docs[j], m), multidoc_overlap(docs[j], docs[i], m));
    }
  }
}

TEST(Embeddings, ParseDimension) {
  const auto t = parse_embeddings("the 1 2 3 4\nboy 0.5 0.5 0.5 0.5\nhit -1 0 1e-1 2\n");
  EXPECT_EQ(t.dimension, 4u);
  EXPECT_EQ(t.vectors.size(), 3u);
  EXPECT_EQ(*t.find("hit"), (std::vector<float>{-1, 0, 0.1f, 2}));
  EXPECT_EQ(t.find("The"), nullptr);
}

TEST(Embeddings, RaggedLineNamesLine) {
  try {
    parse_embeddings("a 1 2 3 4\nb 1 2 3\n", "glove.txt");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("glove.txt:2"), std::string::npos) << e.what();
  }
}

TEST(Embeddings, NonNumericRejected) {
  EXPECT_THROW(parse_embeddings("a 1 two\n"), DataError);
  EXPECT_THROW(parse_embeddings("a\n"), DataError);
}

TEST(Embeddings, DuplicateWordLaterWins) {
  const auto t = parse_embeddings("a 1 1\nb 2 2\na 3 3\n");
  EXPECT_EQ(*t.find("a"), (std::vector<float>{3, 3}));
  ASSERT_EQ(t.warnings.size(), 1u);
  EXPECT_NE(t.warnings[0].find("'a'"), std::string::npos);
}

TEST(Embeddings, LoadFromFileRecordsDigest) {
  TempDir dir("emb");
  testing_support::write_text(dir / "g.txt", "a 1 2\n");
  const auto t = load_embeddings(dir / "g.txt");
  EXPECT_EQ(t.source_digest, parse_embeddings("a 1 2\n").source_digest);
  EXPECT_THROW(load_embeddings(dir / "none.txt"), DataError);
}

TEST(EmbedTokens, LookupOovAndEmpty) {
  const auto table = parse_embeddings("the 1 2\nboy 3 4\n");
  EXPECT_EQ(values(embed_tokens(make_doc("a", {"boy", "the"}), table)), (std::vector<float>{3, 4, 1, 2}));
  const auto oov = embed_tokens(make_doc("b", {"The", "ball", "x"}), table);
  EXPECT_EQ(oov.shape(), (std::vector<std::size_t>{3, 2}));
  EXPECT_EQ(values(oov), std::vector<float>(6, 0.0f));
  EXPECT_EQ(embed_tokens(make_doc("c", {}), table).shape(), (std::vector<std::size_t>{0, 2}));
}

TEST(Concat, BlocksInOrder) {
  const auto e = Tensor::f32({2, 3}, {1, 2, 3, 4, 5, 6});
  const std::vector<Tensor> f{Tensor::f32({2, 4}, {7, 8, 9, 10, 11, 12, 13, 14})};
  const auto c = concat_token_features(e, f);
  EXPECT_EQ(c.shape(), (std::vector<std::size_t>{2, 7}));
  EXPECT_EQ(values(c), (std::vector<float>{1, 2, 3, 7, 8, 9, 10, 4, 5, 6, 11, 12, 13, 14}));
}

TEST(Concat, EmptyListIsIdentity) {
  const auto e = Tensor::f32({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(concat_token_features(e, {}), e);
}

TEST(Concat, RowMismatchNamesFeature) {
  const auto e = Tensor::f32({2, 3}, std::vector<float>(6, 0));
  const std::vector<Tensor> f{Tensor::f32({3, 4}, std::vector<float>(12, 0))};
  const std::vector<std::string> ids{"pos_onehot"};
  try {
    concat_token_features(e, f, ids);
    FAIL();
  } catch (const DataError& err) {
    EXPECT_NE(std::string(err.what()).find("pos_onehot"), std::string::npos) << err.what();
  }
}

TEST(Concat, AssociativeInBlockOrder) {
  const auto x = Tensor::f32({2, 1}, {1, 2});
  const auto y = Tensor::f32({2, 2}, {3, 4, 5, 6});
  const auto z = Tensor::f32({2, 3}, {7, 8, 9, 10, 11, 12});
  const std::vector<Tensor> yv{y};
  const auto xy = concat_token_features(x, yv);
  const std::vector<Tensor> zv{z};
  const std::vector<Tensor> yz{y, z};
  EXPECT_EQ(concat_token_features(xy, zv), concat_token_features(x, yz));
}

TEST(Vectorizer, DescriptorsAndBatchShapes) {
  TempDir dir("vec");
  testing_support::write_text(dir / "g.txt", "The 1 0\nboy 0 1\n");
  std::vector<Document> docs{make_doc("a", {"The", "boy", "hit"}, {"DT", "NN", "VBD"}),
                             make_doc("b", {"boy"}, {"NN"})};
  const auto dp = ptrs(docs);

  VectorizerSpec onehot{"pos_onehot", "pos_onehot", VectorizerKind::token_onehot, "pos"};
  VectorizerSpec counts{"pos_counts", "pos_counts", VectorizerKind::doc_tag_counts, "pos", UnknownPolicy::error,
                        kCats};
  VectorizerSpec overlap{"pos_overlap", "pos_overlap", VectorizerKind::multidoc_overlap, "pos"};
  VectorizerSpec tfidf{"tfidf", "tfidf", VectorizerKind::doc_tfidf};
  VectorizerSpec glove{"glove", "glove", VectorizerKind::embedding};
  glove.embedding_path = dir / "g.txt";

  std::vector<Vectorizer> vs;
  for (const auto& s : {onehot, counts, overlap, tfidf, glove}) vs.emplace_back(s);
  for (auto& v : vs) v.fit(dp);

  EXPECT_EQ(vs[0].descriptor().output_shape, (std::vector<std::int64_t>{-1, 3}));
  EXPECT_EQ(vs[0].descriptor().category, FeatureCategory::token);
  EXPECT_TRUE(vs[0].descriptor().fit_required);
  EXPECT_EQ(vs[1].descriptor().output_shape, (std::vector<std::int64_t>{4}));
  EXPECT_FALSE(vs[1].descriptor().fit_required);
  EXPECT_EQ(vs[2].descriptor().category, FeatureCategory::multi_document);
  EXPECT_EQ(vs[3].descriptor().output_shape, (std::vector<std::int64_t>{3}));
  EXPECT_EQ(vs[4].descriptor().output_shape, (std::vector<std::int64_t>{-1, 2}));
  EXPECT_EQ(vs[4].descriptor().category, FeatureCategory::embedding);

  // Batch outputs bind -1 to T_max and pad with zero rows.
  const auto oh = vs[0].transform_batch(dp);
  EXPECT_EQ(oh.shape(), (std::vector<std::size_t>{2, 3, 3}));
  EXPECT_EQ(values(oh), (std::vector<float>{1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 0, 0, 0, 0, 0, 0, 0}));
  EXPECT_EQ(vs[4].transform_batch(dp).shape(), (std::vector<std::size_t>{2, 3, 2}));
  EXPECT_EQ(vs[1].transform_batch(dp).shape(), (std::vector<std::size_t>{2, 4}));
  // Overlap pairs each document with its in-batch neighbour.
  EXPECT_EQ(values(vs[2].transform_batch(dp)), (std::vector<float>{0, 1, 0, 0, 1, 0}));

  const auto mask = token_mask(dp);
  EXPECT_EQ(values(mask), (std::vector<float>{1, 1, 1, 1, 0, 0}));
}

TEST(Vectorizer, FittedStateRoundTrip) {
  std::vector<Document> docs{make_doc("a", {"x", "y"}, {"DT", "NN"}), make_doc("b", {"y", "z"}, {"NN", "."})};
  for (auto kind : {VectorizerKind::token_onehot, VectorizerKind::doc_tfidf}) {
    VectorizerSpec s{"v", "v", kind, "pos"};
    Vectorizer fitted(s);
    fitted.fit(ptrs(docs));
    Vectorizer restored(s);
    restored.restore_state(nlohmann::json::parse(fitted.fitted_state().dump()));
    EXPECT_EQ(restored.transform_batch(ptrs(docs)), fitted.transform_batch(ptrs(docs)));
    EXPECT_EQ(restored.fitted_state(), fitted.fitted_state());
  }
}

TEST(Vectorizer, EmbeddingDigestChecked) {
  TempDir dir("vec");
  testing_support::write_text(dir / "g.txt", "a 1 2\n");
  VectorizerSpec s{"glove", "glove", VectorizerKind::embedding};
  s.embedding_path = dir / "g.txt";
  Vectorizer v(s);
  v.fit({});
  const auto state = v.fitted_state();
  testing_support::write_text(dir / "g.txt", "a 1 3\n");
  Vectorizer again(s);
  EXPECT_THROW(again.restore_state(state), DataError);
}

TEST(Vectorizer, FitOnEmptySplitRejected) {
  Vectorizer v(VectorizerSpec{"t", "t", VectorizerKind::doc_tfidf});
  EXPECT_THROW(v.fit({}), DataError);
}

TEST(Vectorizer, OutputsMatchDescriptorSignature) {
  const auto corpus = parse_corpus(synthetic_corpus({.documents = 40}));
  const auto dp = ptrs(corpus.documents());
  std::vector<Vectorizer> vs;
  vs.emplace_back(VectorizerSpec{"o", "o", VectorizerKind::token_onehot, "pos"});
  vs.emplace_back(VectorizerSpec{"c", "c", VectorizerKind::doc_tag_counts, "pos"});
  vs.emplace_back(VectorizerSpec{"t", "t", VectorizerKind::doc_tfidf});
  for (auto& v : vs) {
    v.fit(dp);
    const auto sig = v.descriptor().output_shape;
    for (std::size_t start = 0; start < dp.size(); start += 7) {
      const std::size_t n = std::min<std::size_t>(7, dp.size() - start);
      std::span<const Document* const> batch(dp.data() + start, n);
      const auto t = v.transform_batch(batch);
      ASSERT_EQ(t.rank(), sig.size() + 1);
      EXPECT_EQ(t.extent(0), n);
      EXPECT_EQ(static_cast<std::int64_t>(t.extent(t.rank() - 1)), sig.back());
      if (sig.front() == -1) {
        std::size_t t_max = 0;
        for (const auto* d : batch) t_max = std::max(t_max, d->tokens.size());
        EXPECT_EQ(t.extent(1), t_max);
      }
    }
  }
}
