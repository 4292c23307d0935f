#include <doctest.h>

#include <cmath>
#include <random>

#include "support/tmpdir.hpp"
#include "txcat/embed.hpp"
#include "txcat/synthgen.hpp"

using namespace txcat;
using namespace txcat::embed;

namespace {

EmbeddingConfig tiny_config() {
  EmbeddingConfig c;
  c.dim = 24;
  c.min_n = 3;
  c.max_n = 5;
  c.window = 4;
  c.negatives = 4;
  c.epochs = 6;
  c.min_count = 3;
  c.bucket_count = 5000;
  c.seed = 13;
  return c;
}

std::vector<txprep::NormalizedText> planted_sentences(int per_category, uint64_t seed) {
  return synthgen::make_planted_corpus(synthgen::default_category_vocab(), per_category, 4, 8,
                                       seed)
      .sentences;
}

// Hand-assembled model for query-path tests: two orthogonal-ish words plus a
// zeroed n-gram table.
EmbeddingModel planted_model() {
  EmbeddingModel model;
  model.config = tiny_config();
  model.config.dim = 3;
  model.vocab = {"alpha", "beta"};
  model.vocab_index = {{"alpha", 0}, {"beta", 1}};
  model.word_vectors.resize(3, 2);
  model.word_vectors.col(0) << 1.0f, 0.0f, 0.0f;
  model.word_vectors.col(1) << 0.8f, std::sqrt(1.0f - 0.64f), 0.0f;
  model.ngram_vectors = Eigen::MatrixXf::Zero(3, model.config.bucket_count);
  return model;
}

}  // namespace

TEST_CASE("training is bitwise deterministic in single-worker mode") {
  const auto corpus = planted_sentences(40, 3);
  const auto a = train_embedding(corpus, tiny_config());
  const auto b = train_embedding(corpus, tiny_config());
  REQUIRE(a.vocab == b.vocab);
  CHECK(a.word_vectors == b.word_vectors);
  CHECK(a.ngram_vectors == b.ngram_vectors);
}

TEST_CASE("co-occurring words embed closer than non-co-occurring ones") {
  std::vector<txprep::NormalizedText> corpus;
  // rent-family sentences and coffee sentences, never mixed
  for (int i = 0; i < 120; ++i) {
    corpus.push_back({{"rent", "rentpay", "rents", "due"}});
    corpus.push_back({{"rents", "rent", "rentpay", "monthly"}});
    corpus.push_back({{"coffee", "latte", "espresso", "beans"}});
  }
  auto config = tiny_config();
  config.epochs = 8;
  const auto model = train_embedding(corpus, config);
  const float same = cosine(vector(model, "rent"), vector(model, "rentpay"));
  const float cross = cosine(vector(model, "rent"), vector(model, "coffee"));
  CHECK(same > cross);
}

TEST_CASE("empty vocabulary after min_count is an error") {
  auto config = tiny_config();
  config.min_count = 1000;
  CHECK_THROWS_AS(train_embedding({{{"one", "sentence"}}}, config), DataError);
}

TEST_CASE("training loss falls across the first epoch") {
  const auto corpus = planted_sentences(60, 4);
  TrainStats stats;
  auto config = tiny_config();
  config.epochs = 2;
  train_embedding(corpus, config, &stats);
  REQUIRE(stats.first_epoch_front_loss > 0);
  CHECK(stats.first_epoch_back_loss < stats.first_epoch_front_loss);
}

TEST_CASE("vector lookup composes out-of-vocabulary words from n-grams") {
  const auto corpus = planted_sentences(40, 5);
  const auto model = train_embedding(corpus, tiny_config());

  SUBCASE("in-vocabulary word returns the stored column") {
    const int idx = model.vocab_index.at("rent");
    CHECK(vector(model, "rent") == Eigen::VectorXf(model.word_vectors.col(idx)));
  }
  SUBCASE("OOV word equals the mean of its n-gram slots") {
    const std::string word = "rentish";
    REQUIRE(!model.contains(word));
    const auto ids = subword_ids(word, model.config.min_n, model.config.max_n,
                                 model.config.bucket_count);
    REQUIRE(!ids.empty());
    Eigen::VectorXf expected = Eigen::VectorXf::Zero(model.config.dim);
    for (uint32_t g : ids) expected += model.ngram_vectors.col(static_cast<int>(g));
    expected /= static_cast<float>(ids.size());
    CHECK(vector(model, word).isApprox(expected));
  }
  SUBCASE("word too short for any n-gram maps to zero") {
    auto config = tiny_config();
    config.min_n = 8;
    config.max_n = 9;
    const auto coarse = train_embedding(planted_sentences(40, 6), config);
    REQUIRE(!coarse.contains("zq"));
    CHECK(vector(coarse, "zq").isZero());  // "<zq>" is shorter than min_n
  }
}

TEST_CASE("nearest neighbors rank by cosine with lexicographic ties") {
  EmbeddingModel model = planted_model();
  model.vocab = {"alpha", "beta", "dupe"};
  model.vocab_index = {{"alpha", 0}, {"beta", 1}, {"dupe", 2}};
  model.word_vectors.resize(3, 3);
  model.word_vectors.col(0) << 1.0f, 0.0f, 0.0f;
  model.word_vectors.col(1) << 0.0f, 1.0f, 0.0f;
  model.word_vectors.col(2) << 1.0f, 0.0f, 0.0f;  // duplicate of alpha

  SUBCASE("duplicate vector comes back with cosine 1") {
    const auto top = nearest_neighbors(model, "alpha", 1);
    REQUIRE(top.size() == 1);
    CHECK(top[0].first == "dupe");
    CHECK(top[0].second == doctest::Approx(1.0));
  }
  SUBCASE("k beyond vocabulary returns everything sorted") {
    const auto all = nearest_neighbors(model, "alpha", 10);
    REQUIRE(all.size() == 2);
    CHECK(all[0].first == "dupe");
    CHECK(all[1].first == "beta");
  }
}

TEST_CASE("planted clusters give majority same-category neighborhoods") {
  const auto planted =
      synthgen::make_planted_corpus(synthgen::default_category_vocab(), 80, 4, 8, 21);
  auto config = tiny_config();
  config.dim = 32;
  config.epochs = 8;
  const auto model = train_embedding(planted.sentences, config);
  int evaluated = 0, majority_ok = 0;
  for (const auto& [word, category] : planted.word_category) {
    if (!model.contains(word)) continue;
    ++evaluated;
    int same = 0;
    for (const auto& [neighbor, cos] : nearest_neighbors(model, word, 5))
      same += planted.word_category.count(neighbor) &&
              planted.word_category.at(neighbor) == category;
    majority_ok += same >= 3;
  }
  REQUIRE(evaluated >= 50);
  CHECK(static_cast<double>(majority_ok) / evaluated >= 0.8);
}

TEST_CASE("max word similarity picks the best token") {
  const EmbeddingModel model = planted_model();
  SUBCASE("sentence containing the anchor itself scores 1") {
    const Eigen::VectorXf anchor = vector(model, "alpha");
    CHECK(max_word_similarity(model, {{"alpha"}}, anchor) == doctest::Approx(1.0));
  }
  SUBCASE("empty sentence floors at -1") {
    const Eigen::VectorXf anchor = vector(model, "alpha");
    CHECK(max_word_similarity(model, {}, anchor) == doctest::Approx(-1.0));
  }
  SUBCASE("hand-planted cosines 0.3 and 0.8 give 0.8") {
    EmbeddingModel m = planted_model();
    m.vocab = {"low", "high"};
    m.vocab_index = {{"low", 0}, {"high", 1}};
    m.word_vectors.col(0) << 0.3f, std::sqrt(1.0f - 0.09f), 0.0f;
    m.word_vectors.col(1) << 0.8f, std::sqrt(1.0f - 0.64f), 0.0f;
    Eigen::VectorXf anchor(3);
    anchor << 1.0f, 0.0f, 0.0f;
    CHECK(max_word_similarity(m, {{"low", "high"}}, anchor) == doctest::Approx(0.8));
  }
}

TEST_CASE("cosine is bounded and zero vectors pin to 0") {
  std::mt19937_64 rng(8);
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  for (int iter = 0; iter < 500; ++iter) {
    Eigen::VectorXf a(10), b(10);
    for (int i = 0; i < 10; ++i) {
      a[i] = gauss(rng);
      b[i] = gauss(rng);
    }
    const float c = cosine(a, b);
    CHECK(std::abs(c) <= 1.0f + 1e-6f);
    CHECK(cosine(a, b) == doctest::Approx(cosine(b, a)));
  }
  CHECK(cosine(Eigen::VectorXf::Zero(4), Eigen::VectorXf::Ones(4)) == 0.0f);
}

TEST_CASE("model file round-trips bitwise and exports text") {
  testutil::TmpDir tmp("embed");
  const auto model = train_embedding(planted_sentences(30, 10), tiny_config());
  const std::string path = tmp.file("model.bin");
  save(model, path);
  const auto back = load(path);
  CHECK(back.vocab == model.vocab);
  CHECK(back.word_vectors == model.word_vectors);
  CHECK(back.ngram_vectors == model.ngram_vectors);
  CHECK(back.config.dim == model.config.dim);

  export_text(model, tmp.file("model.txt"));
  const std::string text = read_file(tmp.file("model.txt"));
  CHECK(text.find(model.vocab.front()) != std::string::npos);

  CHECK_THROWS_AS(load(tmp.file("model.txt")), DataError);
}
