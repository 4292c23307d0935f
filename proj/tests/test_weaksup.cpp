#include <doctest.h>

#include <random>

#include "support/tmpdir.hpp"
#include "txcat/synthgen.hpp"
#include "txcat/weaksup.hpp"

using namespace txcat;
using namespace txcat::weaksup;

namespace {

txprep::TransactionGroup make_group(const std::string& account, const std::string& text,
                                    const std::vector<std::pair<std::string, std::string>>&
                                        date_amounts = {{"2024-01-01", "10.00"}}) {
  std::vector<txprep::Transaction> members;
  int i = 0;
  for (const auto& [date, amount] : date_amounts) {
    txprep::Transaction t;
    t.account_id = account;
    t.transaction_id = account + "-" + std::to_string(i++);
    t.date = parse_date(date);
    t.amount_cents = parse_amount_cents(amount);
    t.description = text;
    members.push_back(std::move(t));
  }
  txprep::TransactionGroup g;
  g.account_id = account;
  g.normalized_text.tokens = split_ws(text);
  g.members = members;
  g.series = txprep::build_sparse_series(members);
  g.aggregates = txprep::compute_aggregates(members);
  return g;
}

LabelingFunction pattern_lf(const std::string& name, const std::string& expr, int polarity = 1) {
  return {name, PatternParams{expr, polarity}};
}

embed::EmbeddingModel trained_model() {
  const auto planted =
      synthgen::make_planted_corpus(synthgen::default_category_vocab(), 60, 4, 8, 31);
  embed::EmbeddingConfig config;
  config.dim = 24;
  config.min_n = 3;
  config.max_n = 5;
  config.epochs = 6;
  config.min_count = 3;
  config.bucket_count = 5000;
  config.seed = 2;
  return embed::train_embedding(planted.sentences, config);
}

}  // namespace

TEST_CASE("pattern functions match on word boundaries") {
  const std::vector<txprep::TransactionGroup> groups = {make_group("a1", "afford payment"),
                                                        make_group("a2", "ford motor credit")};
  const auto matrix = apply_lfs(groups, {pattern_lf("ford", "ford")}, nullptr);
  CHECK(matrix.at(0, 0) == 0);  // "afford" must not trigger
  CHECK(matrix.at(1, 0) == 1);
}

TEST_CASE("frequency functions gate on count, gap window, and variation cap") {
  FrequencyParams monthly;
  monthly.gap_lo = 27;
  monthly.gap_hi = 34;
  monthly.min_count = 3;
  monthly.cv_cap = 0.2;
  monthly.polarity = 1;
  const LabelingFunction lf{"monthly", monthly};

  SUBCASE("monthly dates vote positive") {
    const auto g = make_group("a1", "rent pay", {{"2023-01-01", "1200.00"},
                                                 {"2023-02-01", "1200.00"},
                                                 {"2023-03-01", "1200.00"}});
    REQUIRE(*g.aggregates.mean_gap_days == doctest::Approx(29.5));  // gaps 31, 28
    const auto matrix = apply_lfs({g}, {lf}, nullptr);
    CHECK(matrix.at(0, 0) == 1);
  }
  SUBCASE("too few members abstains") {
    const auto g = make_group("a1", "rent pay", {{"2024-01-01", "1200.00"},
                                                 {"2024-02-01", "1200.00"}});
    CHECK(apply_lfs({g}, {lf}, nullptr).at(0, 0) == 0);
  }
  SUBCASE("gap outside the window abstains") {
    const auto g = make_group("a1", "rent pay", {{"2024-01-01", "1200.00"},
                                                 {"2024-01-11", "1200.00"},
                                                 {"2024-01-21", "1200.00"}});
    CHECK(apply_lfs({g}, {lf}, nullptr).at(0, 0) == 0);
  }
  SUBCASE("unstable amounts abstain under the cap") {
    const auto g = make_group("a1", "rent pay", {{"2024-01-01", "100.00"},
                                                 {"2024-02-01", "900.00"},
                                                 {"2024-03-01", "2500.00"}});
    CHECK(apply_lfs({g}, {lf}, nullptr).at(0, 0) == 0);
  }
}

TEST_CASE("anchor functions vote when max similarity clears the threshold") {
  const auto model = trained_model();
  AnchorParams anchor;
  anchor.anchor_word = "rent";
  anchor.threshold = 0.7;
  anchor.polarity = 1;
  const std::vector<txprep::TransactionGroup> groups = {make_group("a1", "rent office"),
                                                        make_group("a2", "espresso bar")};
  const auto matrix = apply_lfs(groups, {{"rentish", anchor}}, &model);
  CHECK(matrix.at(0, 0) == 1);  // contains the anchor word itself: similarity 1.0

  SUBCASE("anchors require a model") {
    CHECK_THROWS_AS(apply_lfs(groups, {{"rentish", anchor}}, nullptr), ConfigError);
  }
  SUBCASE("raising the threshold never adds votes") {
    AnchorParams loose = anchor, tight = anchor;
    loose.threshold = 0.3;
    tight.threshold = 0.9;
    const auto lo = apply_lfs(groups, {{"x", loose}}, &model);
    const auto hi = apply_lfs(groups, {{"x", tight}}, &model);
    for (size_t i = 0; i < groups.size(); ++i) {
      if (hi.at(i, 0) != 0) CHECK(lo.at(i, 0) != 0);
    }
  }
}

TEST_CASE("composites negate and conjoin earlier functions") {
  const std::vector<txprep::TransactionGroup> groups = {
      make_group("a1", "ford motor"), make_group("a2", "gas station"),
      make_group("a3", "ford gas")};
  std::vector<LabelingFunction> lfs = {pattern_lf("ford", "ford"),
                                       pattern_lf("gas", "gas"),
                                       {"not_ford", CompositeParams{"not", {"ford"}, 1}},
                                       {"both", CompositeParams{"and", {"ford", "gas"}, -1}}};
  const auto matrix = apply_lfs(groups, lfs, nullptr);
  CHECK(matrix.at(0, 2) == -1);
  CHECK(matrix.at(1, 2) == 0);  // NOT abstains where the base abstains
  CHECK(matrix.at(2, 3) == -1);
  CHECK(matrix.at(0, 3) == 0);

  SUBCASE("unknown reference is a configuration error") {
    std::vector<LabelingFunction> bad = {{"neg", CompositeParams{"not", {"missing"}, 1}}};
    CHECK_THROWS_AS(apply_lfs(groups, bad, nullptr), ConfigError);
  }
  SUBCASE("forward references are rejected") {
    std::vector<LabelingFunction> bad = {{"neg", CompositeParams{"not", {"late"}, 1}},
                                         pattern_lf("late", "gas")};
    CHECK_THROWS_AS(apply_lfs(groups, bad, nullptr), ConfigError);
  }
  SUBCASE("duplicate names are rejected") {
    std::vector<LabelingFunction> bad = {pattern_lf("x", "a"), pattern_lf("x", "b")};
    CHECK_THROWS_AS(apply_lfs(groups, bad, nullptr), ConfigError);
  }
}

TEST_CASE("negation mirrors votes exactly on random matrices") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> word(0, 4);
  std::vector<txprep::TransactionGroup> groups;
  for (int i = 0; i < 60; ++i)
    groups.push_back(make_group("a" + std::to_string(i),
                                "w" + std::to_string(word(rng)) + " filler"));
  std::vector<LabelingFunction> lfs = {pattern_lf("base", "w[0-2]"),
                                       {"neg", CompositeParams{"not", {"base"}, 1}}};
  const auto matrix = apply_lfs(groups, lfs, nullptr);
  for (size_t i = 0; i < groups.size(); ++i)
    CHECK(static_cast<int>(matrix.at(i, 1)) == -static_cast<int>(matrix.at(i, 0)));
}

TEST_CASE("apply_lfs is deterministic") {
  const std::vector<txprep::TransactionGroup> groups = {make_group("a1", "rent pay"),
                                                        make_group("a2", "coffee shop")};
  const std::vector<LabelingFunction> lfs = {pattern_lf("rent", "rent"),
                                             pattern_lf("coffee", "coffee", -1)};
  const auto a = apply_lfs(groups, lfs, nullptr);
  const auto b = apply_lfs(groups, lfs, nullptr);
  CHECK(a.votes == b.votes);
  CHECK(a.group_ids == b.group_ids);
}

TEST_CASE("report statistics match hand counts") {
  SUBCASE("single always-abstaining function") {
    LabelMatrix matrix;
    matrix.lf_names = {"silent"};
    matrix.group_ids = {"g1", "g2", "g3"};
    matrix.votes = {0, 0, 0};
    const auto report = lf_report(matrix);
    CHECK(report.per_lf[0].coverage == 0.0);
    CHECK(report.per_lf[0].overlap == 0.0);
    CHECK(report.per_lf[0].conflict == 0.0);
  }
  SUBCASE("two identical positive functions") {
    LabelMatrix matrix;
    matrix.lf_names = {"a", "b"};
    matrix.group_ids = {"g1", "g2"};
    matrix.votes = {1, 1, 1, 1};
    const auto report = lf_report(matrix);
    for (const auto& s : report.per_lf) {
      CHECK(s.coverage == 1.0);
      CHECK(s.overlap == 1.0);
      CHECK(s.conflict == 0.0);
    }
  }
  SUBCASE("spec hand count") {
    LabelMatrix matrix;
    matrix.lf_names = {"A", "B"};
    matrix.group_ids = {"g1", "g2", "g3", "g4"};
    // A votes +1 on rows 1,2; B votes -1 on row 2 only
    matrix.votes = {1, 0, 1, -1, 0, 0, 0, 0};
    const auto report = lf_report(matrix);
    CHECK(report.per_lf[0].coverage == doctest::Approx(0.5));
    CHECK(report.per_lf[0].overlap == doctest::Approx(0.25));
    CHECK(report.per_lf[0].conflict == doctest::Approx(0.25));
  }
  SUBCASE("dev labels give empirical accuracy and reject unknown ids") {
    LabelMatrix matrix;
    matrix.lf_names = {"A"};
    matrix.group_ids = {"g1", "g2"};
    matrix.votes = {1, -1};
    std::map<std::string, int> dev{{"g1", 1}, {"g2", 1}};
    const auto report = lf_report(matrix, &dev);
    REQUIRE(report.per_lf[0].empirical_accuracy.has_value());
    CHECK(*report.per_lf[0].empirical_accuracy == doctest::Approx(0.5));
    std::map<std::string, int> bad{{"nope", 1}};
    CHECK_THROWS_AS(lf_report(matrix, &bad), DataError);
  }
}

TEST_CASE("conflict <= overlap <= coverage on random matrices") {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> vote(-1, 1);
  for (int iter = 0; iter < 50; ++iter) {
    LabelMatrix matrix;
    const int m = 4, n = 30;
    for (int j = 0; j < m; ++j) matrix.lf_names.push_back("lf" + std::to_string(j));
    for (int i = 0; i < n; ++i) {
      matrix.group_ids.push_back("g" + std::to_string(i));
      for (int j = 0; j < m; ++j) matrix.votes.push_back(static_cast<int8_t>(vote(rng)));
    }
    for (const auto& s : lf_report(matrix).per_lf) {
      CHECK(s.conflict <= s.overlap + 1e-12);
      CHECK(s.overlap <= s.coverage + 1e-12);
    }
  }
}

TEST_CASE("anchor expansion lists vocabulary above the threshold") {
  const auto model = trained_model();
  SUBCASE("threshold 1.0 keeps at least the anchor itself") {
    const auto expansion = expand_anchor(model, "rent", 1.0);
    bool found = false;
    for (const auto& [word, cos] : expansion) found |= word == "rent";
    CHECK(found);
  }
  SUBCASE("impossible threshold via tiny epsilon above every cosine") {
    // cosine to an OOV junk query stays below 1 for everything
    const auto expansion = expand_anchor(model, "zzqq", 0.999999);
    CHECK(expansion.empty());
  }
  SUBCASE("planted category seed expands into its cluster") {
    const auto planted =
        synthgen::make_planted_corpus(synthgen::default_category_vocab(), 60, 4, 8, 31);
    const auto expansion = expand_anchor(model, "rent", 0.6);
    int same_category = 0;
    for (const auto& [word, cos] : expansion) {
      if (planted.word_category.count(word) && planted.word_category.at(word) == "rent")
        ++same_category;
    }
    CHECK(same_category >= 3);
    for (size_t i = 1; i < expansion.size(); ++i)
      CHECK(expansion[i - 1].second >= expansion[i].second);
  }
}

TEST_CASE("matrix file round-trips") {
  testutil::TmpDir tmp("weaksup");
  LabelMatrix matrix;
  matrix.lf_names = {"a", "b"};
  matrix.group_ids = {"g1", "g2", "g3"};
  matrix.votes = {1, 0, -1, 1, 0, 0};
  const std::string path = tmp.file("matrix.jsonl");
  write_matrix_jsonl(path, matrix);
  const auto back = read_matrix_jsonl(path);
  CHECK(back.lf_names == matrix.lf_names);
  CHECK(back.group_ids == matrix.group_ids);
  CHECK(back.votes == matrix.votes);
}

TEST_CASE("lf config file round-trips every kind") {
  testutil::TmpDir tmp("lfcfg");
  std::vector<LabelingFunction> lfs = {
      pattern_lf("ford", "ford(\\s+motor)?"),
      {"monthly", FrequencyParams{27, 34, 3, 0.2, 1}},
      {"rentish", AnchorParams{"rent", 0.7, 1}},
      {"not_monthly", CompositeParams{"not", {"monthly"}, 1}},
  };
  const std::string path = tmp.file("lfs.json");
  save_lf_config(path, lfs);
  const auto back = load_lf_config(path);
  REQUIRE(back.size() == lfs.size());
  CHECK(back[0].name == "ford");
  CHECK(std::get<PatternParams>(back[0].params).expression == "ford(\\s+motor)?");
  CHECK(std::get<FrequencyParams>(back[1].params).gap_hi == doctest::Approx(34));
  CHECK(std::get<AnchorParams>(back[2].params).threshold == doctest::Approx(0.7));
  CHECK(std::get<CompositeParams>(back[3].params).refs ==
        std::vector<std::string>{"monthly"});
}
