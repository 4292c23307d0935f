#include <doctest.h>

#include <random>

#include "support/oracles.hpp"
#include "support/tmpdir.hpp"
#include "txcat/labelmodel.hpp"

using namespace txcat;
using namespace txcat::labelmodel;

namespace {

LabelModelParams make_params(const std::vector<double>& alpha, double p) {
  LabelModelParams params;
  params.accuracies.resize(static_cast<long>(alpha.size()));
  params.coverages = Eigen::VectorXd::Constant(static_cast<long>(alpha.size()), 0.5);
  for (size_t j = 0; j < alpha.size(); ++j) {
    params.accuracies[static_cast<long>(j)] = alpha[j];
    params.lf_names.push_back("lf" + std::to_string(j));
  }
  params.class_balance = p;
  return params;
}

double posterior_of(const LabelModelParams& params, const std::vector<int>& votes) {
  std::vector<weaksup::Vote> row;
  for (int v : votes) row.push_back(static_cast<int8_t>(v));
  return posterior(params, row);
}

}  // namespace

TEST_CASE("posterior matches the stated closed forms") {
  SUBCASE("all abstain returns the class balance exactly") {
    const auto params = make_params({0.9, 0.8, 0.7}, 0.37);
    CHECK(posterior_of(params, {0, 0, 0}) == 0.37);
  }
  SUBCASE("single confident vote under a flat prior") {
    const auto params = make_params({0.9}, 0.5);
    CHECK(posterior_of(params, {1}) == doctest::Approx(0.9).epsilon(1e-12));
  }
  SUBCASE("balanced conflict cancels") {
    const auto params = make_params({0.8, 0.8}, 0.5);
    CHECK(posterior_of(params, {1, -1}) == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("length mismatch errors") {
    const auto params = make_params({0.9}, 0.5);
    CHECK_THROWS_AS(posterior_of(params, {1, 1}), DataError);
  }
}

TEST_CASE("posterior equals brute-force joint enumeration for <= 4 functions") {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> unit(0.05, 0.95);
  for (int n_lfs = 1; n_lfs <= 4; ++n_lfs) {
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> alpha, beta;
      for (int j = 0; j < n_lfs; ++j) {
        alpha.push_back(unit(rng));
        beta.push_back(unit(rng));
      }
      const double p = unit(rng);
      const auto params = make_params(alpha, p);
      for (const auto& votes : oracles::all_vote_rows(n_lfs)) {
        const double expected = oracles::posterior_bruteforce(alpha, beta, p, votes);
        CHECK(std::abs(posterior_of(params, votes) - expected) <= 1e-10);
      }
    }
  }
}

TEST_CASE("flipping an abstain to a confident positive never lowers the posterior") {
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> acc(0.5, 0.95), unit(0.05, 0.95);
  std::uniform_int_distribution<int> vote(-1, 1);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> alpha;
    std::vector<int> votes;
    for (int j = 0; j < 5; ++j) {
      alpha.push_back(acc(rng));
      votes.push_back(vote(rng));
    }
    const auto params = make_params(alpha, unit(rng));
    int abstain_at = -1;
    for (int j = 0; j < 5; ++j)
      if (votes[j] == 0) abstain_at = j;
    if (abstain_at < 0) continue;
    const double before = posterior_of(params, votes);
    votes[abstain_at] = 1;
    CHECK(posterior_of(params, votes) >= before - 1e-12);
  }
}

TEST_CASE("moment matching recovers planted accuracies") {
  const std::vector<double> alpha{0.9, 0.8, 0.75};
  const std::vector<double> beta{0.6, 0.5, 0.7};
  const auto sampled = oracles::sample_votes(alpha, beta, 0.3, 10000, 17);
  const auto params = fit_moments(sampled.matrix, 0.3);
  for (size_t j = 0; j < alpha.size(); ++j) {
    CHECK(params.accuracies[static_cast<long>(j)] == doctest::Approx(alpha[j]).epsilon(0.05));
    CHECK(std::abs(params.accuracies[static_cast<long>(j)] - alpha[j]) <= 0.03);
    CHECK(params.coverages[static_cast<long>(j)] == doctest::Approx(beta[j]).epsilon(0.1));
  }
  CHECK(params.accuracies.mean() >= 0.5);
}

TEST_CASE("perfect agreement drives accuracies to the clamp") {
  weaksup::LabelMatrix matrix;
  matrix.lf_names = {"a", "b"};
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> vote(0, 1);
  for (int i = 0; i < 500; ++i) {
    matrix.group_ids.push_back("g" + std::to_string(i));
    const int8_t v = vote(rng) ? 1 : -1;
    matrix.votes.push_back(v);
    matrix.votes.push_back(v);
  }
  const auto params = fit_moments(matrix, 0.5);
  const double aj = params.accuracies[0], ak = params.accuracies[1];
  const double implied = 2 * aj * ak - aj - ak + 1;
  CHECK((aj >= 0.98 || implied == doctest::Approx(1.0).epsilon(0.02)));
}

TEST_CASE("half agreement is consistent with the 0.5 fixed point") {
  weaksup::LabelMatrix matrix;
  matrix.lf_names = {"a", "b"};
  for (int i = 0; i < 400; ++i) {
    matrix.group_ids.push_back("g" + std::to_string(i));
    matrix.votes.push_back(1);
    matrix.votes.push_back(i % 2 == 0 ? 1 : -1);  // agree exactly half the time
  }
  const auto params = fit_moments(matrix, 0.5);
  const double aj = params.accuracies[0], ak = params.accuracies[1];
  CHECK(2 * aj * ak - aj - ak + 1 == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("EM recovers planted accuracies and matches moments") {
  const std::vector<double> alpha{0.9, 0.8, 0.75};
  const std::vector<double> beta{0.6, 0.5, 0.7};
  const auto sampled = oracles::sample_votes(alpha, beta, 0.3, 10000, 29);
  const auto em = fit_em(sampled.matrix, 0.3);
  const auto mm = fit_moments(sampled.matrix, 0.3);
  for (size_t j = 0; j < alpha.size(); ++j) {
    CHECK(std::abs(em.accuracies[static_cast<long>(j)] - alpha[j]) <= 0.03);
    CHECK(std::abs(em.accuracies[static_cast<long>(j)] -
                   mm.accuracies[static_cast<long>(j)]) <= 0.05);
  }
}

TEST_CASE("EM started at the true parameters stays there") {
  // All-equal planted accuracies make the uniform init the true vector.
  const std::vector<double> alpha{0.8, 0.8, 0.8, 0.8};
  const std::vector<double> beta{0.6, 0.6, 0.6, 0.6};
  const auto sampled = oracles::sample_votes(alpha, beta, 0.5, 20000, 41);
  FitConfig config;
  config.alpha_init = 0.8;
  const auto params = fit_em(sampled.matrix, 0.5, config);
  for (long j = 0; j < params.accuracies.size(); ++j)
    CHECK(std::abs(params.accuracies[j] - 0.8) < 0.01);
}

TEST_CASE("EM leaves unidentifiable accuracies at their initialization") {
  // Two functions voting on disjoint rows at p = 0.5: each row's posterior
  // depends only on that function's own accuracy, so every accuracy is an EM
  // fixed point (the single-function degeneracy).
  weaksup::LabelMatrix matrix;
  matrix.lf_names = {"a", "b"};
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> vote(0, 1);
  for (int i = 0; i < 200; ++i) {
    matrix.group_ids.push_back("g" + std::to_string(i));
    const int8_t v = vote(rng) ? 1 : -1;
    if (i % 2 == 0) {
      matrix.votes.push_back(v);
      matrix.votes.push_back(0);
    } else {
      matrix.votes.push_back(0);
      matrix.votes.push_back(v);
    }
  }
  FitConfig config;
  config.alpha_init = 0.7;
  const auto params = fit_em(matrix, 0.5, config);
  CHECK(params.accuracies[0] == doctest::Approx(0.7).epsilon(1e-9));
  CHECK(params.accuracies[1] == doctest::Approx(0.7).epsilon(1e-9));
}

TEST_CASE("fit rejects degenerate matrices") {
  weaksup::LabelMatrix matrix;
  matrix.lf_names = {"a", "b"};
  matrix.group_ids = {"g1", "g2"};
  matrix.votes = {1, 0, 1, 0};  // second function never votes
  CHECK_THROWS_AS(fit_moments(matrix, 0.5), DataError);
  CHECK_THROWS_AS(fit_em(matrix, 0.5), DataError);

  weaksup::LabelMatrix single;
  single.lf_names = {"a"};
  single.group_ids = {"g1"};
  single.votes = {1};
  CHECK_THROWS_AS(fit_moments(single, 0.5), DataError);
  CHECK_THROWS_AS(fit_em(single, 0.5), DataError);
}

TEST_CASE("predict_labels is row-independent and permutation-equivariant") {
  const std::vector<double> alpha{0.85, 0.7, 0.9};
  const std::vector<double> beta{0.5, 0.6, 0.4};
  auto sampled = oracles::sample_votes(alpha, beta, 0.4, 50, 7);
  const auto params = make_params(alpha, 0.4);
  const auto forward = predict_labels(params, sampled.matrix);

  // permute rows and re-predict
  weaksup::LabelMatrix permuted;
  permuted.lf_names = sampled.matrix.lf_names;
  std::vector<size_t> order(sampled.matrix.rows());
  for (size_t i = 0; i < order.size(); ++i) order[i] = order.size() - 1 - i;
  for (size_t i : order) {
    permuted.group_ids.push_back(sampled.matrix.group_ids[i]);
    for (size_t j = 0; j < sampled.matrix.cols(); ++j)
      permuted.votes.push_back(sampled.matrix.at(i, j));
  }
  const auto backward = predict_labels(params, permuted);
  for (size_t i = 0; i < order.size(); ++i) {
    CHECK(backward[i].first == forward[order[i]].first);
    CHECK(backward[i].second == doctest::Approx(forward[order[i]].second).epsilon(1e-15));
  }

  // all-abstain rows sit exactly at the prior
  weaksup::LabelMatrix blank;
  blank.lf_names = sampled.matrix.lf_names;
  blank.group_ids = {"g"};
  blank.votes = {0, 0, 0};
  CHECK(predict_labels(params, blank)[0].second == 0.4);
}

TEST_CASE("posteriors are calibrated on model-generated data") {
  const std::vector<double> alpha{0.9, 0.75, 0.8, 0.7};
  const std::vector<double> beta{0.5, 0.6, 0.45, 0.7};
  const double p = 0.35;
  const auto sampled = oracles::sample_votes(alpha, beta, p, 50000, 99);
  const auto params = make_params(alpha, p);
  const auto predictions = predict_labels(params, sampled.matrix);

  std::array<double, 10> sum_pred{}, sum_true{};
  std::array<int, 10> count{};
  for (size_t i = 0; i < predictions.size(); ++i) {
    const double q = predictions[i].second;
    const int bin = std::min(9, static_cast<int>(q * 10));
    sum_pred[static_cast<size_t>(bin)] += q;
    sum_true[static_cast<size_t>(bin)] += sampled.truth[i] > 0 ? 1.0 : 0.0;
    ++count[static_cast<size_t>(bin)];
  }
  for (int bin = 0; bin < 10; ++bin) {
    if (count[static_cast<size_t>(bin)] < 200) continue;  // sparsely hit decile
    const double mean_pred = sum_pred[static_cast<size_t>(bin)] / count[static_cast<size_t>(bin)];
    const double mean_true = sum_true[static_cast<size_t>(bin)] / count[static_cast<size_t>(bin)];
    CHECK(std::abs(mean_pred - mean_true) <= 0.05);
  }
}

TEST_CASE("params serialize to a readable document and back") {
  testutil::TmpDir tmp("lm");
  auto params = make_params({0.875, 0.65}, 0.3);
  params.fit_method = "em";
  params.coverages << 0.25, 0.75;
  const std::string path = tmp.file("params.json");
  save_params(path, params);
  const auto back = load_params(path);
  CHECK(back.lf_names == params.lf_names);
  CHECK(back.class_balance == params.class_balance);
  CHECK(back.fit_method == "em");
  for (long j = 0; j < params.accuracies.size(); ++j) {
    CHECK(back.accuracies[j] == params.accuracies[j]);
    CHECK(back.coverages[j] == params.coverages[j]);
  }
}
