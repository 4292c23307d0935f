#include "txcat/labelmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace txcat::labelmodel {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr double kAlphaLo = 0.01;
constexpr double kAlphaHi = 0.99;

void check_balance(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("class balance must be in (0,1)");
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void resolve_sign_and_clamp(Eigen::VectorXd& alpha) {
  if (alpha.mean() < 0.5) alpha = Eigen::VectorXd::Ones(alpha.size()) - alpha;
  for (long j = 0; j < alpha.size(); ++j) alpha[j] = std::clamp(alpha[j], kAlphaLo, kAlphaHi);
}

Eigen::VectorXd empirical_coverage(const weaksup::LabelMatrix& matrix) {
  const size_t n = matrix.rows(), m = matrix.cols();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(static_cast<long>(m));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < m; ++j)
      if (matrix.at(i, j) != 0) beta[static_cast<long>(j)] += 1.0;
  if (n > 0) beta /= static_cast<double>(n);
  return beta;
}

void require_two_covering(const Eigen::VectorXd& beta) {
  int covering = 0;
  for (long j = 0; j < beta.size(); ++j) covering += beta[j] > 0;
  if (covering < 2)
    throw DataError("label model fit requires at least 2 labeling functions with coverage");
}

}  // namespace

double posterior(const LabelModelParams& params, std::span<const weaksup::Vote> votes) {
  if (static_cast<long>(votes.size()) != params.accuracies.size())
    throw DataError("posterior: vote row length does not match parameters");
  bool any = false;
  double log_pos = 0, log_neg = 0;
  for (size_t j = 0; j < votes.size(); ++j) {
    const weaksup::Vote v = votes[j];
    if (v == 0) continue;
    any = true;
    const double a = params.accuracies[static_cast<long>(j)];
    if (v > 0) {
      log_pos += std::log(a);
      log_neg += std::log1p(-a);
    } else {
      log_pos += std::log1p(-a);
      log_neg += std::log(a);
    }
  }
  if (!any) return params.class_balance;  // abstains carry no evidence
  log_pos += std::log(params.class_balance);
  log_neg += std::log1p(-params.class_balance);
  return 1.0 / (1.0 + std::exp(log_neg - log_pos));
}

LabelModelParams fit_moments(const weaksup::LabelMatrix& matrix, double class_balance,
                             const FitConfig& config) {
  check_balance(class_balance);
  const size_t n = matrix.rows(), m = matrix.cols();
  if (m < 2) throw DataError("label model fit requires at least 2 labeling functions");

  LabelModelParams params;
  params.lf_names = matrix.lf_names;
  params.class_balance = class_balance;
  params.fit_method = "moments";
  params.coverages = empirical_coverage(matrix);
  require_two_covering(params.coverages);

  // Pairwise empirical agreement over rows where both functions vote.
  struct Pair {
    long j, k;
    double agreement;
  };
  std::vector<Pair> pairs;
  for (size_t j = 0; j < m; ++j) {
    for (size_t k = j + 1; k < m; ++k) {
      int64_t both = 0, agree = 0;
      for (size_t i = 0; i < n; ++i) {
        const weaksup::Vote vj = matrix.at(i, j), vk = matrix.at(i, k);
        if (vj == 0 || vk == 0) continue;
        ++both;
        agree += vj == vk;
      }
      if (both > 0)
        pairs.push_back({static_cast<long>(j), static_cast<long>(k),
                         static_cast<double>(agree) / static_cast<double>(both)});
    }
  }
  if (pairs.empty())
    throw DataError("label model fit: no pair of labeling functions ever votes together");

  // Gradient descent on sum of squared agreement residuals; alpha goes
  // through a sigmoid to stay in (0,1).
  const double theta0 = std::log(config.alpha_init / (1.0 - config.alpha_init));
  Eigen::VectorXd theta = Eigen::VectorXd::Constant(static_cast<long>(m), theta0);
  Eigen::VectorXd alpha(static_cast<long>(m)), grad(static_cast<long>(m));
  for (int iter = 0; iter < config.moment_iters; ++iter) {
    for (long j = 0; j < alpha.size(); ++j) alpha[j] = sigmoid(theta[j]);
    grad.setZero();
    for (const auto& p : pairs) {
      const double aj = alpha[p.j], ak = alpha[p.k];
      const double implied = 2.0 * aj * ak - aj - ak + 1.0;
      const double resid = implied - p.agreement;
      grad[p.j] += 2.0 * resid * (2.0 * ak - 1.0);
      grad[p.k] += 2.0 * resid * (2.0 * aj - 1.0);
    }
    for (long j = 0; j < theta.size(); ++j)
      theta[j] -= config.moment_step * grad[j] * alpha[j] * (1.0 - alpha[j]);
  }
  for (long j = 0; j < alpha.size(); ++j) alpha[j] = sigmoid(theta[j]);
  resolve_sign_and_clamp(alpha);
  params.accuracies = alpha;
  return params;
}

LabelModelParams fit_em(const weaksup::LabelMatrix& matrix, double class_balance,
                        const FitConfig& config) {
  check_balance(class_balance);
  const size_t n = matrix.rows(), m = matrix.cols();
  if (m < 2) throw DataError("label model fit requires at least 2 labeling functions");

  LabelModelParams params;
  params.lf_names = matrix.lf_names;
  params.class_balance = class_balance;
  params.fit_method = "em";
  params.coverages = empirical_coverage(matrix);
  require_two_covering(params.coverages);

  if (config.em_init_from_moments) {
    params.accuracies = fit_moments(matrix, class_balance, config).accuracies;
  } else {
    params.accuracies =
        Eigen::VectorXd::Constant(static_cast<long>(m), config.alpha_init);
  }

  std::vector<double> q(n);
  for (int iter = 0; iter < config.em_max_iters; ++iter) {
    for (size_t i = 0; i < n; ++i)
      q[i] = posterior(params, std::span<const weaksup::Vote>(
                                   matrix.votes.data() + i * m, m));

    double max_delta = 0;
    for (size_t j = 0; j < m; ++j) {
      double agree = 0;
      int64_t voted = 0;
      for (size_t i = 0; i < n; ++i) {
        const weaksup::Vote v = matrix.at(i, j);
        if (v == 0) continue;
        ++voted;
        agree += v > 0 ? q[i] : 1.0 - q[i];
      }
      if (voted == 0) continue;  // never votes: accuracy unidentifiable, leave as-is
      const double updated = std::clamp(agree / static_cast<double>(voted), kAlphaLo, kAlphaHi);
      max_delta = std::max(max_delta,
                           std::abs(updated - params.accuracies[static_cast<long>(j)]));
      params.accuracies[static_cast<long>(j)] = updated;
    }
    if (max_delta < config.em_tol) break;
  }
  resolve_sign_and_clamp(params.accuracies);
  return params;
}

std::vector<std::pair<std::string, double>> predict_labels(const LabelModelParams& params,
                                                           const weaksup::LabelMatrix& matrix) {
  if (matrix.lf_names.size() != static_cast<size_t>(params.accuracies.size()))
    throw DataError("predict_labels: matrix width does not match parameters");
  std::vector<std::pair<std::string, double>> out;
  out.reserve(matrix.rows());
  const size_t m = matrix.cols();
  for (size_t i = 0; i < matrix.rows(); ++i) {
    const double p = posterior(
        params, std::span<const weaksup::Vote>(matrix.votes.data() + i * m, m));
    out.emplace_back(matrix.group_ids[i], p);
  }
  return out;
}

std::string serialize_params(const LabelModelParams& params) {
  ordered_json doc;
  doc["class_balance"] = params.class_balance;
  doc["fit_method"] = params.fit_method;
  ordered_json lfs = ordered_json::array();
  for (size_t j = 0; j < params.lf_names.size(); ++j) {
    ordered_json lj;
    lj["name"] = params.lf_names[j];
    lj["accuracy"] = params.accuracies[static_cast<long>(j)];
    lj["coverage"] = params.coverages[static_cast<long>(j)];
    lfs.push_back(std::move(lj));
  }
  doc["labeling_functions"] = std::move(lfs);
  return doc.dump(2) + "\n";
}

LabelModelParams deserialize_params(const std::string& text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    LabelModelParams params;
    params.class_balance = doc.at("class_balance").get<double>();
    params.fit_method = doc.at("fit_method").get<std::string>();
    const auto& lfs = doc.at("labeling_functions");
    params.accuracies.resize(static_cast<long>(lfs.size()));
    params.coverages.resize(static_cast<long>(lfs.size()));
    long j = 0;
    for (const auto& lj : lfs) {
      params.lf_names.push_back(lj.at("name").get<std::string>());
      params.accuracies[j] = lj.at("accuracy").get<double>();
      params.coverages[j] = lj.at("coverage").get<double>();
      ++j;
    }
    return params;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("label model params: ") + e.what());
  }
}

void save_params(const std::string& path, const LabelModelParams& params) {
  write_file_atomic(path, serialize_params(params));
}

LabelModelParams load_params(const std::string& path) {
  return deserialize_params(read_file(path));
}

void write_weak_labels_jsonl(const std::string& path, const std::vector<WeakLabel>& labels) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  for (const auto& w : labels) {
    ordered_json j;
    j["group_id"] = w.group_id;
    j["probability"] = w.probability;
    j["n_votes"] = w.n_votes;
    out << j.dump() << '\n';
  }
}

std::vector<WeakLabel> read_weak_labels_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open weak labels file: " + path);
  std::vector<WeakLabel> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      WeakLabel w;
      w.group_id = j.at("group_id").get<std::string>();
      w.probability = j.at("probability").get<double>();
      w.n_votes = j.value("n_votes", 1);
      out.push_back(std::move(w));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace txcat::labelmodel
