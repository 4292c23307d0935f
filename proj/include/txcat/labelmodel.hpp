#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "txcat/weaksup.hpp"

namespace txcat::labelmodel {

// Conditionally-independent generative model of labeling-function votes.
// Each function j votes with probability beta_j and, when it votes, matches
// the true class with probability alpha_j (class-symmetric). The class
// balance p = P(Y=+1) is a supplied prior, never estimated.
struct LabelModelParams {
  std::vector<std::string> lf_names;
  Eigen::VectorXd accuracies;  // alpha, clamped to [0.01, 0.99], mean >= 0.5
  Eigen::VectorXd coverages;   // beta, empirical
  double class_balance = 0.5;
  std::string fit_method;
};

struct FitConfig {
  // The sigmoid parameterization crawls near the accuracy bounds, so
  // boundary cases (perfectly agreeing functions) need the long schedule.
  int moment_iters = 25000;
  double moment_step = 0.1;
  double alpha_init = 0.7;
  double em_tol = 1e-6;
  int em_max_iters = 1000;
  bool em_init_from_moments = false;
};

// P(Y=+1 | votes). Abstains contribute no factor; an all-abstain row returns
// the class balance exactly.
double posterior(const LabelModelParams& params, std::span<const weaksup::Vote> votes);

// Accuracies from pairwise agreement rates: minimizes the squared gap between
// empirical agreement and the model-implied 2*a_j*a_k - a_j - a_k + 1 over
// all covering pairs, with the global sign fixed by mean accuracy >= 0.5.
LabelModelParams fit_moments(const weaksup::LabelMatrix& matrix, double class_balance,
                             const FitConfig& config = {});

// EM alternative: posterior E-step, per-function weighted-agreement M-step,
// class balance held fixed.
LabelModelParams fit_em(const weaksup::LabelMatrix& matrix, double class_balance,
                        const FitConfig& config = {});

std::vector<std::pair<std::string, double>> predict_labels(const LabelModelParams& params,
                                                           const weaksup::LabelMatrix& matrix);

void save_params(const std::string& path, const LabelModelParams& params);
LabelModelParams load_params(const std::string& path);
std::string serialize_params(const LabelModelParams& params);
LabelModelParams deserialize_params(const std::string& text);

struct WeakLabel {
  std::string group_id;
  double probability = 0;
  int n_votes = 0;  // non-abstain count for the row
};

void write_weak_labels_jsonl(const std::string& path, const std::vector<WeakLabel>& labels);
std::vector<WeakLabel> read_weak_labels_jsonl(const std::string& path);

}  // namespace txcat::labelmodel
