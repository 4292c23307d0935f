#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "txcat/embed.hpp"
#include "txcat/nn.hpp"
#include "txcat/runstore.hpp"
#include "txcat/txprep.hpp"

namespace txcat::classifier {

struct OptimizerConfig {
  std::string kind = "adamw";  // adamw | sgd
  double lr = 1e-3;
  double momentum = 0;     // sgd only
  double beta1 = 0.9;      // adamw
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0;
};

struct ClassifierConfig {
  int ts_hidden = 32;
  int text_hidden = 64;
  int gru_layers = 1;
  std::vector<int> mlp_hidden = {64, 32};
  double dropout = 0.2;
  OptimizerConfig optimizer;
  int max_epochs = 40;
  int patience = 5;
  int batch_size = 128;
  uint64_t seed = 1;
  bool embedding_finetune = false;
  double rounding_threshold = 0.5;
};

ClassifierConfig classifier_config_from_json(const std::string& text);
std::string classifier_config_to_json(const ClassifierConfig& config);

// Fit-&-transform artifact: the feature standardization moments are computed
// once at training time and replayed bit-for-bit at inference.
struct Scaler {
  bool fitted = false;
  double amount_mean = 0, amount_std = 1;
  double gap_mean = 0, gap_std = 1;

  std::string serialize() const;
  static Scaler deserialize(const std::string& text);
};

// Moments of sign(a)*ln(1+|a|) over amounts (dollars) and ln(1+dt) over day
// gaps, pooled across all series entries of the given groups.
Scaler fit_scaler(const std::vector<const txprep::TransactionGroup*>& groups);

// 2 x T matrix: row 0 scaled amounts, row 1 scaled gaps. Throws unless fitted.
Eigen::MatrixXd featurize_series(const Scaler& scaler, const txprep::SparseSeries& series);

struct TrainingExample {
  std::string group_id;
  std::vector<std::string> tokens;
  Eigen::MatrixXd text_vectors;  // dim x max(1, n_tokens); zero column for empty text
  Eigen::MatrixXd ts_features;   // 2 x n_entries
  double weak_probability = 0;
  int weak_target = 0;
  int gold_label = 0;  // +1 / -1 when known, 0 otherwise
};

using TunedWords = std::map<std::string, Eigen::VectorXd>;

TrainingExample featurize_group(const txprep::TransactionGroup& group,
                                const embed::EmbeddingModel& model, const Scaler& scaler,
                                const TunedWords* tuned = nullptr);

struct WeakRow {
  const txprep::TransactionGroup* group = nullptr;
  double probability = 0;
  bool all_abstain = false;
};

// Drops all-abstain rows, rounds posteriors at the configured threshold
// (>= rule), undersamples the majority class 1:1 with the given seed, and
// featurizes what is kept. Throws when either class is empty after rounding.
std::vector<TrainingExample> build_training_set(const std::vector<WeakRow>& rows,
                                                const embed::EmbeddingModel& model,
                                                const Scaler& scaler,
                                                const ClassifierConfig& config, uint64_t seed);

// Dual-branch model: bidirectional GRU per modality, final hidden states
// concatenated into an MLP with a sigmoid head.
struct ClassifierParams {
  ClassifierConfig config;
  int embed_dim = 0;
  nn::ParamSet<double> params;
  nn::GruParams ts_gru;
  nn::GruParams text_gru;
  nn::MlpParams mlp;
  TunedWords tuned_words;  // populated when embedding_finetune trained deltas
};

ClassifierParams build_classifier(const ClassifierConfig& config, int embed_dim);

std::string serialize_classifier(const ClassifierParams& model);
ClassifierParams deserialize_classifier(const std::string& bytes);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;
  double val_balanced_accuracy = 0;
};

struct TrainResult {
  ClassifierParams model;  // best-epoch snapshot
  std::vector<EpochStats> history;
  int best_epoch = -1;
  double best_val = 0;
};

// Seeded shuffling, minibatch BCE on weak targets, per-epoch validation
// balanced accuracy on gold labels, early stopping on `patience` epochs
// without improvement, best-epoch snapshot returned.
TrainResult train(const std::vector<TrainingExample>& train_set,
                  const std::vector<TrainingExample>& val_set, const ClassifierConfig& config);

std::vector<double> predict_batch(const ClassifierParams& model,
                                  const std::vector<TrainingExample>& examples);

struct SweepRow {
  double threshold = 0;
  double balanced_accuracy = 0;
  double recall = 0;
  double specificity = 0;
  long tp = 0, fp = 0, tn = 0, fn = 0;
};

struct EvalReport {
  SweepRow at_threshold;
  std::vector<SweepRow> sweep;
};

std::vector<double> default_threshold_grid();

// Balanced accuracy and recall at the threshold (score >= threshold is
// positive) plus a sweep table. Requires both classes present in gold.
EvalReport evaluate(const std::vector<double>& scores, const std::vector<int>& gold,
                    double threshold, const std::vector<double>& grid = default_threshold_grid());

std::string render_eval_report(const EvalReport& report);
std::string eval_report_to_json(const EvalReport& report);

struct RunOutcome {
  int run_index = 0;
  uint64_t seed = 0;
  std::string run_id;
  double val_balanced_accuracy = 0;
  int best_epoch = -1;
  bool failed = false;
  std::string error;
};

struct SelectionResult {
  RunOutcome selected;
  std::vector<RunOutcome> runs;
};

// Runs n seeded training runs (seed = base seed + run index), logs each to
// the store with its artifacts, and returns the run ranked `rank` by
// validation balanced accuracy (ties by seed ascending). Extra artifacts
// (embedding, lf config, label model) are logged with every run so each run
// is self-contained for inference.
SelectionResult multi_run_select(runstore::RunStore& store, const std::string& task,
                                 const std::string& code_version,
                                 const std::vector<TrainingExample>& train_set,
                                 const std::vector<TrainingExample>& val_set,
                                 const ClassifierConfig& base_config, int n_runs, int rank,
                                 const std::map<std::string, std::string>& extra_artifacts,
                                 int jobs = 1);

}  // namespace txcat::classifier
