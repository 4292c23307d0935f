#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "txcat/classifier.hpp"
#include "txcat/embed.hpp"
#include "txcat/labelmodel.hpp"
#include "txcat/runstore.hpp"
#include "txcat/synthgen.hpp"
#include "txcat/txprep.hpp"
#include "txcat/weaksup.hpp"

namespace txcat::pipeline {

// One binary classification task, config-file driven.
struct TaskSpec {
  std::string name;
  std::string transactions_path;
  std::string truth_path;
  std::string category;  // target category name in the truth file
  std::string lf_config_path;
  std::string embedding_path;
  double class_balance = 0.5;
  std::string labelmodel_method = "em";  // em | moments
  classifier::ClassifierConfig classifier;
  std::array<double, 3> split_fractions = {0.7, 0.15, 0.15};
  uint64_t split_seed = 7;
  uint64_t sample_seed = 11;  // undersampling
  std::string store_root;
};

TaskSpec load_task_spec(const std::string& path);

// Gold labels from the truth file: +1 when the group's truth categories
// contain the target, -1 otherwise (groups absent from truth are negative).
std::map<std::string, int> gold_labels(const std::vector<txprep::TransactionGroup>& groups,
                                       const std::vector<synthgen::TruthEntry>& truth,
                                       const std::string& category);

// Everything up to (but excluding) discriminative training: groups, votes,
// label model fitted on the train fold, weak labels, splits, scaler.
struct PreparedTask {
  std::vector<txprep::TransactionGroup> groups;
  weaksup::LabelMatrix matrix;
  labelmodel::LabelModelParams label_model;
  std::vector<double> weak_probability;  // aligned with groups
  synthgen::SplitIndices split;
  std::map<std::string, int> gold;  // group_id -> +1/-1
  classifier::Scaler scaler;
  embed::EmbeddingModel embedding;
  std::vector<weaksup::LabelingFunction> lfs;
};

PreparedTask prepare_task(const TaskSpec& spec);

std::vector<classifier::TrainingExample> fold_examples(const PreparedTask& prepared,
                                                       const std::vector<size_t>& indices,
                                                       bool attach_gold);

struct TaskTrainOutcome {
  classifier::SelectionResult selection;
  classifier::ClassifierParams selected_model;
  classifier::EvalReport label_model_test;  // label model on the test fold
  classifier::EvalReport dnn_test;          // selected classifier on the test fold
  double label_model_test_ba = 0;
  double dnn_test_ba = 0;
};

// Full training flow: build balanced training set, run n seeded runs, select
// rank k, reload the selected run from the store, evaluate label model and
// classifier on the test fold.
TaskTrainOutcome train_task(const TaskSpec& spec, runstore::RunStore& store,
                            const std::string& code_version, int runs, int rank, int jobs,
                            double eval_threshold = 0.5);

// Inference-side loading through the parity gate.
struct LoadedModel {
  classifier::ClassifierParams model;
  classifier::Scaler scaler;
  embed::EmbeddingModel embedding;
  std::string run_id;
  std::string code_version;
};

LoadedModel load_model_for_inference(const runstore::RunStore& store, const std::string& task,
                                     const std::string& expected_code_version,
                                     bool allow_code_mismatch = false);
LoadedModel load_model_from_run(const runstore::RunStore& store, const std::string& run_id);

// Batch scoring used by `predict` and compared against the streaming loop.
std::vector<std::pair<std::string, double>> predict_groups(
    const LoadedModel& loaded, const std::vector<txprep::TransactionGroup>& groups);

}  // namespace txcat::pipeline
