#include "txcat/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include <nlohmann/json.hpp>

namespace txcat::pipeline {

TaskSpec load_task_spec(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("task config " + path + ": " + e.what());
  }
  try {
    TaskSpec spec;
    spec.name = j.at("name").get<std::string>();
    spec.transactions_path = j.at("transactions").get<std::string>();
    spec.truth_path = j.value("truth", "");
    spec.category = j.at("category").get<std::string>();
    spec.lf_config_path = j.at("lf_config").get<std::string>();
    spec.embedding_path = j.at("embedding").get<std::string>();
    spec.class_balance = j.at("class_balance").get<double>();
    spec.labelmodel_method = j.value("labelmodel_method", "em");
    if (spec.labelmodel_method != "em" && spec.labelmodel_method != "moments")
      throw ConfigError("task config: labelmodel_method must be 'em' or 'moments'");
    if (j.contains("classifier"))
      spec.classifier = classifier::classifier_config_from_json(j.at("classifier").dump());
    if (j.contains("split_fractions")) {
      const auto f = j.at("split_fractions").get<std::vector<double>>();
      if (f.size() != 3) throw ConfigError("task config: split_fractions needs 3 entries");
      spec.split_fractions = {f[0], f[1], f[2]};
    }
    spec.split_seed = j.value("split_seed", 7ull);
    spec.sample_seed = j.value("sample_seed", 11ull);
    spec.store_root = j.value("store_root", "");
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("task config " + path + ": " + e.what());
  }
}

std::map<std::string, int> gold_labels(const std::vector<txprep::TransactionGroup>& groups,
                                       const std::vector<synthgen::TruthEntry>& truth,
                                       const std::string& category) {
  std::set<std::pair<std::string, std::string>> positive_keys;
  for (const auto& entry : truth) {
    if (std::find(entry.categories.begin(), entry.categories.end(), category) !=
        entry.categories.end())
      positive_keys.insert({entry.account_id, entry.text});
  }
  std::map<std::string, int> gold;
  for (const auto& g : groups)
    gold[g.id()] = positive_keys.count({g.account_id, g.rendered()}) ? 1 : -1;
  return gold;
}

PreparedTask prepare_task(const TaskSpec& spec) {
  PreparedTask prepared;
  const auto transactions = txprep::read_transactions(spec.transactions_path);
  if (transactions.empty()) throw DataError("no transactions in " + spec.transactions_path);
  prepared.groups = txprep::group(transactions);
  prepared.embedding = embed::load(spec.embedding_path);
  prepared.lfs = weaksup::load_lf_config(spec.lf_config_path);
  prepared.matrix = weaksup::apply_lfs(prepared.groups, prepared.lfs, &prepared.embedding);
  prepared.split = synthgen::split(prepared.groups, spec.split_fractions, spec.split_seed);

  // Label model is fitted on the training fold's votes only.
  weaksup::LabelMatrix train_matrix;
  train_matrix.lf_names = prepared.matrix.lf_names;
  for (size_t idx : prepared.split.train) {
    train_matrix.group_ids.push_back(prepared.matrix.group_ids[idx]);
    for (size_t j = 0; j < prepared.matrix.cols(); ++j)
      train_matrix.votes.push_back(prepared.matrix.at(idx, j));
  }
  labelmodel::FitConfig fit_config;
  prepared.label_model =
      spec.labelmodel_method == "moments"
          ? labelmodel::fit_moments(train_matrix, spec.class_balance, fit_config)
          : labelmodel::fit_em(train_matrix, spec.class_balance, fit_config);

  prepared.weak_probability.resize(prepared.groups.size());
  for (size_t i = 0; i < prepared.groups.size(); ++i) {
    prepared.weak_probability[i] = labelmodel::posterior(
        prepared.label_model,
        std::span<const weaksup::Vote>(prepared.matrix.votes.data() + i * prepared.matrix.cols(),
                                       prepared.matrix.cols()));
  }

  if (!spec.truth_path.empty())
    prepared.gold =
        gold_labels(prepared.groups, synthgen::read_truth_jsonl(spec.truth_path), spec.category);

  std::vector<const txprep::TransactionGroup*> train_groups;
  for (size_t idx : prepared.split.train) train_groups.push_back(&prepared.groups[idx]);
  prepared.scaler = classifier::fit_scaler(train_groups);
  return prepared;
}

std::vector<classifier::TrainingExample> fold_examples(const PreparedTask& prepared,
                                                       const std::vector<size_t>& indices,
                                                       bool attach_gold) {
  std::vector<classifier::TrainingExample> out;
  out.reserve(indices.size());
  for (size_t idx : indices) {
    classifier::TrainingExample ex =
        classifier::featurize_group(prepared.groups[idx], prepared.embedding, prepared.scaler);
    ex.weak_probability = prepared.weak_probability[idx];
    if (attach_gold) {
      auto it = prepared.gold.find(ex.group_id);
      ex.gold_label = it != prepared.gold.end() ? it->second : 0;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

classifier::EvalReport eval_fold(const std::vector<double>& scores,
                                 const std::vector<int>& gold, double threshold) {
  return classifier::evaluate(scores, gold, threshold);
}

}  // namespace

TaskTrainOutcome train_task(const TaskSpec& spec, runstore::RunStore& store,
                            const std::string& code_version, int runs, int rank, int jobs,
                            double eval_threshold) {
  if (spec.truth_path.empty())
    throw ConfigError("train_task: task has no truth file for validation gold labels");
  PreparedTask prepared = prepare_task(spec);

  std::vector<classifier::WeakRow> weak_rows;
  for (size_t idx : prepared.split.train) {
    classifier::WeakRow row;
    row.group = &prepared.groups[idx];
    row.probability = prepared.weak_probability[idx];
    row.all_abstain = prepared.matrix.all_abstain(idx);
    weak_rows.push_back(row);
  }
  const auto train_set = classifier::build_training_set(
      weak_rows, prepared.embedding, prepared.scaler, spec.classifier, spec.sample_seed);
  auto val_set = fold_examples(prepared, prepared.split.validation, /*attach_gold=*/true);
  for (const auto& ex : val_set)
    if (ex.gold_label == 0)
      throw DataError("train_task: validation group without gold label: " + ex.group_id);

  std::map<std::string, std::string> extra_artifacts;
  extra_artifacts["scaler"] = prepared.scaler.serialize();
  extra_artifacts["label_model"] = labelmodel::serialize_params(prepared.label_model);
  extra_artifacts["embedding"] = read_file(spec.embedding_path);
  extra_artifacts["lf_config"] = read_file(spec.lf_config_path);

  TaskTrainOutcome outcome;
  outcome.selection =
      classifier::multi_run_select(store, spec.name, code_version, train_set, val_set,
                                   spec.classifier, runs, rank, extra_artifacts, jobs);

  const LoadedModel loaded = load_model_from_run(store, outcome.selection.selected.run_id);
  outcome.selected_model = loaded.model;

  // Test-fold evaluation for both the label model and the selected DNN.
  auto test_set = fold_examples(prepared, prepared.split.test, /*attach_gold=*/true);
  std::vector<int> test_gold;
  std::vector<double> lm_scores, dnn_scores;
  for (size_t k = 0; k < prepared.split.test.size(); ++k) {
    const size_t idx = prepared.split.test[k];
    test_gold.push_back(test_set[k].gold_label);
    lm_scores.push_back(prepared.weak_probability[idx]);
  }
  dnn_scores = classifier::predict_batch(outcome.selected_model, test_set);
  outcome.label_model_test = eval_fold(lm_scores, test_gold, eval_threshold);
  outcome.dnn_test = eval_fold(dnn_scores, test_gold, eval_threshold);
  outcome.label_model_test_ba = outcome.label_model_test.at_threshold.balanced_accuracy;
  outcome.dnn_test_ba = outcome.dnn_test.at_threshold.balanced_accuracy;
  return outcome;
}

LoadedModel load_model_from_run(const runstore::RunStore& store, const std::string& run_id) {
  const runstore::LoadedRun run = store.load_run(run_id);
  LoadedModel loaded;
  loaded.run_id = run_id;
  loaded.code_version = run.record.code_version;
  auto artifact = [&](const char* name) -> const std::string& {
    auto it = run.artifacts.find(name);
    if (it == run.artifacts.end())
      throw IntegrityError("run " + run_id + " is missing artifact '" + std::string(name) + "'");
    return it->second;
  };
  loaded.model = classifier::deserialize_classifier(artifact("classifier"));
  loaded.scaler = classifier::Scaler::deserialize(artifact("scaler"));
  {
    // Embedding loader works on files; stage the bytes.
    const std::string tmp = store.root() + "/.embedding.load.tmp";
    write_file_atomic(tmp, artifact("embedding"));
    loaded.embedding = embed::load(tmp);
    std::remove(tmp.c_str());
  }
  return loaded;
}

LoadedModel load_model_for_inference(const runstore::RunStore& store, const std::string& task,
                                     const std::string& expected_code_version,
                                     bool allow_code_mismatch) {
  const auto best = store.best(task);
  if (!best) throw DataError("no trained model version for task '" + task + "'");
  // Runs the parity gate (and honors the override) before loading bytes.
  const runstore::LoadedRun gate =
      store.load_for_inference(task, expected_code_version, allow_code_mismatch);
  return load_model_from_run(store, gate.record.run_id);
}

std::vector<std::pair<std::string, double>> predict_groups(
    const LoadedModel& loaded, const std::vector<txprep::TransactionGroup>& groups) {
  std::vector<classifier::TrainingExample> examples;
  examples.reserve(groups.size());
  for (const auto& g : groups)
    examples.push_back(classifier::featurize_group(
        g, loaded.embedding, loaded.scaler,
        loaded.model.tuned_words.empty() ? nullptr : &loaded.model.tuned_words));
  const auto scores = classifier::predict_batch(loaded.model, examples);
  std::vector<std::pair<std::string, double>> out;
  for (size_t i = 0; i < groups.size(); ++i) out.emplace_back(examples[i].group_id, scores[i]);
  return out;
}

}  // namespace txcat::pipeline
