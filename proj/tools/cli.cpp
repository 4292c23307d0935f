// txcat - weakly-supervised bank-transaction classification toolkit.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <thread>

#include "txcat/classifier.hpp"
#include "txcat/embed.hpp"
#include "txcat/labelmodel.hpp"
#include "txcat/pipeline.hpp"
#include "txcat/runstore.hpp"
#include "txcat/stream.hpp"
#include "txcat/synthgen.hpp"
#include "txcat/txprep.hpp"
#include "txcat/weaksup.hpp"

#ifndef TXCAT_CODE_VERSION
#define TXCAT_CODE_VERSION "dev"
#endif

namespace {

using namespace txcat;
using ordered_json = nlohmann::ordered_json;

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string resolve_store_root(const std::string& flag, const std::string& task_root) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("TXCAT_STORE"); env && *env) return env;
  if (!task_root.empty()) return task_root;
  throw ConfigError("no run store configured: pass --store, set TXCAT_STORE, or put store_root "
                    "in the task config");
}

std::map<std::string, int> read_gold_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open gold labels file: " + path);
  std::map<std::string, int> gold;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      gold[j.at("group_id").get<std::string>()] = j.at("label").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return gold;
}

void write_scores_jsonl(const std::string& path,
                        const std::vector<std::pair<std::string, double>>& scores) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  for (const auto& [gid, p] : scores) {
    ordered_json j;
    j["group_id"] = gid;
    j["probability"] = p;
    out << j.dump() << '\n';
  }
}

std::vector<std::pair<std::string, double>> read_scores_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scores file: " + path);
  std::vector<std::pair<std::string, double>> scores;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      scores.emplace_back(j.at("group_id").get<std::string>(),
                          j.at("probability").get<double>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return scores;
}

embed::EmbeddingConfig embed_config_from_file(const std::string& path) {
  embed::EmbeddingConfig c;
  if (path.empty()) return c;
  try {
    const auto j = nlohmann::json::parse(read_file(path));
    c.dim = j.value("dim", c.dim);
    c.min_n = j.value("min_n", c.min_n);
    c.max_n = j.value("max_n", c.max_n);
    c.window = j.value("window", c.window);
    c.negatives = j.value("negatives", c.negatives);
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.min_count = j.value("min_count", c.min_count);
    c.bucket_count = j.value("bucket_count", c.bucket_count);
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("embedding config " + path + ": " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weakly-supervised transaction classification pipeline"};
  app.require_subcommand(1);

  bool deterministic = false;
  app.add_flag("--deterministic", deterministic, "force single-threaded execution everywhere");

  // --- synth generate ---
  auto* synth = app.add_subcommand("synth", "synthetic corpus generation");
  synth->require_subcommand(1);
  auto* synth_gen = synth->add_subcommand("generate", "generate a transaction corpus with truth");
  std::string synth_config, synth_out, synth_truth;
  synth_gen->add_option("--config", synth_config, "synth config JSON")->required();
  synth_gen->add_option("--out", synth_out, "transactions output (.csv or .jsonl)")->required();
  synth_gen->add_option("--truth", synth_truth, "ground-truth output JSONL")->required();
  synth_gen->callback([&] {
    const auto result = synthgen::generate(synthgen::load_synth_config(synth_config));
    if (has_suffix(synth_out, ".csv"))
      txprep::write_transactions_csv(synth_out, result.transactions);
    else
      txprep::write_transactions_jsonl(synth_out, result.transactions);
    synthgen::write_truth_jsonl(synth_truth, result.truth);
    std::cout << "wrote " << result.transactions.size() << " transactions, "
              << result.truth.size() << " truth keys\n";
  });

  // --- prep ---
  auto* prep = app.add_subcommand("prep", "normalize, group, and aggregate transactions");
  std::string prep_in, prep_out;
  prep->add_option("--input", prep_in, "transactions file (.csv or .jsonl)")->required();
  prep->add_option("--output", prep_out, "groups output JSONL")->required();
  prep->callback([&] {
    const auto groups = txprep::group(txprep::read_transactions(prep_in));
    txprep::write_groups_jsonl(prep_out, groups);
    std::cout << "wrote " << groups.size() << " groups\n";
  });

  // --- embed ---
  auto* embed_cmd = app.add_subcommand("embed", "subword skip-gram embedding");
  embed_cmd->require_subcommand(1);

  auto* embed_train = embed_cmd->add_subcommand("train", "train on a transaction corpus");
  std::string et_input, et_config, et_output, et_export;
  bool et_per_group = false;
  embed_train->add_option("--input", et_input, "transactions file")->required();
  embed_train->add_option("--config", et_config, "embedding config JSON");
  embed_train->add_option("--output", et_output, "model output file")->required();
  embed_train->add_option("--export-text", et_export, "also write a plain-text vector dump");
  embed_train->add_flag("--per-group", et_per_group,
                        "one sentence per (account, text) group instead of per transaction");
  embed_train->callback([&] {
    auto config = embed_config_from_file(et_config);
    if (deterministic) config.workers = 1;
    const auto transactions = txprep::read_transactions(et_input);
    std::vector<txprep::NormalizedText> corpus;
    if (et_per_group) {
      for (const auto& g : txprep::group(transactions)) corpus.push_back(g.normalized_text);
    } else {
      for (const auto& t : transactions)
        corpus.push_back(txprep::normalize(t.description, t.merchant_name));
    }
    embed::TrainStats stats;
    const auto model = embed::train_embedding(corpus, config, &stats);
    embed::save(model, et_output);
    if (!et_export.empty()) embed::export_text(model, et_export);
    std::cout << "trained on " << corpus.size() << " sentences, vocabulary "
              << model.vocab.size() << ", final epoch loss "
              << (stats.epoch_loss.empty() ? 0.0 : stats.epoch_loss.back()) << "\n";
  });

  auto* embed_nn = embed_cmd->add_subcommand("neighbors", "nearest neighbors of a word");
  std::string en_word, en_model;
  int en_k = 10;
  embed_nn->add_option("word", en_word, "query word")->required();
  embed_nn->add_option("-k", en_k, "neighbor count");
  embed_nn->add_option("--model", en_model, "embedding model file")->required();
  embed_nn->callback([&] {
    const auto model = embed::load(en_model);
    for (const auto& [word, cos] : embed::nearest_neighbors(model, en_word, en_k))
      std::cout << word << '\t' << cos << '\n';
  });

  // --- anchor expand ---
  auto* anchor = app.add_subcommand("anchor", "anchor diagnostics");
  anchor->require_subcommand(1);
  auto* anchor_expand = anchor->add_subcommand("expand", "vocabulary above a cosine threshold");
  std::string ax_word, ax_model;
  double ax_threshold = 0.5;
  anchor_expand->add_option("word", ax_word, "anchor word")->required();
  anchor_expand->add_option("--threshold", ax_threshold, "cosine threshold in (-1, 1]")
      ->required();
  anchor_expand->add_option("--model", ax_model, "embedding model file")->required();
  anchor_expand->callback([&] {
    const auto model = embed::load(ax_model);
    for (const auto& [word, cos] : weaksup::expand_anchor(model, ax_word, ax_threshold))
      std::cout << word << '\t' << cos << '\n';
  });

  // --- lf ---
  auto* lf = app.add_subcommand("lf", "labeling functions");
  lf->require_subcommand(1);

  auto* lf_apply = lf->add_subcommand("apply", "evaluate labeling functions over groups");
  std::string la_groups, la_lfs, la_model, la_out;
  lf_apply->add_option("--groups", la_groups, "groups JSONL")->required();
  lf_apply->add_option("--lfs", la_lfs, "labeling function config JSON")->required();
  lf_apply->add_option("--model", la_model, "embedding model (needed for anchors)");
  lf_apply->add_option("--output", la_out, "label matrix JSONL")->required();
  lf_apply->callback([&] {
    const auto groups = txprep::read_groups_jsonl(la_groups);
    const auto lfs = weaksup::load_lf_config(la_lfs);
    std::optional<embed::EmbeddingModel> model;
    if (!la_model.empty()) model = embed::load(la_model);
    const auto matrix = weaksup::apply_lfs(groups, lfs, model ? &*model : nullptr);
    weaksup::write_matrix_jsonl(la_out, matrix);
    std::cout << "wrote " << matrix.rows() << " x " << matrix.cols() << " vote matrix\n";
  });

  auto* lf_report_cmd = lf->add_subcommand("report", "coverage / overlap / conflict table");
  std::string lr_matrix, lr_dev;
  bool lr_json = false;
  lf_report_cmd->add_option("--matrix", lr_matrix, "label matrix JSONL")->required();
  lf_report_cmd->add_option("--dev-labels", lr_dev, "gold labels JSONL for empirical accuracy");
  lf_report_cmd->add_flag("--json", lr_json, "machine-readable output");
  lf_report_cmd->callback([&] {
    const auto matrix = weaksup::read_matrix_jsonl(lr_matrix);
    std::optional<std::map<std::string, int>> dev;
    if (!lr_dev.empty()) dev = read_gold_jsonl(lr_dev);
    const auto report = weaksup::lf_report(matrix, dev ? &*dev : nullptr);
    if (lr_json) {
      ordered_json arr = ordered_json::array();
      for (const auto& s : report.per_lf) {
        ordered_json j{{"name", s.name},
                       {"coverage", s.coverage},
                       {"overlap", s.overlap},
                       {"conflict", s.conflict},
                       {"n_votes", s.n_votes}};
        if (s.empirical_accuracy) j["empirical_accuracy"] = *s.empirical_accuracy;
        arr.push_back(std::move(j));
      }
      std::cout << arr.dump(2) << '\n';
    } else {
      std::cout << weaksup::render_report(report);
    }
  });

  // --- labelmodel ---
  auto* lm = app.add_subcommand("labelmodel", "generative label model");
  lm->require_subcommand(1);

  auto* lm_fit = lm->add_subcommand("fit", "fit accuracies from a vote matrix");
  std::string lmf_matrix, lmf_out, lmf_method = "em";
  double lmf_balance = 0.5;
  lm_fit->add_option("--matrix", lmf_matrix, "label matrix JSONL")->required();
  lm_fit->add_option("--class-balance", lmf_balance, "prior P(positive)")->required();
  lm_fit->add_option("--method", lmf_method, "em | moments")
      ->check(CLI::IsMember({"em", "moments"}));
  lm_fit->add_option("--output", lmf_out, "fitted params JSON")->required();
  lm_fit->callback([&] {
    const auto matrix = weaksup::read_matrix_jsonl(lmf_matrix);
    const auto params = lmf_method == "moments"
                            ? labelmodel::fit_moments(matrix, lmf_balance)
                            : labelmodel::fit_em(matrix, lmf_balance);
    labelmodel::save_params(lmf_out, params);
    std::cout << "fitted " << params.lf_names.size() << " labeling functions ("
              << params.fit_method << ")\n";
  });

  auto* lm_apply = lm->add_subcommand("apply", "posterior weak labels for a matrix");
  std::string lma_params, lma_matrix, lma_out;
  lm_apply->add_option("--params", lma_params, "fitted params JSON")->required();
  lm_apply->add_option("--matrix", lma_matrix, "label matrix JSONL")->required();
  lm_apply->add_option("--output", lma_out, "weak labels JSONL")->required();
  lm_apply->callback([&] {
    const auto params = labelmodel::load_params(lma_params);
    const auto matrix = weaksup::read_matrix_jsonl(lma_matrix);
    const auto predictions = labelmodel::predict_labels(params, matrix);
    std::vector<labelmodel::WeakLabel> weak;
    for (size_t i = 0; i < predictions.size(); ++i) {
      int n_votes = 0;
      for (size_t j = 0; j < matrix.cols(); ++j) n_votes += matrix.at(i, j) != 0;
      weak.push_back({predictions[i].first, predictions[i].second, n_votes});
    }
    labelmodel::write_weak_labels_jsonl(lma_out, weak);
    std::cout << "wrote " << weak.size() << " weak labels\n";
  });

  // --- truth labels ---
  auto* truth = app.add_subcommand("truth", "ground-truth helpers");
  truth->require_subcommand(1);
  auto* truth_labels = truth->add_subcommand("labels", "per-group gold labels for a category");
  std::string tl_groups, tl_truth, tl_category, tl_out;
  truth_labels->add_option("--groups", tl_groups, "groups JSONL")->required();
  truth_labels->add_option("--truth", tl_truth, "truth JSONL")->required();
  truth_labels->add_option("--category", tl_category, "target category")->required();
  truth_labels->add_option("--output", tl_out, "gold labels JSONL")->required();
  truth_labels->callback([&] {
    const auto groups = txprep::read_groups_jsonl(tl_groups);
    const auto gold = pipeline::gold_labels(groups, synthgen::read_truth_jsonl(tl_truth),
                                            tl_category);
    std::ofstream out(tl_out, std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + tl_out);
    for (const auto& g : groups) {
      ordered_json j;
      j["group_id"] = g.id();
      j["label"] = gold.at(g.id());
      out << j.dump() << '\n';
    }
    std::cout << "wrote " << groups.size() << " gold labels\n";
  });

  // --- train ---
  auto* train_cmd = app.add_subcommand("train", "train classifier run(s) for a task");
  std::string tr_task, tr_store, tr_code = TXCAT_CODE_VERSION;
  int tr_runs = 1, tr_rank = 1, tr_jobs = 1;
  double tr_threshold = 0.5;
  train_cmd->add_option("--task", tr_task, "task config JSON")->required();
  train_cmd->add_option("--runs", tr_runs, "number of seeded training runs");
  train_cmd->add_option("--rank", tr_rank, "validation rank of the run to select");
  train_cmd->add_option("--jobs", tr_jobs, "parallel training runs");
  train_cmd->add_option("--store", tr_store, "run store root (or TXCAT_STORE)");
  train_cmd->add_option("--code-version", tr_code, "code version recorded with runs");
  train_cmd->add_option("--threshold", tr_threshold, "decision threshold for test reports");
  train_cmd->callback([&] {
    const auto spec = pipeline::load_task_spec(tr_task);
    runstore::RunStore store(resolve_store_root(tr_store, spec.store_root));
    const int jobs = deterministic ? 1 : tr_jobs;
    const auto outcome =
        pipeline::train_task(spec, store, tr_code, tr_runs, tr_rank, jobs, tr_threshold);
    std::cout << "selected run " << outcome.selection.selected.run_id << " (rank " << tr_rank
              << " of " << tr_runs << ", seed " << outcome.selection.selected.seed << ")\n"
              << "validation balanced accuracy "
              << outcome.selection.selected.val_balanced_accuracy << "\n"
              << "test balanced accuracy: label model " << outcome.label_model_test_ba
              << ", classifier " << outcome.dnn_test_ba << "\n";
  });

  // --- eval ---
  auto* eval_cmd = app.add_subcommand("eval", "balanced accuracy / recall report");
  std::string ev_scores, ev_gold;
  double ev_threshold = 0.5;
  bool ev_json = false;
  eval_cmd->add_option("--scores", ev_scores, "scores JSONL")->required();
  eval_cmd->add_option("--gold", ev_gold, "gold labels JSONL")->required();
  eval_cmd->add_option("--threshold", ev_threshold, "decision threshold");
  eval_cmd->add_flag("--json", ev_json, "machine-readable output");
  eval_cmd->callback([&] {
    const auto scores = read_scores_jsonl(ev_scores);
    const auto gold = read_gold_jsonl(ev_gold);
    std::vector<double> s;
    std::vector<int> g;
    for (const auto& [gid, p] : scores) {
      auto it = gold.find(gid);
      if (it == gold.end()) continue;
      s.push_back(p);
      g.push_back(it->second);
    }
    if (s.empty()) throw DataError("eval: no overlap between scores and gold labels");
    const auto report = classifier::evaluate(s, g, ev_threshold);
    std::cout << (ev_json ? classifier::eval_report_to_json(report)
                          : classifier::render_eval_report(report));
  });

  // --- predict ---
  auto* predict_cmd = app.add_subcommand("predict", "batch scores through stored artifacts");
  std::string pr_task, pr_input, pr_output, pr_store, pr_run, pr_code = TXCAT_CODE_VERSION;
  bool pr_allow_mismatch = false;
  predict_cmd->add_option("--task", pr_task, "task config JSON")->required();
  predict_cmd->add_option("--input", pr_input, "transactions file to score")->required();
  predict_cmd->add_option("--output", pr_output, "scores JSONL")->required();
  predict_cmd->add_option("--store", pr_store, "run store root (or TXCAT_STORE)");
  predict_cmd->add_option("--run", pr_run, "score with a specific run instead of the best");
  predict_cmd->add_option("--code-version", pr_code, "expected code version (parity check)");
  predict_cmd->add_flag("--allow-code-mismatch", pr_allow_mismatch,
                        "override the parity check (logged)");
  predict_cmd->callback([&] {
    const auto spec = pipeline::load_task_spec(pr_task);
    runstore::RunStore store(resolve_store_root(pr_store, spec.store_root));
    const auto loaded =
        pr_run.empty()
            ? pipeline::load_model_for_inference(store, spec.name, pr_code, pr_allow_mismatch)
            : pipeline::load_model_from_run(store, pr_run);
    const auto groups = txprep::group(txprep::read_transactions(pr_input));
    write_scores_jsonl(pr_output, pipeline::predict_groups(loaded, groups));
    std::cout << "scored " << groups.size() << " groups with run " << loaded.run_id << "\n";
  });

  // --- stream ---
  auto* stream_cmd = app.add_subcommand("stream", "file-backed streaming inference");
  stream_cmd->require_subcommand(1);
  auto* stream_run = stream_cmd->add_subcommand("run", "drain topics through the watcher");
  std::string st_task, st_store, st_topics, st_cache, st_run, st_code = TXCAT_CODE_VERSION;
  std::string st_in_topic = "transactions", st_out_topic = "predictions";
  int64_t st_max_count = 100, st_max_age = 60'000, st_offset = 0;
  int st_min_txns = 1;
  std::vector<std::string> st_required;
  bool st_allow_mismatch = false;
  stream_run->add_option("--task", st_task, "task config JSON")->required();
  stream_run->add_option("--store", st_store, "run store root (or TXCAT_STORE)");
  stream_run->add_option("--topics-dir", st_topics, "topic log directory")->required();
  stream_run->add_option("--cache-dir", st_cache, "watcher cache directory")->required();
  stream_run->add_option("--input-topic", st_in_topic, "topic with transaction events");
  stream_run->add_option("--output-topic", st_out_topic, "topic for prediction events");
  stream_run->add_option("--max-count", st_max_count, "batch size trigger");
  stream_run->add_option("--max-age-ms", st_max_age, "batch age trigger");
  stream_run->add_option("--min-transactions", st_min_txns, "readiness rule");
  stream_run->add_option("--require-kind", st_required, "event kinds required for readiness");
  stream_run->add_option("--from-offset", st_offset, "input topic resume offset");
  stream_run->add_option("--run", st_run, "use a specific run instead of the best");
  stream_run->add_option("--code-version", st_code, "expected code version (parity check)");
  stream_run->add_flag("--allow-code-mismatch", st_allow_mismatch,
                       "override the parity check (logged)");
  stream_run->callback([&] {
    const auto spec = pipeline::load_task_spec(st_task);
    runstore::RunStore store(resolve_store_root(st_store, spec.store_root));
    const auto loaded =
        st_run.empty()
            ? pipeline::load_model_for_inference(store, spec.name, st_code, st_allow_mismatch)
            : pipeline::load_model_from_run(store, st_run);
    stream::TopicLog topics(st_topics);
    stream::Watcher watcher(st_cache, stream::ReadinessRule{st_min_txns, st_required});
    stream::LoopConfig config;
    config.input_topic = st_in_topic;
    config.output_topic = st_out_topic;
    config.policy = {st_max_count, st_max_age};
    config.rule = {st_min_txns, st_required};
    config.model_version = loaded.run_id;
    stream::SystemClock clock;
    const auto stats = stream::run_inference_loop(topics, watcher, config, loaded.embedding,
                                                  loaded.scaler, loaded.model, clock, st_offset);
    std::cout << "read " << stats.events_read << " events, consumed " << stats.events_consumed
              << " in " << stats.batches << " batches, emitted " << stats.predictions_emitted
              << " predictions; next offset " << stats.next_offset << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const ParityError& e) {
    std::cerr << "parity error: " << e.what() << '\n';
    return 4;
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 5;
  }
  return 0;
}
