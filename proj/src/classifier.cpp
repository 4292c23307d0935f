#include "txcat/classifier.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <memory>
#include <random>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace txcat::classifier {

using ordered_json = nlohmann::ordered_json;

// --- config -------------------------------------------------------------------

ClassifierConfig classifier_config_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ClassifierConfig c;
    c.ts_hidden = j.value("ts_hidden", c.ts_hidden);
    c.text_hidden = j.value("text_hidden", c.text_hidden);
    c.gru_layers = j.value("gru_layers", c.gru_layers);
    if (j.contains("mlp_hidden")) c.mlp_hidden = j.at("mlp_hidden").get<std::vector<int>>();
    c.dropout = j.value("dropout", c.dropout);
    if (j.contains("optimizer")) {
      const auto& oj = j.at("optimizer");
      c.optimizer.kind = oj.value("kind", c.optimizer.kind);
      c.optimizer.lr = oj.value("lr", c.optimizer.lr);
      c.optimizer.momentum = oj.value("momentum", c.optimizer.momentum);
      c.optimizer.beta1 = oj.value("beta1", c.optimizer.beta1);
      c.optimizer.beta2 = oj.value("beta2", c.optimizer.beta2);
      c.optimizer.eps = oj.value("eps", c.optimizer.eps);
      c.optimizer.weight_decay = oj.value("weight_decay", c.optimizer.weight_decay);
    }
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.embedding_finetune = j.value("embedding_finetune", c.embedding_finetune);
    c.rounding_threshold = j.value("rounding_threshold", c.rounding_threshold);
    if (c.ts_hidden < 1 || c.text_hidden < 1 || c.gru_layers < 1 || c.batch_size < 1 ||
        c.max_epochs < 1 || c.patience < 0 || c.patience > c.max_epochs)
      throw ConfigError("classifier config: sizes must be positive and patience <= max_epochs");
    if (c.optimizer.kind != "adamw" && c.optimizer.kind != "sgd")
      throw ConfigError("classifier config: unknown optimizer '" + c.optimizer.kind + "'");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("classifier config: ") + e.what());
  }
}

std::string classifier_config_to_json(const ClassifierConfig& c) {
  ordered_json j;
  j["ts_hidden"] = c.ts_hidden;
  j["text_hidden"] = c.text_hidden;
  j["gru_layers"] = c.gru_layers;
  j["mlp_hidden"] = c.mlp_hidden;
  j["dropout"] = c.dropout;
  j["optimizer"] = ordered_json{{"kind", c.optimizer.kind},
                                {"lr", c.optimizer.lr},
                                {"momentum", c.optimizer.momentum},
                                {"beta1", c.optimizer.beta1},
                                {"beta2", c.optimizer.beta2},
                                {"eps", c.optimizer.eps},
                                {"weight_decay", c.optimizer.weight_decay}};
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["embedding_finetune"] = c.embedding_finetune;
  j["rounding_threshold"] = c.rounding_threshold;
  return j.dump(2) + "\n";
}

// --- scaler -------------------------------------------------------------------

namespace {

double signed_log(double dollars) { return std::copysign(std::log1p(std::abs(dollars)), dollars); }

}  // namespace

Scaler fit_scaler(const std::vector<const txprep::TransactionGroup*>& groups) {
  double a_sum = 0, g_sum = 0;
  int64_t n = 0;
  for (const auto* g : groups) {
    for (const auto& e : g->series.entries) {
      a_sum += signed_log(cents_to_value(e.amount_cents));
      g_sum += std::log1p(static_cast<double>(e.delta_days));
      ++n;
    }
  }
  if (n == 0) throw DataError("scaler: no series entries to fit on");
  Scaler s;
  s.amount_mean = a_sum / static_cast<double>(n);
  s.gap_mean = g_sum / static_cast<double>(n);
  double a_ss = 0, g_ss = 0;
  for (const auto* g : groups) {
    for (const auto& e : g->series.entries) {
      const double a = signed_log(cents_to_value(e.amount_cents)) - s.amount_mean;
      const double d = std::log1p(static_cast<double>(e.delta_days)) - s.gap_mean;
      a_ss += a * a;
      g_ss += d * d;
    }
  }
  s.amount_std = std::sqrt(a_ss / static_cast<double>(n));
  s.gap_std = std::sqrt(g_ss / static_cast<double>(n));
  if (s.amount_std < 1e-12) s.amount_std = 1;
  if (s.gap_std < 1e-12) s.gap_std = 1;
  s.fitted = true;
  return s;
}

std::string Scaler::serialize() const {
  ordered_json j;
  j["kind"] = "scaler";
  j["fitted"] = fitted;
  j["amount_mean"] = amount_mean;
  j["amount_std"] = amount_std;
  j["gap_mean"] = gap_mean;
  j["gap_std"] = gap_std;
  return j.dump(2) + "\n";
}

Scaler Scaler::deserialize(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    Scaler s;
    s.fitted = j.at("fitted").get<bool>();
    s.amount_mean = j.at("amount_mean").get<double>();
    s.amount_std = j.at("amount_std").get<double>();
    s.gap_mean = j.at("gap_mean").get<double>();
    s.gap_std = j.at("gap_std").get<double>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("scaler artifact: ") + e.what());
  }
}

Eigen::MatrixXd featurize_series(const Scaler& scaler, const txprep::SparseSeries& series) {
  if (!scaler.fitted) throw ConfigError("scaler: transform before fit");
  Eigen::MatrixXd out(2, static_cast<long>(series.entries.size()));
  for (size_t i = 0; i < series.entries.size(); ++i) {
    const auto& e = series.entries[i];
    out(0, static_cast<long>(i)) =
        (signed_log(cents_to_value(e.amount_cents)) - scaler.amount_mean) / scaler.amount_std;
    out(1, static_cast<long>(i)) =
        (std::log1p(static_cast<double>(e.delta_days)) - scaler.gap_mean) / scaler.gap_std;
  }
  return out;
}

TrainingExample featurize_group(const txprep::TransactionGroup& group,
                                const embed::EmbeddingModel& model, const Scaler& scaler,
                                const TunedWords* tuned) {
  TrainingExample ex;
  ex.group_id = group.id();
  ex.tokens = group.normalized_text.tokens;
  ex.ts_features = featurize_series(scaler, group.series);
  const long dim = model.dim();
  if (ex.tokens.empty()) {
    ex.text_vectors = Eigen::MatrixXd::Zero(dim, 1);  // stand-in step for empty text
  } else {
    ex.text_vectors.resize(dim, static_cast<long>(ex.tokens.size()));
    for (size_t t = 0; t < ex.tokens.size(); ++t) {
      if (tuned) {
        auto it = tuned->find(ex.tokens[t]);
        if (it != tuned->end()) {
          ex.text_vectors.col(static_cast<long>(t)) = it->second;
          continue;
        }
      }
      ex.text_vectors.col(static_cast<long>(t)) =
          embed::vector(model, ex.tokens[t]).cast<double>();
    }
  }
  return ex;
}

std::vector<TrainingExample> build_training_set(const std::vector<WeakRow>& rows,
                                                const embed::EmbeddingModel& model,
                                                const Scaler& scaler,
                                                const ClassifierConfig& config, uint64_t seed) {
  std::vector<size_t> pos, neg;
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].all_abstain) continue;  // unlabeled rows hurt training; dropped
    if (rows[i].probability >= config.rounding_threshold)
      pos.push_back(i);
    else
      neg.push_back(i);
  }
  if (pos.empty() || neg.empty())
    throw DataError("build_training_set: cannot balance, one class is empty after rounding");

  std::mt19937_64 rng(seed);
  auto& majority = pos.size() > neg.size() ? pos : neg;
  const size_t keep = std::min(pos.size(), neg.size());
  std::shuffle(majority.begin(), majority.end(), rng);
  majority.resize(keep);

  std::vector<size_t> kept;
  kept.reserve(2 * keep);
  kept.insert(kept.end(), pos.begin(), pos.end());
  kept.insert(kept.end(), neg.begin(), neg.end());
  std::sort(kept.begin(), kept.end());

  std::vector<TrainingExample> out;
  out.reserve(kept.size());
  for (size_t i : kept) {
    TrainingExample ex = featurize_group(*rows[i].group, model, scaler);
    ex.weak_probability = rows[i].probability;
    ex.weak_target = rows[i].probability >= config.rounding_threshold ? 1 : 0;
    out.push_back(std::move(ex));
  }
  return out;
}

// --- model assembly -------------------------------------------------------------

ClassifierParams build_classifier(const ClassifierConfig& config, int embed_dim) {
  if (embed_dim < 1) throw ConfigError("classifier: embedding dimension must be positive");
  ClassifierParams model;
  model.config = config;
  model.embed_dim = embed_dim;
  std::mt19937_64 rng(config.seed);
  model.ts_gru = nn::make_gru(model.params, "ts", 2, config.ts_hidden, config.gru_layers,
                              /*bidirectional=*/true, rng);
  model.text_gru = nn::make_gru(model.params, "text", embed_dim, config.text_hidden,
                                config.gru_layers, /*bidirectional=*/true, rng);
  const int joint = model.ts_gru.output_size() + model.text_gru.output_size();
  model.mlp = nn::make_mlp(model.params, "mlp", joint, config.mlp_hidden, rng);
  return model;
}

std::string serialize_classifier(const ClassifierParams& model) {
  ordered_json header;
  header["config"] = nlohmann::json::parse(classifier_config_to_json(model.config));
  header["embed_dim"] = model.embed_dim;
  ordered_json tuned = ordered_json::object();
  for (const auto& [word, vec] : model.tuned_words) {
    ordered_json arr = ordered_json::array();
    for (long r = 0; r < vec.size(); ++r) arr.push_back(vec[r]);
    tuned[word] = std::move(arr);
  }
  header["tuned_words"] = std::move(tuned);
  const std::string head = header.dump();

  std::ostringstream out(std::ios::binary);
  const uint32_t magic = 0x5458434c;  // "TXCL"
  const uint32_t version = 1;
  const uint64_t head_len = head.size();
  out.write(reinterpret_cast<const char*>(&magic), sizeof magic);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&head_len), sizeof head_len);
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  nn::save_params_stream(model.params, out);
  return out.str();
}

ClassifierParams deserialize_classifier(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  uint32_t magic = 0, version = 0;
  uint64_t head_len = 0;
  in.read(reinterpret_cast<char*>(&magic), sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&head_len), sizeof head_len);
  if (!in || magic != 0x5458434c || version != 1)
    throw DataError("not a classifier artifact");
  std::string head(head_len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head_len));
  try {
    const auto j = nlohmann::json::parse(head);
    ClassifierParams model =
        build_classifier(classifier_config_from_json(j.at("config").dump()),
                         j.at("embed_dim").get<int>());
    nn::load_params_stream(model.params, in);
    for (const auto& [word, arr] : j.at("tuned_words").items()) {
      Eigen::VectorXd vec(static_cast<long>(arr.size()));
      long r = 0;
      for (const auto& v : arr) vec[r++] = v.get<double>();
      model.tuned_words.emplace(word, std::move(vec));
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("classifier artifact: ") + e.what());
  }
}

// --- forward passes --------------------------------------------------------------

namespace {

struct EmbeddingBank {
  nn::ParamSet<double> params;
  std::map<std::string, int> index;
};

// Sequence of per-step input nodes for one example's text branch.
std::vector<int> text_step_nodes(nn::Tape<double>& tape, const TrainingExample& ex,
                                 EmbeddingBank* bank) {
  std::vector<int> steps;
  const long n = ex.text_vectors.cols();
  for (long t = 0; t < n; ++t) {
    if (bank && t < static_cast<long>(ex.tokens.size())) {
      auto it = bank->index.find(ex.tokens[static_cast<size_t>(t)]);
      if (it != bank->index.end()) {
        steps.push_back(tape.param(bank->params, it->second));
        continue;
      }
    }
    steps.push_back(tape.constant(ex.text_vectors.col(t)));
  }
  return steps;
}

std::vector<int> ts_step_nodes(nn::Tape<double>& tape, const TrainingExample& ex) {
  std::vector<int> steps;
  for (long t = 0; t < ex.ts_features.cols(); ++t)
    steps.push_back(tape.constant(ex.ts_features.col(t)));
  return steps;
}

// Single-example training graph: returns the sigmoid output node.
int example_forward(nn::Tape<double>& tape, ClassifierParams& model, const TrainingExample& ex,
                    EmbeddingBank* bank, const std::vector<nn::Mat<double>>* dropout_masks) {
  const auto ts_out = nn::gru_forward(tape, model.params, model.ts_gru, ts_step_nodes(tape, ex));
  const auto text_out =
      nn::gru_forward(tape, model.params, model.text_gru, text_step_nodes(tape, ex, bank));
  const int joint = tape.concat_rows(ts_out.final_state, text_out.final_state);
  const int logit = nn::mlp_forward(tape, model.params, model.mlp, joint, dropout_masks);
  return tape.sigmoid(logit);
}

double balanced_accuracy_at(const std::vector<double>& scores, const std::vector<int>& gold,
                            double threshold) {
  long tp = 0, fn = 0, tn = 0, fp = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (gold[i] > 0)
      predicted ? ++tp : ++fn;
    else
      predicted ? ++fp : ++tn;
  }
  const long p = tp + fn, n = tn + fp;
  if (p == 0 || n == 0) throw DataError("balanced accuracy needs both classes");
  return 0.5 * (static_cast<double>(tp) / static_cast<double>(p) +
                static_cast<double>(tn) / static_cast<double>(n));
}

struct OptimizerState {
  nn::SgdState<double> sgd_main, sgd_emb;
  nn::AdamWState<double> adamw_main, adamw_emb;
};

void optimizer_step(const OptimizerConfig& opt, nn::ParamSet<double>& main_ps,
                    nn::ParamSet<double>* emb_ps, OptimizerState& state) {
  if (opt.kind == "sgd") {
    nn::SgdConfig<double> cfg{opt.lr, opt.momentum};
    nn::sgd_step(main_ps, state.sgd_main, cfg);
    if (emb_ps) nn::sgd_step(*emb_ps, state.sgd_emb, cfg);
  } else {
    nn::AdamWConfig<double> cfg;
    cfg.lr = opt.lr;
    cfg.beta1 = opt.beta1;
    cfg.beta2 = opt.beta2;
    cfg.eps = opt.eps;
    cfg.weight_decay = opt.weight_decay;
    nn::adamw_step(main_ps, state.adamw_main, cfg);
    if (emb_ps) nn::adamw_step(*emb_ps, state.adamw_emb, cfg);
  }
}

}  // namespace

std::vector<double> predict_batch(const ClassifierParams& model,
                                  const std::vector<TrainingExample>& examples) {
  if (examples.empty()) return {};
  auto& params = const_cast<nn::ParamSet<double>&>(model.params);  // read-only pass
  nn::Tape<double> tape;

  std::vector<std::vector<nn::Mat<double>>> ts_seqs(examples.size()), text_seqs(examples.size());
  for (size_t i = 0; i < examples.size(); ++i) {
    for (long t = 0; t < examples[i].ts_features.cols(); ++t)
      ts_seqs[i].push_back(examples[i].ts_features.col(t));
    for (long t = 0; t < examples[i].text_vectors.cols(); ++t)
      text_seqs[i].push_back(examples[i].text_vectors.col(t));
  }
  const auto ts_finals = nn::gru_forward_bucketed(tape, params, model.ts_gru, ts_seqs);
  const auto text_finals = nn::gru_forward_bucketed(tape, params, model.text_gru, text_seqs);

  const long joint_rows = model.ts_gru.output_size() + model.text_gru.output_size();
  nn::Mat<double> joint(joint_rows, static_cast<long>(examples.size()));
  for (size_t i = 0; i < examples.size(); ++i) {
    joint.col(static_cast<long>(i)).topRows(model.ts_gru.output_size()) =
        tape.value(ts_finals[i]);
    joint.col(static_cast<long>(i)).bottomRows(model.text_gru.output_size()) =
        tape.value(text_finals[i]);
  }
  const int logits =
      nn::mlp_forward(tape, params, model.mlp, tape.constant(std::move(joint)));
  const int probs = tape.sigmoid(logits);
  std::vector<double> out(examples.size());
  for (size_t i = 0; i < examples.size(); ++i)
    out[i] = tape.value(probs)(0, static_cast<long>(i));
  return out;
}

TrainResult train(const std::vector<TrainingExample>& train_set,
                  const std::vector<TrainingExample>& val_set, const ClassifierConfig& config) {
  if (train_set.empty() || val_set.empty())
    throw DataError("train: empty training or validation set");
  for (const auto& ex : val_set)
    if (ex.gold_label == 0) throw DataError("train: validation examples need gold labels");

  const int embed_dim = static_cast<int>(train_set.front().text_vectors.rows());
  ClassifierParams model = build_classifier(config, embed_dim);

  // Fine-tuning trains a private copy of every training-vocabulary word
  // vector; the tuned copies ship with the model artifact.
  std::unique_ptr<EmbeddingBank> bank;
  if (config.embedding_finetune) {
    bank = std::make_unique<EmbeddingBank>();
    for (const auto& ex : train_set) {
      for (size_t t = 0; t < ex.tokens.size(); ++t) {
        if (bank->index.count(ex.tokens[t])) continue;
        const int idx =
            bank->params.add("emb." + ex.tokens[t], embed_dim, 1);
        bank->params.value(idx) = ex.text_vectors.col(static_cast<long>(t));
        bank->index.emplace(ex.tokens[t], idx);
      }
    }
  }

  std::mt19937_64 rng(mix_seed(config.seed, 0x7261696e));
  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<int> val_gold;
  for (const auto& ex : val_set) val_gold.push_back(ex.gold_label);

  OptimizerState opt_state;
  nn::Tape<double> tape;
  TrainResult result;
  double best_val = -1;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int epochs_since_best = 0;
  nn::ParamSet<double> best_params = model.params;
  nn::ParamSet<double> best_emb;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool use_dropout = config.dropout > 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    size_t batch_start = 0;
    while (batch_start < order.size()) {
      const size_t batch_end =
          std::min(order.size(), batch_start + static_cast<size_t>(config.batch_size));
      model.params.zero_grads();
      if (bank) bank->params.zero_grads();
      for (size_t b = batch_start; b < batch_end; ++b) {
        const TrainingExample& ex = train_set[order[b]];
        std::vector<nn::Mat<double>> masks;
        if (use_dropout) {
          for (int width : config.mlp_hidden) {
            nn::Mat<double> mask(width, 1);
            for (long r = 0; r < width; ++r)
              mask(r, 0) = unit(rng) < config.dropout ? 0.0 : 1.0 / (1.0 - config.dropout);
            masks.push_back(std::move(mask));
          }
        }
        tape.reset();
        const int prob = example_forward(tape, model, ex, bank.get(),
                                         use_dropout ? &masks : nullptr);
        nn::Mat<double> target(1, 1);
        target(0, 0) = static_cast<double>(ex.weak_target);
        const int loss = tape.bce_mean(prob, std::move(target));
        loss_sum += tape.value(loss)(0, 0);
        tape.backward(loss);
      }
      const double inv = 1.0 / static_cast<double>(batch_end - batch_start);
      model.params.scale_grads(inv);
      if (bank) bank->params.scale_grads(inv);
      optimizer_step(config.optimizer, model.params, bank ? &bank->params : nullptr, opt_state);
      batch_start = batch_end;
    }
    const double train_loss = loss_sum / static_cast<double>(train_set.size());
    if (!std::isfinite(train_loss) || !model.params.all_finite())
      throw std::runtime_error("train: loss diverged (non-finite) at epoch " +
                               std::to_string(epoch));

    if (bank) {
      model.tuned_words.clear();
      for (const auto& [word, idx] : bank->index)
        model.tuned_words[word] = bank->params.value(idx).col(0);
    }
    // Validation features were built with the frozen embedding; when
    // fine-tuning, re-featurize the text branch with the tuned copies.
    std::vector<double> val_scores;
    if (bank) {
      std::vector<TrainingExample> val_tuned = val_set;
      for (auto& ex : val_tuned)
        for (size_t t = 0; t < ex.tokens.size(); ++t) {
          auto it = model.tuned_words.find(ex.tokens[t]);
          if (it != model.tuned_words.end())
            ex.text_vectors.col(static_cast<long>(t)) = it->second;
        }
      val_scores = predict_batch(model, val_tuned);
    } else {
      val_scores = predict_batch(model, val_set);
    }
    const double val_ba = balanced_accuracy_at(val_scores, val_gold, 0.5);
    double val_loss = 0;
    for (size_t i = 0; i < val_scores.size(); ++i)
      val_loss += nn::bce_loss(val_scores[i], val_gold[i] > 0 ? 1.0 : 0.0);
    val_loss /= static_cast<double>(val_scores.size());
    result.history.push_back({epoch, train_loss, val_ba});

    // Patience counts epochs without an accuracy improvement; among equally
    // accurate epochs the snapshot keeps the one with the lower val loss.
    const bool improved = val_ba > best_val;
    if (improved || (val_ba == best_val && val_loss < best_val_loss)) {
      best_val = val_ba;
      best_val_loss = val_loss;
      result.best_epoch = epoch;
      best_params = model.params;
      if (bank) best_emb = bank->params;
    }
    if (improved)
      epochs_since_best = 0;
    else
      ++epochs_since_best;
    if (epochs_since_best >= config.patience) break;
  }

  result.best_val = best_val;
  model.params = std::move(best_params);
  if (bank) {
    model.tuned_words.clear();
    for (const auto& [word, idx] : bank->index)
      model.tuned_words[word] = best_emb.value(idx).col(0);
  }
  result.model = std::move(model);
  return result;
}

// --- evaluation -----------------------------------------------------------------

std::vector<double> default_threshold_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 20; ++i) grid.push_back(static_cast<double>(i) * 0.05);
  return grid;
}

namespace {

SweepRow confusion_at(const std::vector<double>& scores, const std::vector<int>& gold,
                      double threshold) {
  SweepRow row;
  row.threshold = threshold;
  for (size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (gold[i] > 0)
      predicted ? ++row.tp : ++row.fn;
    else
      predicted ? ++row.fp : ++row.tn;
  }
  const long p = row.tp + row.fn, n = row.tn + row.fp;
  row.recall = static_cast<double>(row.tp) / static_cast<double>(p);
  row.specificity = static_cast<double>(row.tn) / static_cast<double>(n);
  row.balanced_accuracy = 0.5 * (row.recall + row.specificity);
  return row;
}

}  // namespace

EvalReport evaluate(const std::vector<double>& scores, const std::vector<int>& gold,
                    double threshold, const std::vector<double>& grid) {
  if (scores.size() != gold.size()) throw DataError("evaluate: scores/labels length mismatch");
  long p = 0, n = 0;
  for (int g : gold) {
    if (g > 0)
      ++p;
    else
      ++n;
  }
  if (p == 0 || n == 0)
    throw DataError("evaluate: gold labels must contain both classes");
  EvalReport report;
  report.at_threshold = confusion_at(scores, gold, threshold);
  for (double t : grid) report.sweep.push_back(confusion_at(scores, gold, t));
  return report;
}

std::string render_eval_report(const EvalReport& report) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "threshold %.2f  balanced_accuracy %.4f  recall %.4f  specificity %.4f  "
                "tp %ld fp %ld tn %ld fn %ld\n",
                report.at_threshold.threshold, report.at_threshold.balanced_accuracy,
                report.at_threshold.recall, report.at_threshold.specificity,
                report.at_threshold.tp, report.at_threshold.fp, report.at_threshold.tn,
                report.at_threshold.fn);
  out << buf;
  out << "\nthreshold  bal_acc   recall    specificity\n";
  for (const auto& row : report.sweep) {
    std::snprintf(buf, sizeof buf, "%9.2f  %8.4f  %8.4f  %11.4f\n", row.threshold,
                  row.balanced_accuracy, row.recall, row.specificity);
    out << buf;
  }
  return out.str();
}

std::string eval_report_to_json(const EvalReport& report) {
  auto row_json = [](const SweepRow& row) {
    return ordered_json{{"threshold", row.threshold},
                        {"balanced_accuracy", row.balanced_accuracy},
                        {"recall", row.recall},
                        {"specificity", row.specificity},
                        {"tp", row.tp},
                        {"fp", row.fp},
                        {"tn", row.tn},
                        {"fn", row.fn}};
  };
  ordered_json j;
  j["at_threshold"] = row_json(report.at_threshold);
  ordered_json sweep = ordered_json::array();
  for (const auto& row : report.sweep) sweep.push_back(row_json(row));
  j["sweep"] = std::move(sweep);
  return j.dump(2) + "\n";
}

// --- multi-run selection ----------------------------------------------------------

SelectionResult multi_run_select(runstore::RunStore& store, const std::string& task,
                                 const std::string& code_version,
                                 const std::vector<TrainingExample>& train_set,
                                 const std::vector<TrainingExample>& val_set,
                                 const ClassifierConfig& base_config, int n_runs, int rank,
                                 const std::map<std::string, std::string>& extra_artifacts,
                                 int jobs) {
  if (n_runs < 1 || rank < 1 || rank > n_runs)
    throw ConfigError("multi_run_select: need 1 <= rank <= runs");

  std::vector<RunOutcome> outcomes(static_cast<size_t>(n_runs));
  std::atomic<int> next{0};
  auto worker = [&]() {
    while (true) {
      const int i = next.fetch_add(1);
      if (i >= n_runs) return;
      ClassifierConfig config = base_config;
      config.seed = base_config.seed + static_cast<uint64_t>(i);
      RunOutcome& outcome = outcomes[static_cast<size_t>(i)];
      outcome.run_index = i;
      outcome.seed = config.seed;
      runstore::RunRecord record =
          store.start_run(task, classifier_config_to_json(config), code_version);
      outcome.run_id = record.run_id;
      try {
        TrainResult trained = train(train_set, val_set, config);
        store.log_artifact(record, "classifier", serialize_classifier(trained.model));
        for (const auto& [name, bytes] : extra_artifacts)
          store.log_artifact(record, name, bytes);
        store.finish_run(record,
                         {{"val_balanced_accuracy", trained.best_val},
                          {"best_epoch", static_cast<double>(trained.best_epoch)},
                          {"epochs", static_cast<double>(trained.history.size())}});
        outcome.val_balanced_accuracy = trained.best_val;
        outcome.best_epoch = trained.best_epoch;
      } catch (const std::exception& e) {
        store.fail_run(record, e.what());
        outcome.failed = true;
        outcome.error = e.what();
      }
    }
  };

  const int n_workers = std::max(1, std::min(jobs, n_runs));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < n_workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  std::vector<RunOutcome> ok;
  for (const auto& outcome : outcomes)
    if (!outcome.failed) ok.push_back(outcome);
  if (static_cast<int>(ok.size()) < rank)
    throw DataError("multi_run_select: only " + std::to_string(ok.size()) +
                    " runs succeeded, rank " + std::to_string(rank) + " requested");
  std::sort(ok.begin(), ok.end(), [](const RunOutcome& a, const RunOutcome& b) {
    if (a.val_balanced_accuracy != b.val_balanced_accuracy)
      return a.val_balanced_accuracy > b.val_balanced_accuracy;
    return a.seed < b.seed;
  });

  SelectionResult result;
  result.selected = ok[static_cast<size_t>(rank - 1)];
  result.runs = outcomes;
  return result;
}

}  // namespace txcat::classifier
