#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "txcat/txprep.hpp"

namespace txcat::synthgen {

struct NoiseSpec {
  double truncation_prob = 0;
  double vowel_drop_prob = 0;
  double ref_code_prob = 0;
  double digit_run_prob = 0;
};

struct RecurrenceSpec {
  double gap_mean_days = 30;
  double gap_std_days = 2;
};

// Group base amount is log-normal across instances; individual transactions
// jitter around the base multiplicatively.
struct AmountSpec {
  double log_mean = 4.0;
  double log_sigma = 0.5;
  double within_jitter = 0.02;
  bool credit = false;
};

struct CategorySpec {
  std::string name;
  double prevalence = 0.1;
  std::vector<std::string> merchant_vocab;
  int phrase_min = 2;
  int phrase_max = 3;
  AmountSpec amount;
  std::optional<RecurrenceSpec> recurrence;
  int min_events = 2;  // event count range for non-recurring categories
  int max_events = 6;
  NoiseSpec noise;
  double merchant_field_prob = 0;
};

struct SynthConfig {
  int n_accounts = 100;
  int64_t span_start = 0;
  int64_t span_end = 365;
  std::vector<CategorySpec> categories;
  uint64_t seed = 1;
};

struct TruthEntry {
  std::string account_id;
  std::string text;  // rendered normalized key, assigned before injected noise
  std::vector<std::string> categories;
};

struct SynthResult {
  std::vector<txprep::Transaction> transactions;
  std::vector<TruthEntry> truth;
};

// Deterministic under (config, seed); each account derives its own stream so
// accounts can be generated independently.
SynthResult generate(const SynthConfig& config);

SynthConfig load_synth_config(const std::string& path);

void write_truth_jsonl(const std::string& path, const std::vector<TruthEntry>& truth);
std::vector<TruthEntry> read_truth_jsonl(const std::string& path);

// Account-disjoint split: indices into `groups` per fold.
struct SplitIndices {
  std::vector<size_t> train, validation, test;
};
SplitIndices split(const std::vector<txprep::TransactionGroup>& groups,
                   const std::array<double, 3>& fractions, uint64_t seed);

// --- planted-cluster corpus -------------------------------------------------
// Sentences drawn from per-category vocabularies, used to exercise embedding
// and anchoring behavior where the expected neighborhoods are known.

struct PlantedCorpus {
  std::vector<txprep::NormalizedText> sentences;
  std::map<std::string, std::string> word_category;
  std::vector<std::string> categories;
};

using CategoryVocab = std::vector<std::pair<std::string, std::vector<std::string>>>;

CategoryVocab default_category_vocab();

PlantedCorpus make_planted_corpus(const CategoryVocab& vocab, int sentences_per_category,
                                  int min_len, int max_len, uint64_t seed);

}  // namespace txcat::synthgen
