#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "txcat/txprep.hpp"

namespace txcat::embed {

struct EmbeddingConfig {
  int dim = 100;
  int min_n = 3;
  int max_n = 6;
  int window = 5;
  int negatives = 5;
  int epochs = 5;
  float learning_rate = 0.05f;
  int min_count = 5;
  int bucket_count = 100000;
  uint64_t seed = 1;
  int workers = 1;
};

// Trained subword skip-gram model. Word vectors are stored already composed
// (mean of the trained word vector and its n-gram vectors); the n-gram table
// is kept for out-of-vocabulary composition.
struct EmbeddingModel {
  EmbeddingConfig config;
  std::vector<std::string> vocab;  // count-descending, ties lexicographic
  std::unordered_map<std::string, int> vocab_index;
  Eigen::MatrixXf word_vectors;   // dim x |vocab|
  Eigen::MatrixXf ngram_vectors;  // dim x bucket_count

  int dim() const { return config.dim; }
  bool contains(std::string_view word) const {
    return vocab_index.find(std::string(word)) != vocab_index.end();
  }
};

struct TrainStats {
  std::vector<double> epoch_loss;       // mean negative-sampling loss per epoch
  double first_epoch_front_loss = 0;    // mean loss over the first half of epoch 1
  double first_epoch_back_loss = 0;     // mean loss over the second half of epoch 1
};

// Skip-gram with negative sampling over the normalized corpus. Single-worker
// mode is deterministic bit-for-bit under a fixed seed; extra workers update
// the shared tables without locks.
EmbeddingModel train_embedding(const std::vector<txprep::NormalizedText>& corpus,
                               const EmbeddingConfig& config, TrainStats* stats = nullptr);

// Hashed character n-gram ids of "<word>"; boundary markers included.
std::vector<uint32_t> subword_ids(std::string_view word, int min_n, int max_n, int bucket_count);

// In-vocabulary: the stored composed vector. OOV: mean of the word's n-gram
// table rows; zero when the word yields no n-grams.
Eigen::VectorXf vector(const EmbeddingModel& model, std::string_view word);

// Cosine with the zero-vector case pinned to 0.
float cosine(const Eigen::VectorXf& a, const Eigen::VectorXf& b);

// Top-k vocabulary words by cosine to vector(word); query word excluded,
// ties broken lexicographically.
std::vector<std::pair<std::string, float>> nearest_neighbors(const EmbeddingModel& model,
                                                             std::string_view word, int k);

// Max over sentence tokens of cosine(vector(token), anchor); -1 for an empty
// sentence so downstream anchor functions abstain.
float max_word_similarity(const EmbeddingModel& model, const txprep::NormalizedText& sentence,
                          const Eigen::VectorXf& anchor);

void save(const EmbeddingModel& model, const std::string& path);
EmbeddingModel load(const std::string& path);
void export_text(const EmbeddingModel& model, const std::string& path);

}  // namespace txcat::embed
