#include "txcat/embed.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <thread>

namespace txcat::embed {

namespace {

constexpr size_t kNegativeTableSize = 1 << 20;
constexpr uint32_t kMagic = 0x54584531;  // "TXE1"

uint32_t fnv1a(std::string_view s) {
  uint32_t h = 2166136261u;
  for (unsigned char c : s) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

struct Vocabulary {
  std::vector<std::string> words;
  std::vector<int64_t> counts;
  std::unordered_map<std::string, int> index;
};

Vocabulary build_vocab(const std::vector<txprep::NormalizedText>& corpus, int min_count) {
  std::unordered_map<std::string, int64_t> freq;
  for (const auto& sent : corpus)
    for (const auto& tok : sent.tokens) ++freq[tok];
  std::vector<std::pair<std::string, int64_t>> kept;
  for (auto& [word, count] : freq)
    if (count >= min_count) kept.emplace_back(word, count);
  if (kept.empty()) throw DataError("embedding: empty vocabulary after min_count filtering");
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary vocab;
  for (auto& [word, count] : kept) {
    vocab.index.emplace(word, static_cast<int>(vocab.words.size()));
    vocab.words.push_back(word);
    vocab.counts.push_back(count);
  }
  return vocab;
}

std::vector<int> build_negative_table(const std::vector<int64_t>& counts) {
  double z = 0;
  for (int64_t c : counts) z += std::pow(static_cast<double>(c), 0.75);
  std::vector<int> table(kNegativeTableSize);
  size_t pos = 0;
  double cum = std::pow(static_cast<double>(counts[0]), 0.75) / z;
  for (size_t i = 0; i < table.size(); ++i) {
    table[i] = static_cast<int>(pos);
    if (static_cast<double>(i) / static_cast<double>(table.size()) > cum &&
        pos + 1 < counts.size()) {
      ++pos;
      cum += std::pow(static_cast<double>(counts[pos]), 0.75) / z;
    }
  }
  return table;
}

float sigmoidf(float x) { return 1.0f / (1.0f + std::exp(-x)); }

struct Shared {
  const EmbeddingConfig* cfg;
  const std::vector<std::vector<int>>* sentences;    // token ids per sentence
  const std::vector<std::vector<uint32_t>>* ngrams;  // per vocab word
  const std::vector<int>* neg_table;
  Eigen::MatrixXf* in_words;
  Eigen::MatrixXf* in_ngrams;
  Eigen::MatrixXf* out_words;
  std::atomic<uint64_t>* progress;
  uint64_t total_steps;
};

// One worker pass over its sentence shard for all epochs. Loss tracking is
// meaningful in single-worker mode.
void train_worker(const Shared& sh, int worker, int n_workers, TrainStats* stats) {
  const auto& cfg = *sh.cfg;
  std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<uint64_t>(worker)));
  std::uniform_int_distribution<int> window_dist(1, cfg.window);

  const int dim = cfg.dim;
  Eigen::VectorXf hidden(dim), grad_hidden(dim);

  double loss_sum = 0;
  uint64_t loss_n = 0;
  double front_sum = 0, back_sum = 0;
  uint64_t front_n = 0, back_n = 0;
  const uint64_t epoch_steps = sh.total_steps / static_cast<uint64_t>(cfg.epochs);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t si = static_cast<size_t>(worker); si < sh.sentences->size();
         si += static_cast<size_t>(n_workers)) {
      const auto& sent = (*sh.sentences)[si];
      for (size_t i = 0; i < sent.size(); ++i) {
        const uint64_t done = sh.progress->fetch_add(1, std::memory_order_relaxed);
        const float lr =
            cfg.learning_rate *
            std::max(1e-4f, 1.0f - static_cast<float>(done) / static_cast<float>(sh.total_steps));
        const int center = sent[i];
        const auto& subs = (*sh.ngrams)[static_cast<size_t>(center)];
        const float comp = 1.0f / static_cast<float>(1 + subs.size());

        const int b = window_dist(rng);
        for (int off = -b; off <= b; ++off) {
          if (off == 0) continue;
          const long j = static_cast<long>(i) + off;
          if (j < 0 || j >= static_cast<long>(sent.size())) continue;
          const int target = sent[static_cast<size_t>(j)];

          hidden = sh.in_words->col(center);
          for (uint32_t g : subs) hidden += sh.in_ngrams->col(static_cast<int>(g));
          hidden *= comp;
          grad_hidden.setZero();

          double pair_loss = 0;
          for (int neg = 0; neg <= cfg.negatives; ++neg) {
            int word;
            float label;
            if (neg == 0) {
              word = target;
              label = 1.0f;
            } else {
              word = (*sh.neg_table)[rng() & (kNegativeTableSize - 1)];
              for (int tries = 0; word == target && tries < 8; ++tries)
                word = (*sh.neg_table)[rng() & (kNegativeTableSize - 1)];
              if (word == target) continue;  // single-word vocabulary
              label = 0.0f;
            }
            auto out_col = sh.out_words->col(word);
            const float score = sigmoidf(hidden.dot(out_col));
            const float g = lr * (label - score);
            grad_hidden += g * out_col;
            out_col += g * hidden;
            pair_loss -= std::log(std::max(1e-10f, label > 0.5f ? score : 1.0f - score));
          }
          sh.in_words->col(center) += comp * grad_hidden;
          for (uint32_t g : subs) sh.in_ngrams->col(static_cast<int>(g)) += comp * grad_hidden;

          loss_sum += pair_loss;
          ++loss_n;
          if (stats && epoch == 0) {
            if (done < epoch_steps / 2) {
              front_sum += pair_loss;
              ++front_n;
            } else if (done < epoch_steps) {
              back_sum += pair_loss;
              ++back_n;
            }
          }
        }
      }
    }
    if (stats && worker == 0) {
      stats->epoch_loss.push_back(loss_n ? loss_sum / static_cast<double>(loss_n) : 0.0);
      loss_sum = 0;
      loss_n = 0;
    }
  }
  if (stats && worker == 0) {
    stats->first_epoch_front_loss = front_n ? front_sum / static_cast<double>(front_n) : 0.0;
    stats->first_epoch_back_loss = back_n ? back_sum / static_cast<double>(back_n) : 0.0;
  }
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

}  // namespace

std::vector<uint32_t> subword_ids(std::string_view word, int min_n, int max_n, int bucket_count) {
  std::string marked = "<";
  marked += word;
  marked += ">";
  std::vector<uint32_t> ids;
  const int len = static_cast<int>(marked.size());
  for (int start = 0; start < len; ++start) {
    for (int n = min_n; n <= max_n && start + n <= len; ++n) {
      ids.push_back(fnv1a(std::string_view(marked).substr(static_cast<size_t>(start),
                                                          static_cast<size_t>(n))) %
                    static_cast<uint32_t>(bucket_count));
    }
  }
  return ids;
}

EmbeddingModel train_embedding(const std::vector<txprep::NormalizedText>& corpus,
                               const EmbeddingConfig& config, TrainStats* stats) {
  if (config.dim < 1 || config.min_n < 1 || config.max_n < config.min_n ||
      config.negatives < 1 || config.bucket_count < 1 || config.window < 1 ||
      config.epochs < 1 || config.workers < 1)
    throw ConfigError("embedding: invalid config");

  Vocabulary vocab = build_vocab(corpus, config.min_count);
  const int n_words = static_cast<int>(vocab.words.size());

  std::vector<std::vector<int>> sentences;
  sentences.reserve(corpus.size());
  uint64_t n_tokens = 0;
  for (const auto& sent : corpus) {
    std::vector<int> ids;
    for (const auto& tok : sent.tokens) {
      auto it = vocab.index.find(tok);
      if (it != vocab.index.end()) ids.push_back(it->second);
    }
    n_tokens += ids.size();
    sentences.push_back(std::move(ids));
  }

  std::vector<std::vector<uint32_t>> ngrams(static_cast<size_t>(n_words));
  for (int w = 0; w < n_words; ++w)
    ngrams[static_cast<size_t>(w)] =
        subword_ids(vocab.words[static_cast<size_t>(w)], config.min_n, config.max_n,
                    config.bucket_count);

  const std::vector<int> neg_table = build_negative_table(vocab.counts);

  // fastText-style init: inputs uniform in +-1/dim, outputs zero.
  std::mt19937_64 init_rng(config.seed);
  std::uniform_real_distribution<float> init(-1.0f / static_cast<float>(config.dim),
                                             1.0f / static_cast<float>(config.dim));
  Eigen::MatrixXf in_words(config.dim, n_words);
  Eigen::MatrixXf in_ngrams(config.dim, config.bucket_count);
  for (int c = 0; c < n_words; ++c)
    for (int r = 0; r < config.dim; ++r) in_words(r, c) = init(init_rng);
  for (int c = 0; c < config.bucket_count; ++c)
    for (int r = 0; r < config.dim; ++r) in_ngrams(r, c) = init(init_rng);
  Eigen::MatrixXf out_words = Eigen::MatrixXf::Zero(config.dim, n_words);

  std::atomic<uint64_t> progress{0};
  Shared shared{&config,    &sentences, &ngrams,   &neg_table,
                &in_words,  &in_ngrams, &out_words, &progress,
                std::max<uint64_t>(1, n_tokens * static_cast<uint64_t>(config.epochs))};

  if (config.workers == 1) {
    train_worker(shared, 0, 1, stats);
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < config.workers; ++w)
      threads.emplace_back(train_worker, std::cref(shared), w, config.workers,
                           w == 0 ? stats : nullptr);
    for (auto& t : threads) t.join();
  }

  EmbeddingModel model;
  model.config = config;
  model.vocab = std::move(vocab.words);
  model.vocab_index = std::move(vocab.index);
  model.ngram_vectors = std::move(in_ngrams);
  model.word_vectors.resize(config.dim, n_words);
  for (int w = 0; w < n_words; ++w) {
    Eigen::VectorXf composed = in_words.col(w);
    for (uint32_t g : ngrams[static_cast<size_t>(w)])
      composed += model.ngram_vectors.col(static_cast<int>(g));
    model.word_vectors.col(w) =
        composed / static_cast<float>(1 + ngrams[static_cast<size_t>(w)].size());
  }
  return model;
}

Eigen::VectorXf vector(const EmbeddingModel& model, std::string_view word) {
  auto it = model.vocab_index.find(std::string(word));
  if (it != model.vocab_index.end()) return model.word_vectors.col(it->second);
  const auto ids = subword_ids(word, model.config.min_n, model.config.max_n,
                               model.config.bucket_count);
  Eigen::VectorXf v = Eigen::VectorXf::Zero(model.config.dim);
  if (ids.empty()) return v;
  for (uint32_t g : ids) v += model.ngram_vectors.col(static_cast<int>(g));
  return v / static_cast<float>(ids.size());
}

float cosine(const Eigen::VectorXf& a, const Eigen::VectorXf& b) {
  const float na = a.norm(), nb = b.norm();
  if (na == 0.0f || nb == 0.0f) return 0.0f;
  return a.dot(b) / (na * nb);
}

std::vector<std::pair<std::string, float>> nearest_neighbors(const EmbeddingModel& model,
                                                             std::string_view word, int k) {
  if (k < 1) throw ConfigError("nearest_neighbors: k must be >= 1");
  const Eigen::VectorXf query = vector(model, word);
  std::vector<std::pair<std::string, float>> scored;
  scored.reserve(model.vocab.size());
  for (size_t i = 0; i < model.vocab.size(); ++i) {
    if (model.vocab[i] == word) continue;
    scored.emplace_back(model.vocab[i], cosine(query, model.word_vectors.col(static_cast<int>(i))));
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (scored.size() > static_cast<size_t>(k)) scored.resize(static_cast<size_t>(k));
  return scored;
}

float max_word_similarity(const EmbeddingModel& model, const txprep::NormalizedText& sentence,
                          const Eigen::VectorXf& anchor) {
  if (sentence.tokens.empty()) return -1.0f;
  float best = -1.0f;
  for (const auto& tok : sentence.tokens)
    best = std::max(best, cosine(vector(model, tok), anchor));
  return best;
}

void save(const EmbeddingModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write embedding file: " + path);
  write_pod(out, kMagic);
  write_pod<uint32_t>(out, 1);  // version
  const auto& c = model.config;
  write_pod<int32_t>(out, c.dim);
  write_pod<int32_t>(out, c.min_n);
  write_pod<int32_t>(out, c.max_n);
  write_pod<int32_t>(out, c.window);
  write_pod<int32_t>(out, c.negatives);
  write_pod<int32_t>(out, c.epochs);
  write_pod(out, c.learning_rate);
  write_pod<int32_t>(out, c.min_count);
  write_pod<int32_t>(out, c.bucket_count);
  write_pod(out, c.seed);
  write_pod<uint64_t>(out, model.vocab.size());
  for (const auto& w : model.vocab) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(w.size()));
    out.write(w.data(), static_cast<std::streamsize>(w.size()));
  }
  out.write(reinterpret_cast<const char*>(model.word_vectors.data()),
            static_cast<std::streamsize>(sizeof(float) * model.word_vectors.size()));
  out.write(reinterpret_cast<const char*>(model.ngram_vectors.data()),
            static_cast<std::streamsize>(sizeof(float) * model.ngram_vectors.size()));
  if (!out) throw DataError("write failed: " + path);
}

EmbeddingModel load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open embedding file: " + path);
  if (read_pod<uint32_t>(in) != kMagic) throw DataError("not an embedding file: " + path);
  if (read_pod<uint32_t>(in) != 1) throw DataError("unsupported embedding version: " + path);
  EmbeddingModel model;
  auto& c = model.config;
  c.dim = read_pod<int32_t>(in);
  c.min_n = read_pod<int32_t>(in);
  c.max_n = read_pod<int32_t>(in);
  c.window = read_pod<int32_t>(in);
  c.negatives = read_pod<int32_t>(in);
  c.epochs = read_pod<int32_t>(in);
  c.learning_rate = read_pod<float>(in);
  c.min_count = read_pod<int32_t>(in);
  c.bucket_count = read_pod<int32_t>(in);
  c.seed = read_pod<uint64_t>(in);
  const uint64_t n_words = read_pod<uint64_t>(in);
  model.vocab.reserve(n_words);
  for (uint64_t i = 0; i < n_words; ++i) {
    const uint32_t len = read_pod<uint32_t>(in);
    std::string w(len, '\0');
    in.read(w.data(), len);
    model.vocab_index.emplace(w, static_cast<int>(i));
    model.vocab.push_back(std::move(w));
  }
  model.word_vectors.resize(c.dim, static_cast<int>(n_words));
  in.read(reinterpret_cast<char*>(model.word_vectors.data()),
          static_cast<std::streamsize>(sizeof(float) * model.word_vectors.size()));
  model.ngram_vectors.resize(c.dim, c.bucket_count);
  in.read(reinterpret_cast<char*>(model.ngram_vectors.data()),
          static_cast<std::streamsize>(sizeof(float) * model.ngram_vectors.size()));
  if (!in) throw DataError("truncated embedding file: " + path);
  return model;
}

void export_text(const EmbeddingModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  out << model.vocab.size() << ' ' << model.config.dim << '\n';
  for (size_t i = 0; i < model.vocab.size(); ++i) {
    out << model.vocab[i];
    for (int r = 0; r < model.config.dim; ++r)
      out << ' ' << model.word_vectors(r, static_cast<int>(i));
    out << '\n';
  }
}

}  // namespace txcat::embed
