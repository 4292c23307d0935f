#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "txcat/embed.hpp"
#include "txcat/txprep.hpp"

namespace txcat::weaksup {

// +1 positive, -1 negative, 0 abstain.
using Vote = int8_t;

struct PatternParams {
  std::string expression;  // word-boundary wrapped before matching
  int polarity = 1;
};

struct FrequencyParams {
  double gap_lo = 0;
  double gap_hi = 0;
  int min_count = 2;
  double cv_cap = std::numeric_limits<double>::infinity();  // on |coeff_var|
  int polarity = 1;
};

struct AnchorParams {
  std::string anchor_word;
  double threshold = 0.5;  // in (-1, 1]
  int polarity = 1;
};

// op "not": mirror of one referenced function. op "and": fires `polarity`
// when every referenced function votes +1.
struct CompositeParams {
  std::string op;
  std::vector<std::string> refs;
  int polarity = 1;
};

struct LabelingFunction {
  std::string name;
  std::variant<PatternParams, FrequencyParams, AnchorParams, CompositeParams> params;
};

struct LabelMatrix {
  std::vector<std::string> group_ids;
  std::vector<std::string> lf_names;
  std::vector<Vote> votes;  // row-major, n_groups x n_lfs

  size_t rows() const { return group_ids.size(); }
  size_t cols() const { return lf_names.size(); }
  Vote at(size_t row, size_t col) const { return votes[row * cols() + col]; }
  bool all_abstain(size_t row) const;
};

struct LFStats {
  std::string name;
  double coverage = 0;
  double overlap = 0;
  double conflict = 0;
  std::optional<double> empirical_accuracy;
  int64_t n_votes = 0;
};

struct LFReport {
  std::vector<LFStats> per_lf;
  size_t n_rows = 0;
};

// Evaluates every function over every group. `model` may be null when no
// anchor functions are declared; anchor functions with a null model are a
// configuration error.
LabelMatrix apply_lfs(const std::vector<txprep::TransactionGroup>& groups,
                      const std::vector<LabelingFunction>& lfs,
                      const embed::EmbeddingModel* model);

// dev_labels: group_id -> +1/-1. Ids absent from the matrix are an error.
LFReport lf_report(const LabelMatrix& matrix,
                   const std::map<std::string, int>* dev_labels = nullptr);

// All vocabulary words at or above the cosine threshold to the anchor,
// sorted by descending similarity; the threshold-tuning diagnostic.
std::vector<std::pair<std::string, float>> expand_anchor(const embed::EmbeddingModel& model,
                                                         std::string_view anchor,
                                                         double threshold);

std::vector<LabelingFunction> load_lf_config(const std::string& path);
void save_lf_config(const std::string& path, const std::vector<LabelingFunction>& lfs);

void write_matrix_jsonl(const std::string& path, const LabelMatrix& matrix);
LabelMatrix read_matrix_jsonl(const std::string& path);

std::string render_report(const LFReport& report);

}  // namespace txcat::weaksup
