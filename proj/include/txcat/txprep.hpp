#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "txcat/common.hpp"

namespace txcat::txprep {

struct Transaction {
  std::string account_id;
  int64_t date = 0;  // days since 1970-01-01
  int64_t amount_cents = 0;
  std::string description;
  std::optional<std::string> merchant_name;
  std::string transaction_id;
};

struct NormalizedText {
  std::vector<std::string> tokens;

  bool operator==(const NormalizedText&) const = default;
};

std::string render(const NormalizedText& text);

// Total, deterministic, idempotent cleanup of a raw transaction description.
// Lowercases and folds to ASCII, strips date-shaped / digit-run /
// reference-code tokens, replaces remaining punctuation with spaces, and
// appends the merchant name normalized by the same rules.
NormalizedText normalize(std::string_view description,
                         const std::optional<std::string>& merchant_name = std::nullopt);

struct SparseEntry {
  int64_t amount_cents = 0;
  int64_t delta_days = 0;
};

// Most-recent-first (amount, delta-days) encoding of a group's activity.
// entries[0].delta_days == 0; entries[i].delta_days is the day gap between
// entry i and the more recent entry i-1.
struct SparseSeries {
  std::vector<SparseEntry> entries;
};

struct GroupAggregates {
  double max_amount = 0;
  double min_amount = 0;
  int64_t count = 0;
  double mean = 0;
  double stddev = 0;  // sample (n-1); 0 when count == 1
  double median = 0;
  std::optional<double> coeff_var;      // std/mean; empty when mean == 0
  std::optional<double> mean_gap_days;  // empty when count < 2
};

struct TransactionGroup {
  std::string account_id;
  NormalizedText normalized_text;
  std::vector<Transaction> members;
  SparseSeries series;
  GroupAggregates aggregates;

  std::string rendered() const { return render(normalized_text); }
  std::string id() const { return group_id(account_id, rendered()); }
};

SparseSeries build_sparse_series(const std::vector<Transaction>& members);
GroupAggregates compute_aggregates(const std::vector<Transaction>& members);

// Partition by (account_id, rendered normalized text), sorted by that key.
std::vector<TransactionGroup> group(const std::vector<Transaction>& transactions);

// --- file formats -----------------------------------------------------------

// CSV or JSON-lines picked by extension (.csv / anything else = JSONL).
// Fields: account_id, transaction_id, date (ISO-8601), amount (decimal),
// description, merchant_name (optional).
std::vector<Transaction> read_transactions(const std::string& path);
std::vector<Transaction> read_transactions_csv(const std::string& path);
std::vector<Transaction> read_transactions_jsonl(const std::string& path);
void write_transactions_csv(const std::string& path, const std::vector<Transaction>& txns);
void write_transactions_jsonl(const std::string& path, const std::vector<Transaction>& txns);

void write_groups_jsonl(const std::string& path, const std::vector<TransactionGroup>& groups);
std::vector<TransactionGroup> read_groups_jsonl(const std::string& path);

}  // namespace txcat::txprep
