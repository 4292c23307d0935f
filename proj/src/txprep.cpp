#include "txcat/txprep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace txcat::txprep {

using ordered_json = nlohmann::ordered_json;

namespace {

// Folds one Unicode codepoint to lowercase ASCII. Latin-1 letters map to
// their base letter; anything else non-ASCII is dropped.
void fold_codepoint(uint32_t cp, std::string& out) {
  if (cp < 0x80) {
    char c = static_cast<char>(cp);
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    out.push_back(c);
    return;
  }
  if (cp >= 0xC0 && cp <= 0xFF) {
    // U+00C0..U+00FF base letters; '.' = drop.
    static const char* latin1 =
        "aaaaaaaceeeeiiii"
        "dnooooo.ouuuuy.s"
        "aaaaaaaceeeeiiii"
        "dnooooo.ouuuuy.y";
    char c = latin1[cp - 0xC0];
    if (c != '.') out.push_back(c);
    return;
  }
  // Other non-ASCII: drop.
}

// UTF-8 decode with invalid bytes replaced by a space.
std::string fold_to_ascii_lower(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  size_t i = 0;
  while (i < raw.size()) {
    const unsigned char b = static_cast<unsigned char>(raw[i]);
    uint32_t cp = 0;
    size_t len = 0;
    if (b < 0x80) {
      cp = b;
      len = 1;
    } else if ((b >> 5) == 0x6) {
      cp = b & 0x1f;
      len = 2;
    } else if ((b >> 4) == 0xe) {
      cp = b & 0x0f;
      len = 3;
    } else if ((b >> 3) == 0x1e) {
      cp = b & 0x07;
      len = 4;
    } else {
      out.push_back(' ');
      ++i;
      continue;
    }
    if (i + len > raw.size()) {
      out.push_back(' ');
      ++i;
      continue;
    }
    bool ok = true;
    for (size_t k = 1; k < len; ++k) {
      const unsigned char c = static_cast<unsigned char>(raw[i + k]);
      if ((c >> 6) != 0x2) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (c & 0x3f);
    }
    if (!ok) {
      out.push_back(' ');
      ++i;
      continue;
    }
    fold_codepoint(cp, out);
    i += len;
  }
  return out;
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_lower(char c) { return c >= 'a' && c <= 'z'; }
bool is_alnum(char c) { return is_digit(c) || is_lower(c); }

// Two or three slash- or dash-separated digit fields, e.g. 03/14 or 2024-01-15.
bool is_date_shape(std::string_view tok) {
  size_t fields = 0, run = 0;
  for (char c : tok) {
    if (is_digit(c)) {
      ++run;
      if (run > 4) return false;
    } else if (c == '/' || c == '-') {
      if (run == 0) return false;
      ++fields;
      run = 0;
    } else {
      return false;
    }
  }
  if (run == 0) return false;
  ++fields;
  return fields == 2 || fields == 3;
}

bool is_digit_run(std::string_view tok) {
  if (tok.empty()) return false;
  for (char c : tok)
    if (!is_digit(c)) return false;
  return true;
}

// Reference-code shape: length >= 6 with both letters and digits.
bool is_reference_code(std::string_view tok) {
  if (tok.size() < 6) return false;
  bool has_letter = false, has_digit = false;
  for (char c : tok) {
    has_letter |= is_lower(c);
    has_digit |= is_digit(c);
  }
  return has_letter && has_digit;
}

bool drop_token(std::string_view tok) {
  return is_date_shape(tok) || is_digit_run(tok) || is_reference_code(tok);
}

void normalize_into(std::string_view raw, std::vector<std::string>& out) {
  const std::string folded = fold_to_ascii_lower(raw);
  for (const std::string& tok : split_ws(folded)) {
    // Token filters run on the raw token first so that punctuation-glued
    // codes ("card#1234") are judged whole, then again on the pieces left
    // after punctuation is replaced by spaces.
    if (drop_token(tok)) continue;
    std::string spaced = tok;
    for (char& c : spaced)
      if (!is_alnum(c)) c = ' ';
    for (const std::string& piece : split_ws(spaced)) {
      if (drop_token(piece)) continue;
      out.push_back(piece);
    }
  }
}

}  // namespace

std::string render(const NormalizedText& text) {
  std::string out;
  for (size_t i = 0; i < text.tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += text.tokens[i];
  }
  return out;
}

NormalizedText normalize(std::string_view description,
                         const std::optional<std::string>& merchant_name) {
  NormalizedText result;
  normalize_into(description, result.tokens);
  if (merchant_name) normalize_into(*merchant_name, result.tokens);
  return result;
}

SparseSeries build_sparse_series(const std::vector<Transaction>& members) {
  std::vector<const Transaction*> sorted;
  sorted.reserve(members.size());
  for (const auto& m : members) sorted.push_back(&m);
  std::sort(sorted.begin(), sorted.end(), [](const Transaction* a, const Transaction* b) {
    if (a->date != b->date) return a->date > b->date;
    if (a->amount_cents != b->amount_cents) return a->amount_cents > b->amount_cents;
    return a->transaction_id < b->transaction_id;
  });
  SparseSeries series;
  series.entries.reserve(sorted.size());
  for (size_t i = 0; i < sorted.size(); ++i) {
    const int64_t delta = i == 0 ? 0 : sorted[i - 1]->date - sorted[i]->date;
    series.entries.push_back({sorted[i]->amount_cents, delta});
  }
  return series;
}

GroupAggregates compute_aggregates(const std::vector<Transaction>& members) {
  GroupAggregates agg;
  agg.count = static_cast<int64_t>(members.size());
  std::vector<double> amounts;
  amounts.reserve(members.size());
  std::vector<int64_t> dates;
  dates.reserve(members.size());
  for (const auto& m : members) {
    amounts.push_back(cents_to_value(m.amount_cents));
    dates.push_back(m.date);
  }
  std::sort(amounts.begin(), amounts.end());
  std::sort(dates.begin(), dates.end());

  const size_t n = amounts.size();
  agg.min_amount = amounts.front();
  agg.max_amount = amounts.back();
  double sum = 0;
  for (double a : amounts) sum += a;
  agg.mean = sum / static_cast<double>(n);
  if (n > 1) {
    double ss = 0;
    for (double a : amounts) ss += (a - agg.mean) * (a - agg.mean);
    agg.stddev = std::sqrt(ss / static_cast<double>(n - 1));
  }
  agg.median = n % 2 == 1 ? amounts[n / 2] : (amounts[n / 2 - 1] + amounts[n / 2]) / 2.0;
  if (agg.mean != 0) agg.coeff_var = agg.stddev / agg.mean;
  if (n > 1) {
    double gap_sum = 0;
    for (size_t i = 1; i < n; ++i) gap_sum += static_cast<double>(dates[i] - dates[i - 1]);
    agg.mean_gap_days = gap_sum / static_cast<double>(n - 1);
  }
  return agg;
}

std::vector<TransactionGroup> group(const std::vector<Transaction>& transactions) {
  std::map<std::pair<std::string, std::string>, TransactionGroup> keyed;
  for (const auto& txn : transactions) {
    const NormalizedText text = normalize(txn.description, txn.merchant_name);
    const auto key = std::make_pair(txn.account_id, render(text));
    auto [it, inserted] = keyed.try_emplace(key);
    if (inserted) {
      it->second.account_id = txn.account_id;
      it->second.normalized_text = text;
    }
    it->second.members.push_back(txn);
  }
  std::vector<TransactionGroup> out;
  out.reserve(keyed.size());
  for (auto& [key, grp] : keyed) {
    grp.series = build_sparse_series(grp.members);
    grp.aggregates = compute_aggregates(grp.members);
    out.push_back(std::move(grp));
  }
  return out;
}

// --- file formats -----------------------------------------------------------

namespace {

std::vector<std::string> parse_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out.push_back('"');
  return out;
}

Transaction from_fields(const std::string& account_id, const std::string& transaction_id,
                        const std::string& date, const std::string& amount,
                        const std::string& description, const std::string& merchant) {
  Transaction txn;
  txn.account_id = account_id;
  txn.transaction_id = transaction_id;
  txn.date = parse_date(date);
  txn.amount_cents = parse_amount_cents(amount);
  txn.description = description;
  if (!merchant.empty()) txn.merchant_name = merchant;
  return txn;
}

}  // namespace

std::vector<Transaction> read_transactions(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv") return read_transactions_csv(path);
  return read_transactions_jsonl(path);
}

std::vector<Transaction> read_transactions_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open transactions file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty transactions file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = parse_csv_row(line);
  auto col = [&](const std::string& name) -> int {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  };
  const int c_acct = col("account_id"), c_id = col("transaction_id"), c_date = col("date"),
            c_amount = col("amount"), c_desc = col("description"), c_merch = col("merchant_name");
  if (c_acct < 0 || c_id < 0 || c_date < 0 || c_amount < 0 || c_desc < 0)
    throw DataError("transactions CSV missing required columns in " + path);

  std::vector<Transaction> out;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = parse_csv_row(line);
    auto get = [&](int c) -> std::string {
      return c >= 0 && c < static_cast<int>(fields.size()) ? fields[c] : std::string{};
    };
    try {
      out.push_back(from_fields(get(c_acct), get(c_id), get(c_date), get(c_amount), get(c_desc),
                                get(c_merch)));
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Transaction> read_transactions_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open transactions file: " + path);
  std::vector<Transaction> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      std::string amount = j.at("amount").is_string()
                               ? j.at("amount").get<std::string>()
                               : nlohmann::json(j.at("amount")).dump();
      std::string merchant;
      if (j.contains("merchant_name") && !j.at("merchant_name").is_null())
        merchant = j.at("merchant_name").get<std::string>();
      out.push_back(from_fields(j.at("account_id").get<std::string>(),
                                j.at("transaction_id").get<std::string>(),
                                j.at("date").get<std::string>(), amount,
                                j.at("description").get<std::string>(), merchant));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_transactions_csv(const std::string& path, const std::vector<Transaction>& txns) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  out << "account_id,transaction_id,date,amount,description,merchant_name\n";
  for (const auto& t : txns) {
    out << csv_escape(t.account_id) << ',' << csv_escape(t.transaction_id) << ','
        << format_date(t.date) << ',' << format_amount(t.amount_cents) << ','
        << csv_escape(t.description) << ',' << csv_escape(t.merchant_name.value_or("")) << '\n';
  }
}

void write_transactions_jsonl(const std::string& path, const std::vector<Transaction>& txns) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  for (const auto& t : txns) {
    ordered_json j;
    j["account_id"] = t.account_id;
    j["transaction_id"] = t.transaction_id;
    j["date"] = format_date(t.date);
    j["amount"] = format_amount(t.amount_cents);
    j["description"] = t.description;
    if (t.merchant_name) j["merchant_name"] = *t.merchant_name;
    out << j.dump() << '\n';
  }
}

void write_groups_jsonl(const std::string& path, const std::vector<TransactionGroup>& groups) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  for (const auto& g : groups) {
    ordered_json j;
    j["group_id"] = g.id();
    j["account_id"] = g.account_id;
    j["text"] = g.rendered();
    ordered_json members = ordered_json::array();
    for (const auto& m : g.members) {
      ordered_json mj;
      mj["transaction_id"] = m.transaction_id;
      mj["date"] = format_date(m.date);
      mj["amount"] = format_amount(m.amount_cents);
      members.push_back(std::move(mj));
    }
    j["members"] = std::move(members);
    ordered_json series = ordered_json::array();
    for (const auto& e : g.series.entries)
      series.push_back(ordered_json{{"amount", format_amount(e.amount_cents)},
                                    {"delta_days", e.delta_days}});
    j["series"] = std::move(series);
    ordered_json agg;
    agg["max"] = g.aggregates.max_amount;
    agg["min"] = g.aggregates.min_amount;
    agg["count"] = g.aggregates.count;
    agg["mean"] = g.aggregates.mean;
    agg["std"] = g.aggregates.stddev;
    agg["median"] = g.aggregates.median;
    agg["coeff_var"] = g.aggregates.coeff_var ? ordered_json(*g.aggregates.coeff_var)
                                              : ordered_json(nullptr);
    agg["mean_gap_days"] = g.aggregates.mean_gap_days ? ordered_json(*g.aggregates.mean_gap_days)
                                                      : ordered_json(nullptr);
    j["aggregates"] = std::move(agg);
    out << j.dump() << '\n';
  }
}

std::vector<TransactionGroup> read_groups_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open groups file: " + path);
  std::vector<TransactionGroup> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TransactionGroup g;
      g.account_id = j.at("account_id").get<std::string>();
      g.normalized_text.tokens = split_ws(j.at("text").get<std::string>());
      for (const auto& mj : j.at("members")) {
        Transaction t;
        t.account_id = g.account_id;
        t.transaction_id = mj.at("transaction_id").get<std::string>();
        t.date = parse_date(mj.at("date").get<std::string>());
        t.amount_cents = parse_amount_cents(mj.at("amount").get<std::string>());
        g.members.push_back(std::move(t));
      }
      g.series = build_sparse_series(g.members);
      g.aggregates = compute_aggregates(g.members);
      out.push_back(std::move(g));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace txcat::txprep
