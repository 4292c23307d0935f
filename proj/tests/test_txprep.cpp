#include <doctest.h>

#include <random>
#include <set>

#include "support/tmpdir.hpp"
#include "txcat/txprep.hpp"

using namespace txcat;
using namespace txcat::txprep;

namespace {

Transaction make_txn(const std::string& account, const std::string& id, const std::string& date,
                     const std::string& amount, const std::string& desc,
                     std::optional<std::string> merchant = std::nullopt) {
  Transaction t;
  t.account_id = account;
  t.transaction_id = id;
  t.date = parse_date(date);
  t.amount_cents = parse_amount_cents(amount);
  t.description = desc;
  t.merchant_name = std::move(merchant);
  return t;
}

}  // namespace

TEST_CASE("normalize strips dates, digit runs, and reference codes") {
  const auto got = normalize("POS PURCHASE 03/14 CARD#1234 STARBUCKS #0552 SEATTLE WA");
  CHECK(got.tokens == std::vector<std::string>{"pos", "purchase", "starbucks", "seattle", "wa"});
}

TEST_CASE("normalize of empty input is empty") {
  CHECK(normalize("").tokens.empty());
  CHECK(normalize("   \t  ").tokens.empty());
}

TEST_CASE("normalize appends merchant tokens and drops mixed codes") {
  const auto got = normalize("ACH Pmt X9F7Q23A VERIZON", std::optional<std::string>("Verizon Wireless"));
  CHECK(got.tokens ==
        std::vector<std::string>{"ach", "pmt", "verizon", "verizon", "wireless"});
}

TEST_CASE("normalize folds accents and tolerates invalid bytes") {
  CHECK(normalize("Caf\xc3\xa9 R\xc3\x89MY").tokens ==
        std::vector<std::string>{"cafe", "remy"});
  // lone continuation byte + truncated sequence
  const auto got = normalize("ok\x80 caf\xc3");
  CHECK(got.tokens == std::vector<std::string>{"ok", "caf"});
}

TEST_CASE("normalize keeps short alphanumeric tokens") {
  CHECK(normalize("4sq co-op").tokens == std::vector<std::string>{"4sq", "co", "op"});
  CHECK(normalize("2024-01-15 12-31 5/6/07 payment").tokens ==
        std::vector<std::string>{"payment"});
}

TEST_CASE("normalization is idempotent on random noisy strings") {
  std::mt19937_64 rng(42);
  const std::string alphabet = "abcXYZ0123456789#/-.,*&$ \tstarbucks\xc3\xa9";
  std::uniform_int_distribution<size_t> pick(0, alphabet.size() - 1);
  std::uniform_int_distribution<int> len(0, 60);
  for (int iter = 0; iter < 500; ++iter) {
    std::string raw;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) raw.push_back(alphabet[pick(rng)]);
    const auto once = normalize(raw);
    const auto twice = normalize(render(once));
    CHECK(once.tokens == twice.tokens);
  }
}

TEST_CASE("normalization is invariant to digit values, case, punctuation flavor, whitespace") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> digit(0, 9);
  const std::string puncts = ".,;#*!?";
  std::uniform_int_distribution<size_t> pickp(0, puncts.size() - 1);
  const std::vector<std::string> bases = {
      "POS purchase 03/14 CARD#1234 starbucks #0552 seattle",
      "ACH pmt X9F7Q23A verizon 12345 bill.pay",
      "check 99 deposit ref AB12CD34 store",
  };
  for (const auto& base : bases) {
    const auto expected = normalize(base);
    for (int iter = 0; iter < 100; ++iter) {
      std::string mutated = base;
      for (char& c : mutated) {
        if (c >= '0' && c <= '9') c = static_cast<char>('0' + digit(rng));
        else if (std::isalpha(static_cast<unsigned char>(c)) && digit(rng) < 5)
          c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        else if (puncts.find(c) != std::string::npos) c = puncts[pickp(rng)];
      }
      // expand some spaces into runs
      std::string spaced;
      for (char c : mutated) {
        spaced.push_back(c);
        if (c == ' ' && digit(rng) < 4) spaced += "  ";
      }
      CHECK(normalize(spaced).tokens == expected.tokens);
    }
  }
}

TEST_CASE("group keys on account and normalized text") {
  SUBCASE("digit-only differences collapse to one group") {
    const auto groups = group({make_txn("a1", "t1", "2024-01-01", "10.00", "NETFLIX 123"),
                               make_txn("a1", "t2", "2024-02-01", "10.00", "NETFLIX 999")});
    REQUIRE(groups.size() == 1);
    CHECK(groups[0].members.size() == 2);
  }
  SUBCASE("same text different account splits") {
    const auto groups = group({make_txn("a1", "t1", "2024-01-01", "10.00", "NETFLIX"),
                               make_txn("a2", "t2", "2024-02-01", "10.00", "NETFLIX")});
    CHECK(groups.size() == 2);
  }
  SUBCASE("empty input") { CHECK(group({}).empty()); }
}

TEST_CASE("grouping partitions the input") {
  std::mt19937_64 rng(3);
  std::vector<Transaction> txns;
  std::uniform_int_distribution<int> acct(0, 5), desc(0, 7), day(0, 200);
  for (int i = 0; i < 300; ++i) {
    txns.push_back(make_txn("a" + std::to_string(acct(rng)), "t" + std::to_string(i),
                            format_date(19000 + day(rng)), "12.34",
                            "vendor " + std::to_string(desc(rng)) + " pay"));
  }
  const auto groups = group(txns);
  size_t total = 0;
  std::set<std::string> seen;
  for (const auto& g : groups) {
    total += g.members.size();
    for (const auto& m : g.members) CHECK(seen.insert(m.transaction_id).second);
  }
  CHECK(total == txns.size());
}

TEST_CASE("sparse series is most-recent-first with documented tie-break") {
  SUBCASE("two same-day entries order by descending amount") {
    const auto series =
        build_sparse_series({make_txn("a", "t1", "2024-01-01", "50.00", "x"),
                             make_txn("a", "t2", "2024-01-15", "50.00", "x"),
                             make_txn("a", "t3", "2024-01-15", "10.00", "x")});
    REQUIRE(series.entries.size() == 3);
    CHECK(series.entries[0].amount_cents == 5000);
    CHECK(series.entries[0].delta_days == 0);
    CHECK(series.entries[1].amount_cents == 1000);
    CHECK(series.entries[1].delta_days == 0);
    CHECK(series.entries[2].amount_cents == 5000);
    CHECK(series.entries[2].delta_days == 14);
  }
  SUBCASE("single transaction") {
    const auto series = build_sparse_series({make_txn("a", "t1", "2024-03-05", "7.25", "x")});
    REQUIRE(series.entries.size() == 1);
    CHECK(series.entries[0].amount_cents == 725);
    CHECK(series.entries[0].delta_days == 0);
  }
  SUBCASE("same-day equal amounts give zero deltas") {
    const auto series = build_sparse_series({make_txn("a", "t1", "2024-01-01", "5.00", "x"),
                                             make_txn("a", "t2", "2024-01-01", "5.00", "x")});
    CHECK(series.entries[0].delta_days == 0);
    CHECK(series.entries[1].delta_days == 0);
  }
}

TEST_CASE("sparse series round-trips the sorted date sequence") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> day(0, 400), cents(1, 100000), count(1, 20);
  for (int iter = 0; iter < 200; ++iter) {
    std::vector<Transaction> members;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
      Transaction t;
      t.account_id = "a";
      t.transaction_id = "t" + std::to_string(i);
      t.date = 19000 + day(rng);
      t.amount_cents = cents(rng);
      members.push_back(t);
    }
    const auto series = build_sparse_series(members);
    std::vector<int64_t> dates;
    for (const auto& m : members) dates.push_back(m.date);
    std::sort(dates.begin(), dates.end(), std::greater<>());
    int64_t cursor = dates.front();
    for (size_t i = 0; i < series.entries.size(); ++i) {
      cursor -= i == 0 ? 0 : series.entries[i].delta_days;
      CHECK(cursor == dates[i]);
    }
  }
}

TEST_CASE("aggregates use sample std and midpoint median") {
  SUBCASE("spec arithmetic") {
    const auto agg = compute_aggregates({make_txn("a", "t1", "2024-01-01", "10.00", "x"),
                                         make_txn("a", "t2", "2024-01-15", "20.00", "x"),
                                         make_txn("a", "t3", "2024-01-29", "30.00", "x")});
    CHECK(agg.count == 3);
    CHECK(agg.mean == doctest::Approx(20.0));
    CHECK(agg.min_amount == doctest::Approx(10.0));
    CHECK(agg.max_amount == doctest::Approx(30.0));
    CHECK(agg.median == doctest::Approx(20.0));
    CHECK(agg.stddev == doctest::Approx(10.0));
    REQUIRE(agg.coeff_var.has_value());
    CHECK(*agg.coeff_var == doctest::Approx(0.5));
    REQUIRE(agg.mean_gap_days.has_value());
    CHECK(*agg.mean_gap_days == doctest::Approx(14.0));
  }
  SUBCASE("single member sentinels") {
    const auto agg = compute_aggregates({make_txn("a", "t1", "2024-01-01", "7.00", "x")});
    CHECK(agg.stddev == 0.0);
    CHECK_FALSE(agg.mean_gap_days.has_value());
  }
  SUBCASE("zero mean has no coefficient of variation") {
    const auto agg = compute_aggregates({make_txn("a", "t1", "2024-01-01", "5.00", "x"),
                                         make_txn("a", "t2", "2024-01-02", "-5.00", "x")});
    CHECK_FALSE(agg.coeff_var.has_value());
  }
}

TEST_CASE("aggregates match brute-force recomputation on random groups") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> day(0, 300), cents(-50000, 50000), count(1, 15);
  for (int iter = 0; iter < 200; ++iter) {
    std::vector<Transaction> members;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
      Transaction t;
      t.account_id = "a";
      t.transaction_id = "t" + std::to_string(i);
      t.date = 19000 + day(rng);
      t.amount_cents = cents(rng);
      members.push_back(t);
    }
    const auto agg = compute_aggregates(members);
    std::vector<double> amounts;
    for (const auto& m : members) amounts.push_back(cents_to_value(m.amount_cents));
    std::sort(amounts.begin(), amounts.end());
    double mean = 0;
    for (double a : amounts) mean += a;
    mean /= static_cast<double>(n);
    CHECK(agg.mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(agg.min_amount == doctest::Approx(amounts.front()));
    CHECK(agg.max_amount == doctest::Approx(amounts.back()));
    CHECK(agg.min_amount <= agg.median);
    CHECK(agg.median <= agg.max_amount);
    if (n > 1) {
      double ss = 0;
      for (double a : amounts) ss += (a - mean) * (a - mean);
      CHECK(agg.stddev == doctest::Approx(std::sqrt(ss / (n - 1))).epsilon(1e-12));
    }
  }
}

TEST_CASE("date and amount parsing reject malformed input") {
  CHECK_THROWS_AS(parse_date("2024-02-30"), DataError);
  CHECK_THROWS_AS(parse_date("2024/01/01"), DataError);
  CHECK(parse_date("2024-02-29") == days_from_civil(2024, 2, 29));
  CHECK(parse_amount_cents("5.5") == 550);
  CHECK(parse_amount_cents("-12.30") == -1230);
  CHECK(parse_amount_cents("5") == 500);
  CHECK_THROWS_AS(parse_amount_cents("5.123"), DataError);
  CHECK_THROWS_AS(parse_amount_cents("abc"), DataError);
  CHECK(format_amount(-1230) == "-12.30");
}

TEST_CASE("transaction files round-trip in both formats") {
  testutil::TmpDir tmp("txprep");
  std::vector<Transaction> txns = {
      make_txn("a1", "t1", "2024-01-01", "10.50", "NETFLIX, INC #42", std::nullopt),
      make_txn("a2", "t2", "2024-02-03", "-7.25", "payroll \"acme\"",
               std::optional<std::string>("Acme Corp")),
  };
  for (const char* name : {"t.csv", "t.jsonl"}) {
    const std::string path = tmp.file(name);
    if (std::string(name) == "t.csv")
      write_transactions_csv(path, txns);
    else
      write_transactions_jsonl(path, txns);
    const auto back = read_transactions(path);
    REQUIRE(back.size() == txns.size());
    for (size_t i = 0; i < txns.size(); ++i) {
      CHECK(back[i].account_id == txns[i].account_id);
      CHECK(back[i].transaction_id == txns[i].transaction_id);
      CHECK(back[i].date == txns[i].date);
      CHECK(back[i].amount_cents == txns[i].amount_cents);
      CHECK(back[i].description == txns[i].description);
      CHECK(back[i].merchant_name == txns[i].merchant_name);
    }
  }
}

TEST_CASE("groups file round-trips") {
  testutil::TmpDir tmp("groups");
  const auto groups = group({make_txn("a1", "t1", "2024-01-01", "10.00", "NETFLIX 123"),
                             make_txn("a1", "t2", "2024-02-01", "10.00", "NETFLIX 999"),
                             make_txn("a2", "t3", "2024-02-01", "55.00", "rent pay")});
  const std::string path = tmp.file("g.jsonl");
  write_groups_jsonl(path, groups);
  const auto back = read_groups_jsonl(path);
  REQUIRE(back.size() == groups.size());
  for (size_t i = 0; i < groups.size(); ++i) {
    CHECK(back[i].id() == groups[i].id());
    CHECK(back[i].rendered() == groups[i].rendered());
    CHECK(back[i].series.entries.size() == groups[i].series.entries.size());
    CHECK(back[i].aggregates.mean == doctest::Approx(groups[i].aggregates.mean));
  }
}
