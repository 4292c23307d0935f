#include "txcat/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

namespace txcat::synthgen {

using ordered_json = nlohmann::ordered_json;

namespace {

void validate(const SynthConfig& config) {
  if (config.n_accounts <= 0) throw ConfigError("synth: n_accounts must be positive");
  if (config.span_end < config.span_start) throw ConfigError("synth: empty date span");
  double prevalence_sum = 0;
  const double span_days = static_cast<double>(config.span_end - config.span_start);
  for (const auto& cat : config.categories) {
    if (cat.prevalence <= 0 || cat.prevalence >= 1)
      throw ConfigError("synth: prevalence of '" + cat.name + "' must be in (0,1)");
    prevalence_sum += cat.prevalence;
    if (cat.merchant_vocab.empty())
      throw ConfigError("synth: category '" + cat.name + "' has no merchant vocabulary");
    if (cat.phrase_min < 1 || cat.phrase_max < cat.phrase_min)
      throw ConfigError("synth: bad phrase length range for '" + cat.name + "'");
    if (cat.recurrence) {
      if (cat.recurrence->gap_mean_days <= 0)
        throw ConfigError("synth: gap mean must be positive for '" + cat.name + "'");
      if (span_days < cat.recurrence->gap_mean_days)
        throw ConfigError("synth: date span shorter than one gap for '" + cat.name + "'");
    } else if (cat.min_events < 1 || cat.max_events < cat.min_events) {
      throw ConfigError("synth: bad event count range for '" + cat.name + "'");
    }
  }
  if (prevalence_sum > 1.0 + 1e-9) throw ConfigError("synth: category prevalences sum above 1");
}

bool chance(std::mt19937_64& rng, double p) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

std::string noised_token(std::string tok, const NoiseSpec& noise, std::mt19937_64& rng) {
  if (chance(rng, noise.truncation_prob) && tok.size() > 4) {
    const size_t cut = static_cast<size_t>(uniform_int(rng, 1, 3));
    tok = tok.substr(0, std::max<size_t>(3, tok.size() - cut));
  }
  if (chance(rng, noise.vowel_drop_prob)) {
    std::string stripped;
    for (char c : tok)
      if (c != 'a' && c != 'e' && c != 'i' && c != 'o' && c != 'u') stripped.push_back(c);
    if (stripped.size() >= 2) tok = stripped;
  }
  return tok;
}

std::string random_case(const std::string& tok, std::mt19937_64& rng) {
  const int mode = uniform_int(rng, 0, 9);
  std::string out = tok;
  if (mode < 5) return out;  // keep lowercase
  if (mode < 8) {            // UPPER
    for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
  }
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

std::string random_ref_code(std::mt19937_64& rng) {
  static const char* letters = "ABCDEFGHJKLMNPQRSTUVWXYZ";
  static const char* digits = "0123456789";
  const int len = uniform_int(rng, 6, 10);
  std::string code(static_cast<size_t>(len), '?');
  for (char& c : code)
    c = chance(rng, 0.6) ? letters[uniform_int(rng, 0, 23)] : digits[uniform_int(rng, 0, 9)];
  // Guarantee the mixed-alphanumeric shape.
  code[0] = letters[uniform_int(rng, 0, 23)];
  code[1] = digits[uniform_int(rng, 0, 9)];
  return code;
}

std::string random_digit_run(std::mt19937_64& rng) {
  const int len = uniform_int(rng, 3, 6);
  std::string run(static_cast<size_t>(len), '0');
  for (char& c : run) c = static_cast<char>('0' + uniform_int(rng, 0, 9));
  return run;
}

std::string title_case(const std::string& tok) {
  std::string out = tok;
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

}  // namespace

SynthResult generate(const SynthConfig& config) {
  validate(config);
  SynthResult result;
  std::map<std::pair<std::string, std::string>, std::set<std::string>> truth_map;

  for (int acct = 0; acct < config.n_accounts; ++acct) {
    std::mt19937_64 rng(mix_seed(config.seed, static_cast<uint64_t>(acct)));
    char acct_name[16];
    std::snprintf(acct_name, sizeof acct_name, "a%06d", acct);
    const std::string account_id = acct_name;
    int seq = 0;

    for (const auto& cat : config.categories) {
      if (!chance(rng, cat.prevalence)) continue;

      // Phrase and its group-stable lexical noise are fixed per instance; a
      // given account's merchant always renders the same way.
      const int phrase_len =
          uniform_int(rng, cat.phrase_min,
                      std::min<int>(cat.phrase_max, static_cast<int>(cat.merchant_vocab.size())));
      std::vector<size_t> pool(cat.merchant_vocab.size());
      for (size_t i = 0; i < pool.size(); ++i) pool[i] = i;
      std::vector<std::string> phrase;
      for (int i = 0; i < phrase_len; ++i) {
        const int pick = uniform_int(rng, i, static_cast<int>(pool.size()) - 1);
        std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(pick)]);
        phrase.push_back(cat.merchant_vocab[pool[static_cast<size_t>(i)]]);
      }
      std::vector<std::string> canonical;
      for (const auto& tok : phrase) canonical.push_back(noised_token(tok, cat.noise, rng));

      std::optional<std::string> merchant;
      if (chance(rng, cat.merchant_field_prob)) {
        std::string m;
        for (size_t i = 0; i < phrase.size(); ++i) {
          if (i) m.push_back(' ');
          m += title_case(phrase[i]);
        }
        merchant = m;
      }

      std::string joined;
      for (size_t i = 0; i < canonical.size(); ++i) {
        if (i) joined.push_back(' ');
        joined += canonical[i];
      }
      const std::string key_text = txprep::render(txprep::normalize(joined, merchant));
      truth_map[{account_id, key_text}].insert(cat.name);

      std::vector<int64_t> dates;
      if (cat.recurrence) {
        const auto& rec = *cat.recurrence;
        int64_t date = config.span_start +
                       uniform_int(rng, 0, static_cast<int>(rec.gap_mean_days) - 1);
        std::normal_distribution<double> gap(rec.gap_mean_days, rec.gap_std_days);
        while (date <= config.span_end) {
          dates.push_back(date);
          date += std::max<int64_t>(1, std::llround(gap(rng)));
        }
      } else {
        const int n = uniform_int(rng, cat.min_events, cat.max_events);
        for (int i = 0; i < n; ++i)
          dates.push_back(config.span_start +
                          uniform_int(rng, 0, static_cast<int>(config.span_end - config.span_start)));
      }

      std::normal_distribution<double> log_amount(cat.amount.log_mean, cat.amount.log_sigma);
      std::normal_distribution<double> jitter(0.0, cat.amount.within_jitter);
      const double base = std::exp(log_amount(rng));

      for (int64_t date : dates) {
        txprep::Transaction txn;
        txn.account_id = account_id;
        char txn_name[32];
        std::snprintf(txn_name, sizeof txn_name, "t%06d-%05d", acct, seq++);
        txn.transaction_id = txn_name;
        txn.date = date;
        const double dollars = base * std::exp(jitter(rng));
        txn.amount_cents = std::max<int64_t>(1, std::llround(dollars * 100.0));
        if (cat.amount.credit) txn.amount_cents = -txn.amount_cents;

        std::vector<std::string> words;
        for (const auto& tok : canonical) words.push_back(random_case(tok, rng));
        if (chance(rng, cat.noise.ref_code_prob)) {
          const size_t pos = static_cast<size_t>(uniform_int(rng, 0, static_cast<int>(words.size())));
          words.insert(words.begin() + static_cast<long>(pos), random_ref_code(rng));
        }
        if (chance(rng, cat.noise.digit_run_prob)) words.push_back(random_digit_run(rng));
        std::string desc;
        for (size_t i = 0; i < words.size(); ++i) {
          if (i) desc.push_back(' ');
          desc += words[i];
        }
        txn.description = desc;
        txn.merchant_name = merchant;
        result.transactions.push_back(std::move(txn));
      }
    }
  }

  for (const auto& [key, cats] : truth_map) {
    TruthEntry entry;
    entry.account_id = key.first;
    entry.text = key.second;
    entry.categories.assign(cats.begin(), cats.end());
    result.truth.push_back(std::move(entry));
  }
  return result;
}

SynthConfig load_synth_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("synth config " + path + ": " + e.what());
  }
  try {
    SynthConfig cfg;
    cfg.n_accounts = j.at("n_accounts").get<int>();
    cfg.span_start = parse_date(j.at("span_start").get<std::string>());
    cfg.span_end = parse_date(j.at("span_end").get<std::string>());
    cfg.seed = j.value("seed", 1ull);
    for (const auto& cj : j.at("categories")) {
      CategorySpec cat;
      cat.name = cj.at("name").get<std::string>();
      cat.prevalence = cj.at("prevalence").get<double>();
      cat.merchant_vocab = cj.at("merchant_vocab").get<std::vector<std::string>>();
      cat.phrase_min = cj.value("phrase_min", 2);
      cat.phrase_max = cj.value("phrase_max", 3);
      if (cj.contains("amount")) {
        const auto& aj = cj.at("amount");
        cat.amount.log_mean = aj.value("log_mean", 4.0);
        cat.amount.log_sigma = aj.value("log_sigma", 0.5);
        cat.amount.within_jitter = aj.value("within_jitter", 0.02);
        cat.amount.credit = aj.value("credit", false);
      }
      if (cj.contains("recurrence") && !cj.at("recurrence").is_null()) {
        RecurrenceSpec rec;
        rec.gap_mean_days = cj.at("recurrence").at("gap_mean_days").get<double>();
        rec.gap_std_days = cj.at("recurrence").value("gap_std_days", 2.0);
        cat.recurrence = rec;
      }
      cat.min_events = cj.value("min_events", 2);
      cat.max_events = cj.value("max_events", 6);
      if (cj.contains("noise")) {
        const auto& nj = cj.at("noise");
        cat.noise.truncation_prob = nj.value("truncation_prob", 0.0);
        cat.noise.vowel_drop_prob = nj.value("vowel_drop_prob", 0.0);
        cat.noise.ref_code_prob = nj.value("ref_code_prob", 0.0);
        cat.noise.digit_run_prob = nj.value("digit_run_prob", 0.0);
      }
      cat.merchant_field_prob = cj.value("merchant_field_prob", 0.0);
      cfg.categories.push_back(std::move(cat));
    }
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("synth config " + path + ": " + e.what());
  }
}

void write_truth_jsonl(const std::string& path, const std::vector<TruthEntry>& truth) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  for (const auto& t : truth) {
    ordered_json j;
    j["account_id"] = t.account_id;
    j["text"] = t.text;
    j["categories"] = t.categories;
    out << j.dump() << '\n';
  }
}

std::vector<TruthEntry> read_truth_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open truth file: " + path);
  std::vector<TruthEntry> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TruthEntry t;
      t.account_id = j.at("account_id").get<std::string>();
      t.text = j.at("text").get<std::string>();
      t.categories = j.at("categories").get<std::vector<std::string>>();
      out.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

SplitIndices split(const std::vector<txprep::TransactionGroup>& groups,
                   const std::array<double, 3>& fractions, uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

  std::vector<std::string> accounts;
  for (const auto& g : groups)
    if (accounts.empty() || accounts.back() != g.account_id) accounts.push_back(g.account_id);
  std::sort(accounts.begin(), accounts.end());
  accounts.erase(std::unique(accounts.begin(), accounts.end()), accounts.end());

  std::mt19937_64 rng(seed);
  std::shuffle(accounts.begin(), accounts.end(), rng);

  const size_t n = accounts.size();
  size_t n_train = static_cast<size_t>(std::floor(fractions[0] * static_cast<double>(n)));
  size_t n_val = static_cast<size_t>(std::floor(fractions[1] * static_cast<double>(n)));
  // Leftover accounts go to the earliest fold that is below its target share.
  while (n_train + n_val < n) {
    const size_t n_test = n - n_train - n_val;
    const double train_gap = fractions[0] * static_cast<double>(n) - static_cast<double>(n_train);
    const double val_gap = fractions[1] * static_cast<double>(n) - static_cast<double>(n_val);
    const double test_gap = fractions[2] * static_cast<double>(n) - static_cast<double>(n_test);
    if (test_gap >= -1e-9) break;  // test already at or below target
    if (train_gap >= val_gap)
      ++n_train;
    else
      ++n_val;
  }

  std::map<std::string, int> fold_of;
  for (size_t i = 0; i < n; ++i)
    fold_of[accounts[i]] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);

  SplitIndices out;
  for (size_t i = 0; i < groups.size(); ++i) {
    switch (fold_of[groups[i].account_id]) {
      case 0: out.train.push_back(i); break;
      case 1: out.validation.push_back(i); break;
      default: out.test.push_back(i); break;
    }
  }
  return out;
}

CategoryVocab default_category_vocab() {
  return {
      {"rent",
       {"rent", "rental", "rentpay", "lease", "leasing", "apartments", "realty", "property",
        "properties", "landlord", "housing", "tenant"}},
      {"telecom",
       {"verizon", "tmobile", "sprint", "comcast", "wireless", "telecom", "mobile", "cellular",
        "broadband", "internet", "phone", "fiber"}},
      {"coffee",
       {"starbucks", "espresso", "coffee", "latte", "cafe", "roasters", "brew", "beans", "mocha",
        "barista", "bakery", "donuts"}},
      {"payroll",
       {"payroll", "salary", "wages", "direct", "deposit", "paycheck", "employer", "staffing",
        "gusto", "adp", "workday", "paychex"}},
      {"utilities",
       {"electric", "utility", "utilities", "power", "water", "sewer", "energy", "gas", "hydro",
        "municipal", "light", "grid"}},
  };
}

PlantedCorpus make_planted_corpus(const CategoryVocab& vocab, int sentences_per_category,
                                  int min_len, int max_len, uint64_t seed) {
  PlantedCorpus corpus;
  std::mt19937_64 rng(seed);
  for (const auto& [category, words] : vocab) {
    corpus.categories.push_back(category);
    for (const auto& w : words) corpus.word_category[w] = category;
  }
  for (int s = 0; s < sentences_per_category; ++s) {
    for (const auto& [category, words] : vocab) {
      txprep::NormalizedText sent;
      const int len = uniform_int(rng, min_len, max_len);
      for (int i = 0; i < len; ++i)
        sent.tokens.push_back(words[static_cast<size_t>(
            uniform_int(rng, 0, static_cast<int>(words.size()) - 1))]);
      corpus.sentences.push_back(std::move(sent));
    }
  }
  return corpus;
}

}  // namespace txcat::synthgen
