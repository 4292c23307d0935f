#include "txcat/stream.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>

namespace txcat::stream {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

int64_t SystemClock::now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

// --- topic log ----------------------------------------------------------------

TopicLog::TopicLog(std::string dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw DataError("cannot create topic directory: " + dir_);
}

std::string TopicLog::topic_path(const std::string& topic) const {
  if (topic.empty() || topic.find('/') != std::string::npos)
    throw ConfigError("bad topic name '" + topic + "'");
  return (fs::path(dir_) / (topic + ".jsonl")).string();
}

int64_t TopicLog::scan_end(const std::string& topic) const {
  std::ifstream in(topic_path(topic));
  if (!in) return 0;
  int64_t n = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

int64_t TopicLog::end_offset(const std::string& topic) const {
  auto it = next_offset_.find(topic);
  return it != next_offset_.end() ? it->second : scan_end(topic);
}

Event TopicLog::append(const std::string& topic, const std::string& kind, nlohmann::json payload,
                       int64_t ts_ms) {
  const std::string path = topic_path(topic);
  auto it = next_offset_.find(topic);
  if (it == next_offset_.end()) it = next_offset_.emplace(topic, scan_end(topic)).first;

  Event event;
  event.topic = topic;
  event.offset = it->second;
  event.kind = kind;
  event.ts_ms = ts_ms;
  event.payload = std::move(payload);

  ordered_json j;
  j["offset"] = event.offset;
  j["kind"] = event.kind;
  j["ts_ms"] = event.ts_ms;
  j["payload"] = event.payload;

  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot append to topic file: " + path);
  out << j.dump() << '\n';
  out.flush();
  if (!out) throw DataError("topic append failed: " + path);
  ++it->second;
  return event;
}

std::vector<Event> TopicLog::read_from(const std::string& topic, int64_t offset) const {
  std::vector<Event> events;
  std::ifstream in(topic_path(topic));
  if (!in) return events;
  std::string line;
  int64_t line_offset = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line_offset >= offset) {
      try {
        const auto j = nlohmann::json::parse(line);
        Event event;
        event.topic = topic;
        event.offset = j.at("offset").get<int64_t>();
        event.kind = j.at("kind").get<std::string>();
        event.ts_ms = j.at("ts_ms").get<int64_t>();
        event.payload = j.at("payload");
        if (event.offset != line_offset)
          throw DataError("topic '" + topic + "': offset gap at " + std::to_string(line_offset));
        events.push_back(std::move(event));
      } catch (const nlohmann::json::exception& e) {
        throw DataError("topic '" + topic + "': corrupt record at offset " +
                        std::to_string(line_offset) + ": " + e.what());
      }
    }
    ++line_offset;
  }
  return events;
}

// --- batcher ------------------------------------------------------------------

std::optional<std::vector<Event>> batcher_step(std::deque<Event>& pending,
                                               const BatcherPolicy& policy, int64_t now_ms) {
  if (policy.max_count < 1 || policy.max_age_ms <= 0)
    throw ConfigError("batcher: max_count must be >= 1 and max_age positive");
  if (pending.empty()) return std::nullopt;
  const bool count_hit = static_cast<int64_t>(pending.size()) >= policy.max_count;
  const bool age_hit = now_ms - pending.front().ts_ms >= policy.max_age_ms;
  if (!count_hit && !age_hit) return std::nullopt;

  const size_t take =
      count_hit ? static_cast<size_t>(policy.max_count) : pending.size();
  std::vector<Event> batch(pending.begin(), pending.begin() + static_cast<long>(take));
  pending.erase(pending.begin(), pending.begin() + static_cast<long>(take));
  return batch;
}

// --- watcher ------------------------------------------------------------------

Watcher::Watcher(std::string cache_dir, ReadinessRule rule)
    : cache_dir_(std::move(cache_dir)), rule_(std::move(rule)) {
  if (rule_.min_transactions < 1)
    throw ConfigError("watcher: min_transactions must be >= 1");
  std::error_code ec;
  fs::create_directories(cache_dir_, ec);
  if (ec) throw DataError("cannot create watcher cache directory: " + cache_dir_);
  rebuild();
}

std::string Watcher::cache_path(const std::string& account_id) const {
  std::string safe;
  for (char c : account_id)
    safe.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return (fs::path(cache_dir_) / (safe + ".jsonl")).string();
}

bool Watcher::satisfied(const AccountState& state) const {
  if (state.transactions < rule_.min_transactions) return false;
  for (const auto& kind : rule_.required_kinds)
    if (!state.kinds_seen.count(kind)) return false;
  return true;
}

void Watcher::rebuild() {
  state_.clear();
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(cache_dir_))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    std::ifstream in(file);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      const std::string account = j.at("payload").at("account_id").get<std::string>();
      auto& state = state_[account];
      state.kinds_seen.insert(j.at("kind").get<std::string>());
      if (j.at("kind").get<std::string>() == "transaction") ++state.transactions;
    }
  }
}

bool Watcher::ingest(const Event& event) {
  const std::string account = event.payload.at("account_id").get<std::string>();
  ordered_json j;
  j["kind"] = event.kind;
  j["ts_ms"] = event.ts_ms;
  j["payload"] = event.payload;
  std::ofstream out(cache_path(account), std::ios::app);
  if (!out) throw DataError("watcher: cannot write cache for account " + account);
  out << j.dump() << '\n';
  out.flush();
  if (!out) throw DataError("watcher: cache write failed for account " + account);

  auto& state = state_[account];
  state.kinds_seen.insert(event.kind);
  if (event.kind == "transaction") ++state.transactions;
  return satisfied(state);
}

bool Watcher::ready(const std::string& account_id) const {
  auto it = state_.find(account_id);
  return it != state_.end() && satisfied(it->second);
}

std::vector<std::string> Watcher::accounts() const {
  std::vector<std::string> out;
  for (const auto& [account, state] : state_) out.push_back(account);
  return out;
}

std::vector<txprep::Transaction> Watcher::transactions_for(const std::string& account_id) const {
  std::vector<txprep::Transaction> out;
  std::ifstream in(cache_path(account_id));
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    if (j.at("kind").get<std::string>() != "transaction") continue;
    const auto& p = j.at("payload");
    txprep::Transaction txn;
    txn.account_id = p.at("account_id").get<std::string>();
    txn.transaction_id = p.at("transaction_id").get<std::string>();
    txn.date = parse_date(p.at("date").get<std::string>());
    txn.amount_cents = parse_amount_cents(p.at("amount").get<std::string>());
    txn.description = p.at("description").get<std::string>();
    if (p.contains("merchant_name") && !p.at("merchant_name").is_null())
      txn.merchant_name = p.at("merchant_name").get<std::string>();
    out.push_back(std::move(txn));
  }
  return out;
}

// --- inference loop --------------------------------------------------------------

std::string format_probability(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", p);
  return buf;
}

LoopStats run_inference_loop(TopicLog& topics, Watcher& watcher, const LoopConfig& config,
                             const embed::EmbeddingModel& embedding,
                             const classifier::Scaler& scaler,
                             const classifier::ClassifierParams& model, Clock& clock,
                             int64_t start_offset) {
  LoopStats stats;
  std::deque<Event> pending;
  for (auto& event : topics.read_from(config.input_topic, start_offset)) {
    pending.push_back(std::move(event));
    ++stats.events_read;
  }

  auto process_batch = [&](const std::vector<Event>& batch) {
    ++stats.batches;
    stats.events_consumed += static_cast<int64_t>(batch.size());
    std::vector<std::string> ready_accounts;
    for (const auto& event : batch) {
      const bool ready = watcher.ingest(event);
      const std::string account = event.payload.at("account_id").get<std::string>();
      if (ready && std::find(ready_accounts.begin(), ready_accounts.end(), account) ==
                       ready_accounts.end())
        ready_accounts.push_back(account);
    }
    for (const auto& account : ready_accounts) {
      const auto txns = watcher.transactions_for(account);
      const auto groups = txprep::group(txns);
      for (const auto& grp : groups) {
        const auto ex = classifier::featurize_group(grp, embedding, scaler,
                                                    model.tuned_words.empty()
                                                        ? nullptr
                                                        : &model.tuned_words);
        const double prob = classifier::predict_batch(model, {ex}).front();
        for (const auto& member : grp.members) {
          ordered_json payload;
          payload["model_type"] = config.model_type;
          payload["model_version"] = config.model_version;
          payload["transaction_id"] = member.transaction_id;
          payload["probability"] = format_probability(prob);
          topics.append(config.output_topic, "prediction", std::move(payload), clock.now_ms());
          ++stats.predictions_emitted;
        }
      }
    }
  };

  while (true) {
    const auto batch = batcher_step(pending, config.policy, clock.now_ms());
    if (!batch) break;
    process_batch(*batch);
  }
  stats.next_offset = start_offset + stats.events_consumed;
  return stats;
}

}  // namespace txcat::stream
