#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "txcat/classifier.hpp"
#include "txcat/embed.hpp"
#include "txcat/txprep.hpp"

namespace txcat::stream {

struct Event {
  std::string topic;
  int64_t offset = -1;
  std::string kind;  // transaction | account_signup | prediction
  int64_t ts_ms = 0;
  nlohmann::json payload;
};

// Injected so the age trigger is testable.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual int64_t now_ms() = 0;
};

class SystemClock : public Clock {
 public:
  int64_t now_ms() override;
};

class ManualClock : public Clock {
 public:
  explicit ManualClock(int64_t start = 0) : now_(start) {}
  int64_t now_ms() override { return now_; }
  void advance(int64_t ms) { now_ += ms; }
  void set(int64_t ms) { now_ = ms; }

 private:
  int64_t now_;
};

// Append-only JSON-lines topics, one file per topic, offsets dense from 0.
class TopicLog {
 public:
  explicit TopicLog(std::string dir);

  Event append(const std::string& topic, const std::string& kind, nlohmann::json payload,
               int64_t ts_ms);
  // Events at `offset` and beyond; repeatable; empty past the end.
  std::vector<Event> read_from(const std::string& topic, int64_t offset) const;
  int64_t end_offset(const std::string& topic) const;

 private:
  std::string dir_;
  std::map<std::string, int64_t> next_offset_;

  std::string topic_path(const std::string& topic) const;
  int64_t scan_end(const std::string& topic) const;
};

struct BatcherPolicy {
  int64_t max_count = 100;  // batch size trigger
  int64_t max_age_ms = 60'000;  // oldest-event age trigger
};

// Emits a batch when the pending count reaches max_count or the oldest
// pending event is at least max_age old; otherwise leaves pending intact.
std::optional<std::vector<Event>> batcher_step(std::deque<Event>& pending,
                                               const BatcherPolicy& policy, int64_t now_ms);

struct ReadinessRule {
  int min_transactions = 1;
  std::vector<std::string> required_kinds;  // e.g. account_signup
};

// Per-account durable event cache deciding inference readiness. State is
// rebuilt from the cache files, so a restart resumes exactly where the
// previous process stopped.
class Watcher {
 public:
  Watcher(std::string cache_dir, ReadinessRule rule);

  // Appends to the account's cache file; returns true when the account is
  // ready after this event.
  bool ingest(const Event& event);

  bool ready(const std::string& account_id) const;
  std::vector<txprep::Transaction> transactions_for(const std::string& account_id) const;
  std::vector<std::string> accounts() const;

 private:
  struct AccountState {
    int64_t transactions = 0;
    std::set<std::string> kinds_seen;
  };

  std::string cache_dir_;
  ReadinessRule rule_;
  std::map<std::string, AccountState> state_;

  std::string cache_path(const std::string& account_id) const;
  bool satisfied(const AccountState& state) const;
  void rebuild();
};

struct LoopConfig {
  std::string input_topic = "transactions";
  std::string output_topic = "predictions";
  BatcherPolicy policy;
  ReadinessRule rule;
  std::string model_type = "txcat-dual-gru";
  std::string model_version;
};

struct LoopStats {
  int64_t events_read = 0;
  int64_t events_consumed = 0;  // pulled into emitted batches
  int64_t batches = 0;
  int64_t predictions_emitted = 0;
  int64_t next_offset = 0;  // resume point; events past it stayed pending
};

// Drains available events from the input topic through the batcher and
// watcher; every ready account touched by a batch is scored whole and one
// prediction event per transaction is emitted. Payloads are deterministic
// for a given input log and model, so replays reproduce them.
LoopStats run_inference_loop(TopicLog& topics, Watcher& watcher, const LoopConfig& config,
                             const embed::EmbeddingModel& embedding,
                             const classifier::Scaler& scaler,
                             const classifier::ClassifierParams& model, Clock& clock,
                             int64_t start_offset = 0);

std::string format_probability(double p);  // 6 fractional digits, bit-exact field

}  // namespace txcat::stream
