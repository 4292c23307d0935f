#include "txcat/runstore.hpp"

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#ifdef _WIN32
#else
#include <unistd.h>
#endif

namespace txcat::runstore {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string new_run_id() {
  static std::atomic<uint64_t> counter{0};
  const uint64_t seq = counter.fetch_add(1);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%013lld-%04x-%03llx", static_cast<long long>(now_ms()),
                static_cast<unsigned>(::getpid() & 0xffff),
                static_cast<unsigned long long>(seq & 0xfff));
  return buf;
}

ordered_json record_to_json(const RunRecord& run) {
  ordered_json j;
  j["run_id"] = run.run_id;
  j["status"] = run.status;
  j["start_ms"] = run.start_ms;
  j["end_ms"] = run.end_ms;
  j["task"] = run.task;
  j["config_snapshot"] = run.config_snapshot;
  j["code_version"] = run.code_version;
  j["metrics"] = run.metrics;
  ordered_json arts = ordered_json::array();
  for (const auto& a : run.artifacts)
    arts.push_back(ordered_json{{"name", a.name}, {"sha256", a.sha256}, {"path", a.rel_path}});
  j["artifacts"] = std::move(arts);
  if (!run.failure.empty()) j["failure"] = run.failure;
  return j;
}

RunRecord record_from_json(const nlohmann::json& j) {
  RunRecord run;
  run.run_id = j.at("run_id").get<std::string>();
  run.status = j.at("status").get<std::string>();
  run.start_ms = j.at("start_ms").get<int64_t>();
  run.end_ms = j.at("end_ms").get<int64_t>();
  run.task = j.at("task").get<std::string>();
  run.config_snapshot = j.at("config_snapshot").get<std::string>();
  run.code_version = j.at("code_version").get<std::string>();
  run.metrics = j.at("metrics").get<std::map<std::string, double>>();
  for (const auto& a : j.at("artifacts"))
    run.artifacts.push_back({a.at("name").get<std::string>(), a.at("sha256").get<std::string>(),
                             a.at("path").get<std::string>()});
  run.failure = j.value("failure", "");
  return run;
}

}  // namespace

RunStore::RunStore(std::string root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(fs::path(root_) / "runs", ec);
  fs::create_directories(fs::path(root_) / "tasks", ec);
  if (ec) throw DataError("run store root not writable: " + root_);
}

std::string RunStore::run_dir(const std::string& run_id) const {
  return (fs::path(root_) / "runs" / run_id).string();
}

void RunStore::persist(const RunRecord& run) const {
  write_file_atomic((fs::path(run_dir(run.run_id)) / "record.json").string(),
                    record_to_json(run).dump(2) + "\n");
}

RunRecord RunStore::start_run(const std::string& task, const std::string& config_snapshot,
                              const std::string& code_version) {
  RunRecord run;
  run.run_id = new_run_id();
  run.status = "started";
  run.start_ms = now_ms();
  run.task = task;
  run.config_snapshot = config_snapshot;
  run.code_version = code_version;
  std::error_code ec;
  fs::create_directories(fs::path(run_dir(run.run_id)) / "artifacts", ec);
  if (ec) throw DataError("cannot create run directory for " + run.run_id);
  persist(run);
  return run;
}

void RunStore::log_artifact(RunRecord& run, const std::string& name, std::string_view bytes) {
  if (run.status != "started")
    throw ConfigError("cannot log artifact '" + name + "' to a " + run.status + " run");
  if (name.empty() || name.find('/') != std::string::npos)
    throw ConfigError("bad artifact name '" + name + "'");
  const std::string rel = "artifacts/" + name;
  write_file_atomic((fs::path(run_dir(run.run_id)) / rel).string(), bytes);
  const std::string digest = sha256_hex(bytes);
  for (auto& a : run.artifacts) {
    if (a.name == name) {  // overwrite in place
      a.sha256 = digest;
      persist(run);
      return;
    }
  }
  run.artifacts.push_back({name, digest, rel});
  persist(run);
}

void RunStore::finish_run(RunRecord& run, const std::map<std::string, double>& metrics,
                          const std::string& primary_metric) {
  if (run.status != "started") throw ConfigError("cannot finish a " + run.status + " run");
  if (run.artifacts.empty()) throw ConfigError("a finished run must hold at least one artifact");
  run.status = "finished";
  run.end_ms = now_ms();
  run.metrics = metrics;
  persist(run);

  const auto it = metrics.find(primary_metric);
  if (it == metrics.end()) return;
  const auto current = best(run.task);
  if (current && current->metric >= it->second) return;
  const fs::path task_dir = fs::path(root_) / "tasks" / run.task;
  std::error_code ec;
  fs::create_directories(task_dir, ec);
  ordered_json j;
  j["run_id"] = run.run_id;
  j["metric"] = it->second;
  j["metric_name"] = primary_metric;
  write_file_atomic((task_dir / "best.json").string(), j.dump(2) + "\n");
}

void RunStore::fail_run(RunRecord& run, const std::string& reason) {
  if (run.status != "started") throw ConfigError("cannot fail a " + run.status + " run");
  run.status = "failed";
  run.end_ms = now_ms();
  run.failure = reason;
  persist(run);
}

RunRecord RunStore::read_record(const std::string& run_id) const {
  const std::string path = (fs::path(run_dir(run_id)) / "record.json").string();
  try {
    return record_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("corrupt run record " + path + ": " + e.what());
  }
}

std::optional<BestPointer> RunStore::best(const std::string& task) const {
  const fs::path path = fs::path(root_) / "tasks" / task / "best.json";
  if (!fs::exists(path)) return std::nullopt;
  try {
    const auto j = nlohmann::json::parse(read_file(path.string()));
    return BestPointer{j.at("run_id").get<std::string>(), j.at("metric").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("corrupt best pointer for task " + task + ": " + e.what());
  }
}

LoadedRun RunStore::load_run(const std::string& run_id) const {
  LoadedRun loaded;
  loaded.record = read_record(run_id);
  for (const auto& a : loaded.record.artifacts) {
    const std::string path = (fs::path(run_dir(run_id)) / a.rel_path).string();
    if (!fs::exists(path))
      throw IntegrityError("missing artifact '" + a.name + "' of run " + run_id);
    std::string bytes = read_file(path);
    if (sha256_hex(bytes) != a.sha256)
      throw IntegrityError("artifact '" + a.name + "' of run " + run_id +
                           " does not match its recorded hash");
    loaded.artifacts.emplace(a.name, std::move(bytes));
  }
  return loaded;
}

LoadedRun RunStore::load_for_inference(const std::string& task,
                                       const std::string& expected_code_version,
                                       bool allow_code_mismatch) const {
  const auto pointer = best(task);
  if (!pointer) throw DataError("no trained model version for task '" + task + "'");
  LoadedRun loaded = load_run(pointer->run_id);
  if (loaded.record.code_version != expected_code_version) {
    if (!allow_code_mismatch)
      throw ParityError("code version mismatch for task '" + task + "': trained with '" +
                        loaded.record.code_version + "', running '" + expected_code_version + "'");
    loaded.parity_overridden = true;
    std::cerr << "warning: code version mismatch overridden for task '" << task << "' (trained '"
              << loaded.record.code_version << "', running '" << expected_code_version << "')\n";
  }
  return loaded;
}

}  // namespace txcat::runstore
