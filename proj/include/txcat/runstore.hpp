#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "txcat/common.hpp"

namespace txcat::runstore {

struct ArtifactRef {
  std::string name;
  std::string sha256;
  std::string rel_path;
};

struct RunRecord {
  std::string run_id;
  std::string status;  // started | finished | failed
  int64_t start_ms = 0;
  int64_t end_ms = 0;
  std::string task;
  std::string config_snapshot;
  std::string code_version;
  std::map<std::string, double> metrics;
  std::vector<ArtifactRef> artifacts;
  std::string failure;
};

struct BestPointer {
  std::string run_id;
  double metric = 0;
};

struct LoadedRun {
  RunRecord record;
  std::map<std::string, std::string> artifacts;  // name -> bytes, hash-verified
  bool parity_overridden = false;
};

// Filesystem-backed registry: one directory per run holding the record
// document and its artifacts, plus a per-task best pointer advanced on
// finish when the primary metric improves. Pointer updates go through an
// atomic rename so concurrent runs never expose partial state.
class RunStore {
 public:
  explicit RunStore(std::string root);

  const std::string& root() const { return root_; }

  RunRecord start_run(const std::string& task, const std::string& config_snapshot,
                      const std::string& code_version);

  void log_artifact(RunRecord& run, const std::string& name, std::string_view bytes);

  // Marks finished, stamps end time, and advances the task's best pointer if
  // `primary_metric` improved. Finished runs must hold at least one artifact.
  void finish_run(RunRecord& run, const std::map<std::string, double>& metrics,
                  const std::string& primary_metric = "val_balanced_accuracy");

  void fail_run(RunRecord& run, const std::string& reason);

  RunRecord read_record(const std::string& run_id) const;
  std::optional<BestPointer> best(const std::string& task) const;

  // Loads a specific run's record and artifact bytes; every artifact is
  // re-hashed against the recorded digest.
  LoadedRun load_run(const std::string& run_id) const;

  // Loads the task's best run and rejects a code-version mismatch unless the
  // override is set (the override is reported on stderr and in the result).
  LoadedRun load_for_inference(const std::string& task, const std::string& expected_code_version,
                               bool allow_code_mismatch = false) const;

 private:
  std::string root_;

  std::string run_dir(const std::string& run_id) const;
  void persist(const RunRecord& run) const;
};

}  // namespace txcat::runstore
