#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "support/tmpdir.hpp"
#include "txcat/runstore.hpp"

using namespace txcat;
using namespace txcat::runstore;

TEST_CASE("runs start with unique ids and readable records") {
  testutil::TmpDir tmp("rs");
  RunStore store(tmp.str());
  auto a = store.start_run("task", "{\"cfg\":1}", "v1");
  auto b = store.start_run("task", "{\"cfg\":1}", "v1");
  CHECK(a.run_id != b.run_id);

  const auto record = store.read_record(a.run_id);
  CHECK(record.status == "started");
  CHECK(record.task == "task");
  CHECK(record.config_snapshot == "{\"cfg\":1}");  // byte-for-byte snapshot
  CHECK(record.code_version == "v1");
}

TEST_CASE("artifacts round-trip bitwise under content hashing") {
  testutil::TmpDir tmp("rs");
  RunStore store(tmp.str());
  auto run = store.start_run("task", "{}", "v1");
  std::string blob(1024, '\0');
  for (size_t i = 0; i < blob.size(); ++i) blob[i] = static_cast<char>(i * 7 % 251);
  store.log_artifact(run, "weights", blob);
  store.finish_run(run, {{"val_balanced_accuracy", 0.9}});

  const auto loaded = store.load_run(run.run_id);
  CHECK(loaded.artifacts.at("weights") == blob);
  CHECK(loaded.record.artifacts[0].sha256 == sha256_hex(blob));
}

TEST_CASE("hash verification catches corruption and absence") {
  testutil::TmpDir tmp("rs");
  RunStore store(tmp.str());
  auto run = store.start_run("task", "{}", "v1");
  store.log_artifact(run, "weights", "payload");
  store.finish_run(run, {{"val_balanced_accuracy", 0.5}});

  const std::string path = tmp.str() + "/runs/" + run.run_id + "/artifacts/weights";
  SUBCASE("corrupted bytes") {
    std::ofstream(path, std::ios::trunc) << "tampered";
    CHECK_THROWS_AS(store.load_run(run.run_id), IntegrityError);
  }
  SUBCASE("missing file names the artifact") {
    std::filesystem::remove(path);
    try {
      store.load_run(run.run_id);
      FAIL("expected IntegrityError");
    } catch (const IntegrityError& e) {
      CHECK(std::string(e.what()).find("weights") != std::string::npos);
    }
  }
}

TEST_CASE("lifecycle violations are rejected") {
  testutil::TmpDir tmp("rs");
  RunStore store(tmp.str());
  auto run = store.start_run("task", "{}", "v1");
  SUBCASE("finishing without artifacts") {
    CHECK_THROWS_AS(store.finish_run(run, {{"m", 1.0}}), ConfigError);
  }
  SUBCASE("logging to a finished run") {
    store.log_artifact(run, "weights", "x");
    store.finish_run(run, {{"m", 1.0}});
    CHECK_THROWS_AS(store.log_artifact(run, "more", "y"), ConfigError);
  }
  SUBCASE("failed runs record the reason") {
    store.fail_run(run, "diverged");
    CHECK(store.read_record(run.run_id).status == "failed");
    CHECK(store.read_record(run.run_id).failure == "diverged");
  }
}

TEST_CASE("best pointer advances only on improvement") {
  testutil::TmpDir tmp("rs");
  RunStore store(tmp.str());
  auto finish_with = [&](double metric) {
    auto run = store.start_run("task", "{}", "v1");
    store.log_artifact(run, "weights", "w");
    store.finish_run(run, {{"val_balanced_accuracy", metric}});
    return run.run_id;
  };
  const auto first = finish_with(0.7);
  CHECK(store.best("task")->run_id == first);
  CHECK(store.best("task")->metric == 0.7);

  finish_with(0.6);  // lower: pointer unchanged
  CHECK(store.best("task")->run_id == first);

  const auto better = finish_with(0.8);
  CHECK(store.best("task")->run_id == better);

  // tracked best metric never decreases
  double last = 0;
  for (double m : {0.5, 0.81, 0.3, 0.9}) {
    finish_with(m);
    CHECK(store.best("task")->metric >= last);
    last = store.best("task")->metric;
  }
}

TEST_CASE("inference loading enforces code-version parity") {
  testutil::TmpDir tmp("rs");
  RunStore store(tmp.str());
  auto run = store.start_run("task", "{}", "v1");
  store.log_artifact(run, "weights", "w");
  store.finish_run(run, {{"val_balanced_accuracy", 0.9}});

  CHECK(store.load_for_inference("task", "v1").record.run_id == run.run_id);
  CHECK_THROWS_AS(store.load_for_inference("task", "v2"), ParityError);
  const auto overridden = store.load_for_inference("task", "v2", /*allow=*/true);
  CHECK(overridden.parity_overridden);
  CHECK_THROWS_AS(store.load_for_inference("other-task", "v1"), DataError);
}
