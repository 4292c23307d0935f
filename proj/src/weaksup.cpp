#include "txcat/weaksup.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <regex>
#include <sstream>

#include <nlohmann/json.hpp>

namespace txcat::weaksup {

using ordered_json = nlohmann::ordered_json;

bool LabelMatrix::all_abstain(size_t row) const {
  for (size_t j = 0; j < cols(); ++j)
    if (at(row, j) != 0) return false;
  return true;
}

namespace {

int check_polarity(int polarity, const std::string& name) {
  if (polarity != 1 && polarity != -1)
    throw ConfigError("lf '" + name + "': polarity must be +1 or -1");
  return polarity;
}

Vote eval_pattern(const std::regex& re, const std::string& rendered, int polarity) {
  return std::regex_search(rendered, re) ? static_cast<Vote>(polarity) : Vote{0};
}

Vote eval_frequency(const FrequencyParams& p, const txprep::TransactionGroup& group) {
  const auto& agg = group.aggregates;
  if (agg.count < p.min_count) return 0;
  if (!agg.mean_gap_days) return 0;
  if (*agg.mean_gap_days < p.gap_lo || *agg.mean_gap_days > p.gap_hi) return 0;
  if (std::isfinite(p.cv_cap)) {
    if (!agg.coeff_var) return 0;
    if (std::abs(*agg.coeff_var) > p.cv_cap) return 0;
  }
  return static_cast<Vote>(p.polarity);
}

}  // namespace

LabelMatrix apply_lfs(const std::vector<txprep::TransactionGroup>& groups,
                      const std::vector<LabelingFunction>& lfs,
                      const embed::EmbeddingModel* model) {
  LabelMatrix matrix;
  for (const auto& g : groups) matrix.group_ids.push_back(g.id());

  std::map<std::string, size_t> name_index;
  for (size_t j = 0; j < lfs.size(); ++j) {
    if (!name_index.emplace(lfs[j].name, j).second)
      throw ConfigError("duplicate labeling function name '" + lfs[j].name + "'");
    matrix.lf_names.push_back(lfs[j].name);
  }

  // Pre-compile / pre-resolve per function.
  std::vector<std::regex> patterns(lfs.size());
  std::vector<Eigen::VectorXf> anchors(lfs.size());
  for (size_t j = 0; j < lfs.size(); ++j) {
    const auto& lf = lfs[j];
    if (const auto* p = std::get_if<PatternParams>(&lf.params)) {
      check_polarity(p->polarity, lf.name);
      try {
        patterns[j] = std::regex("\\b(?:" + p->expression + ")\\b");
      } catch (const std::regex_error& e) {
        throw ConfigError("lf '" + lf.name + "': bad pattern: " + e.what());
      }
    } else if (const auto* a = std::get_if<AnchorParams>(&lf.params)) {
      check_polarity(a->polarity, lf.name);
      if (a->threshold <= -1.0 || a->threshold > 1.0)
        throw ConfigError("lf '" + lf.name + "': anchor threshold must be in (-1, 1]");
      if (!model)
        throw ConfigError("lf '" + lf.name + "': anchor function requires an embedding model");
      anchors[j] = embed::vector(*model, a->anchor_word);
    } else if (const auto* f = std::get_if<FrequencyParams>(&lf.params)) {
      check_polarity(f->polarity, lf.name);
      if (f->gap_hi < f->gap_lo)
        throw ConfigError("lf '" + lf.name + "': empty gap window");
    } else if (const auto* c = std::get_if<CompositeParams>(&lf.params)) {
      if (c->op != "not" && c->op != "and")
        throw ConfigError("lf '" + lf.name + "': unknown composite op '" + c->op + "'");
      if (c->op == "not" && c->refs.size() != 1)
        throw ConfigError("lf '" + lf.name + "': 'not' takes exactly one reference");
      if (c->refs.empty()) throw ConfigError("lf '" + lf.name + "': composite needs references");
      if (c->op == "and") check_polarity(c->polarity, lf.name);
      for (const auto& ref : c->refs) {
        auto it = name_index.find(ref);
        if (it == name_index.end() || it->second >= j)
          throw ConfigError("lf '" + lf.name + "': unknown reference '" + ref +
                            "' (must name an earlier function)");
      }
    }
  }

  matrix.votes.assign(groups.size() * lfs.size(), 0);
  for (size_t i = 0; i < groups.size(); ++i) {
    const auto& group = groups[i];
    const std::string rendered = group.rendered();
    Vote* row = matrix.votes.data() + i * lfs.size();
    for (size_t j = 0; j < lfs.size(); ++j) {
      const auto& lf = lfs[j];
      if (const auto* p = std::get_if<PatternParams>(&lf.params)) {
        row[j] = eval_pattern(patterns[j], rendered, p->polarity);
      } else if (const auto* f = std::get_if<FrequencyParams>(&lf.params)) {
        row[j] = eval_frequency(*f, group);
      } else if (const auto* a = std::get_if<AnchorParams>(&lf.params)) {
        const float sim = embed::max_word_similarity(*model, group.normalized_text, anchors[j]);
        row[j] = sim >= a->threshold ? static_cast<Vote>(a->polarity) : Vote{0};
      } else if (const auto* c = std::get_if<CompositeParams>(&lf.params)) {
        if (c->op == "not") {
          row[j] = static_cast<Vote>(-row[name_index[c->refs[0]]]);
        } else {
          bool all_fire = true;
          for (const auto& ref : c->refs) all_fire &= row[name_index[ref]] == 1;
          row[j] = all_fire ? static_cast<Vote>(c->polarity) : Vote{0};
        }
      }
    }
  }
  return matrix;
}

LFReport lf_report(const LabelMatrix& matrix, const std::map<std::string, int>* dev_labels) {
  if (dev_labels) {
    for (const auto& [gid, label] : *dev_labels) {
      if (std::find(matrix.group_ids.begin(), matrix.group_ids.end(), gid) ==
          matrix.group_ids.end())
        throw DataError("dev label for unknown group_id '" + gid + "'");
      if (label != 1 && label != -1) throw DataError("dev label must be +1/-1");
    }
  }

  LFReport report;
  report.n_rows = matrix.rows();
  const size_t n = matrix.rows(), m = matrix.cols();
  for (size_t j = 0; j < m; ++j) {
    LFStats stats;
    stats.name = matrix.lf_names[j];
    size_t votes = 0, overlaps = 0, conflicts = 0, correct = 0, graded = 0;
    for (size_t i = 0; i < n; ++i) {
      const Vote v = matrix.at(i, j);
      if (v == 0) continue;
      ++votes;
      bool any_other = false, any_conflict = false;
      for (size_t k = 0; k < m; ++k) {
        if (k == j) continue;
        const Vote w = matrix.at(i, k);
        any_other |= w != 0;
        any_conflict |= w == -v;
      }
      overlaps += any_other;
      conflicts += any_conflict;
      if (dev_labels) {
        auto it = dev_labels->find(matrix.group_ids[i]);
        if (it != dev_labels->end()) {
          ++graded;
          correct += v == it->second;
        }
      }
    }
    stats.n_votes = static_cast<int64_t>(votes);
    if (n > 0) {
      stats.coverage = static_cast<double>(votes) / static_cast<double>(n);
      stats.overlap = static_cast<double>(overlaps) / static_cast<double>(n);
      stats.conflict = static_cast<double>(conflicts) / static_cast<double>(n);
    }
    if (dev_labels && graded > 0)
      stats.empirical_accuracy = static_cast<double>(correct) / static_cast<double>(graded);
    report.per_lf.push_back(std::move(stats));
  }
  return report;
}

std::vector<std::pair<std::string, float>> expand_anchor(const embed::EmbeddingModel& model,
                                                         std::string_view anchor,
                                                         double threshold) {
  if (threshold <= -1.0 || threshold > 1.0)
    throw ConfigError("expand_anchor: threshold must be in (-1, 1]");
  const Eigen::VectorXf query = embed::vector(model, anchor);
  std::vector<std::pair<std::string, float>> out;
  for (size_t i = 0; i < model.vocab.size(); ++i) {
    const float sim = embed::cosine(query, model.word_vectors.col(static_cast<int>(i)));
    if (sim >= threshold) out.emplace_back(model.vocab[i], sim);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return out;
}

// --- config & matrix files ---------------------------------------------------

std::vector<LabelingFunction> load_lf_config(const std::string& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("lf config " + path + ": " + e.what());
  }
  try {
    std::vector<LabelingFunction> lfs;
    for (const auto& j : doc.at("labeling_functions")) {
      LabelingFunction lf;
      lf.name = j.at("name").get<std::string>();
      const std::string kind = j.at("kind").get<std::string>();
      if (kind == "pattern") {
        PatternParams p;
        p.expression = j.at("expression").get<std::string>();
        p.polarity = j.value("polarity", 1);
        lf.params = p;
      } else if (kind == "frequency") {
        FrequencyParams p;
        p.gap_lo = j.at("gap_lo").get<double>();
        p.gap_hi = j.at("gap_hi").get<double>();
        p.min_count = j.value("min_count", 2);
        if (j.contains("cv_cap") && !j.at("cv_cap").is_null())
          p.cv_cap = j.at("cv_cap").get<double>();
        p.polarity = j.value("polarity", 1);
        lf.params = p;
      } else if (kind == "anchor") {
        AnchorParams p;
        p.anchor_word = j.at("anchor").get<std::string>();
        p.threshold = j.at("threshold").get<double>();
        p.polarity = j.value("polarity", 1);
        lf.params = p;
      } else if (kind == "composite") {
        CompositeParams p;
        p.op = j.at("op").get<std::string>();
        if (j.at("refs").is_array())
          p.refs = j.at("refs").get<std::vector<std::string>>();
        else
          p.refs = {j.at("refs").get<std::string>()};
        p.polarity = j.value("polarity", 1);
        lf.params = p;
      } else {
        throw ConfigError("lf config " + path + ": unknown kind '" + kind + "'");
      }
      lfs.push_back(std::move(lf));
    }
    return lfs;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("lf config " + path + ": " + e.what());
  }
}

void save_lf_config(const std::string& path, const std::vector<LabelingFunction>& lfs) {
  ordered_json arr = ordered_json::array();
  for (const auto& lf : lfs) {
    ordered_json j;
    j["name"] = lf.name;
    if (const auto* p = std::get_if<PatternParams>(&lf.params)) {
      j["kind"] = "pattern";
      j["expression"] = p->expression;
      j["polarity"] = p->polarity;
    } else if (const auto* f = std::get_if<FrequencyParams>(&lf.params)) {
      j["kind"] = "frequency";
      j["gap_lo"] = f->gap_lo;
      j["gap_hi"] = f->gap_hi;
      j["min_count"] = f->min_count;
      if (std::isfinite(f->cv_cap)) j["cv_cap"] = f->cv_cap;
      j["polarity"] = f->polarity;
    } else if (const auto* a = std::get_if<AnchorParams>(&lf.params)) {
      j["kind"] = "anchor";
      j["anchor"] = a->anchor_word;
      j["threshold"] = a->threshold;
      j["polarity"] = a->polarity;
    } else if (const auto* c = std::get_if<CompositeParams>(&lf.params)) {
      j["kind"] = "composite";
      j["op"] = c->op;
      j["refs"] = c->refs;
      j["polarity"] = c->polarity;
    }
    arr.push_back(std::move(j));
  }
  ordered_json doc;
  doc["labeling_functions"] = std::move(arr);
  write_file_atomic(path, doc.dump(2) + "\n");
}

void write_matrix_jsonl(const std::string& path, const LabelMatrix& matrix) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  ordered_json header;
  header["lf_names"] = matrix.lf_names;
  out << header.dump() << '\n';
  for (size_t i = 0; i < matrix.rows(); ++i) {
    ordered_json j;
    j["group_id"] = matrix.group_ids[i];
    ordered_json votes = ordered_json::array();
    for (size_t k = 0; k < matrix.cols(); ++k) votes.push_back(static_cast<int>(matrix.at(i, k)));
    j["votes"] = std::move(votes);
    out << j.dump() << '\n';
  }
}

LabelMatrix read_matrix_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open matrix file: " + path);
  LabelMatrix matrix;
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty matrix file: " + path);
  try {
    matrix.lf_names =
        nlohmann::json::parse(line).at("lf_names").get<std::vector<std::string>>();
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      matrix.group_ids.push_back(j.at("group_id").get<std::string>());
      const auto votes = j.at("votes").get<std::vector<int>>();
      if (votes.size() != matrix.lf_names.size())
        throw DataError("matrix row width mismatch in " + path);
      for (int v : votes) {
        if (v != -1 && v != 0 && v != 1) throw DataError("bad vote value in " + path);
        matrix.votes.push_back(static_cast<Vote>(v));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("matrix file " + path + ": " + e.what());
  }
  return matrix;
}

std::string render_report(const LFReport& report) {
  std::ostringstream out;
  size_t name_w = 4;
  for (const auto& s : report.per_lf) name_w = std::max(name_w, s.name.size());
  out << std::left << std::setw(static_cast<int>(name_w + 2)) << "lf"
      << std::right << std::setw(10) << "coverage" << std::setw(10) << "overlap"
      << std::setw(10) << "conflict" << std::setw(10) << "votes" << std::setw(10) << "acc"
      << '\n';
  char buf[64];
  for (const auto& s : report.per_lf) {
    out << std::left << std::setw(static_cast<int>(name_w + 2)) << s.name << std::right;
    std::snprintf(buf, sizeof buf, "%10.4f%10.4f%10.4f%10lld", s.coverage, s.overlap, s.conflict,
                  static_cast<long long>(s.n_votes));
    out << buf;
    if (s.empirical_accuracy)
      std::snprintf(buf, sizeof buf, "%10.4f", *s.empirical_accuracy);
    else
      std::snprintf(buf, sizeof buf, "%10s", "-");
    out << buf << '\n';
  }
  return out.str();
}

}  // namespace txcat::weaksup
