#include "data.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mtlhmb {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(ResponseKind kind) {
  return kind == ResponseKind::Continuous ? "continuous" : "binary";
}

ResponseKind response_kind_from_string(const std::string& s) {
  if (s == "continuous") return ResponseKind::Continuous;
  if (s == "binary") return ResponseKind::Binary;
  throw ValidationError("unknown response_kind: " + s);
}

bool BlockLayout::is_observed(int task, int source) const {
  return std::binary_search(observed.begin(), observed.end(), std::make_pair(task, source));
}

int BlockLayout::total_dim() const {
  return std::accumulate(source_dims.begin(), source_dims.end(), 0);
}

int BlockLayout::source_offset(int source) const {
  int off = 0;
  for (int s = 0; s < source; ++s) off += source_dims[s];
  return off;
}

std::vector<std::pair<int, int>> BlockLayout::missing() const {
  std::vector<std::pair<int, int>> out;
  for (int t = 1; t <= task_count; ++t)
    for (int s = 1; s <= task_count; ++s)
      if (!is_observed(t, s)) out.emplace_back(t, s);
  return out;
}

void BlockLayout::validate() const {
  if (task_count < 1) throw ValidationError("layout: need at least one task");
  if (static_cast<int>(source_dims.size()) != task_count + 1)
    throw ValidationError("layout: expected T+1 source dims");
  for (int d : source_dims)
    if (d < 1) throw ValidationError("layout: source dims must be positive");
  for (int t = 1; t <= task_count; ++t) {
    if (!is_observed(t, 0))
      throw ValidationError("layout: anchoring source missing for task " + std::to_string(t));
    if (!is_observed(t, t))
      throw ValidationError("layout: task-specific source missing for task " + std::to_string(t));
  }
}

BlockLayout BlockLayout::anchored(int task_count, std::vector<int> source_dims) {
  BlockLayout layout;
  layout.task_count = task_count;
  layout.source_dims = std::move(source_dims);
  for (int t = 1; t <= task_count; ++t) {
    layout.observed.emplace_back(t, 0);
    layout.observed.emplace_back(t, t);
  }
  std::sort(layout.observed.begin(), layout.observed.end());
  layout.validate();
  return layout;
}

const TaskDataset& MultiTaskDataset::task(int task_id) const {
  for (const TaskDataset& t : tasks)
    if (t.task_id == task_id) return t;
  throw ValidationError("unknown task id " + std::to_string(task_id));
}

void MultiTaskDataset::validate() const {
  layout.validate();
  if (static_cast<int>(tasks.size()) != layout.task_count)
    throw ValidationError("dataset: task count does not match layout");
  for (const TaskDataset& t : tasks) {
    if (t.task_id < 1 || t.task_id > layout.task_count)
      throw ValidationError("dataset: bad task id");
    if (t.x_anchor.cols() != layout.source_dims[0])
      throw ValidationError("dataset: anchor dim mismatch for task " + std::to_string(t.task_id));
    if (t.x_specific.cols() != layout.source_dims[t.task_id])
      throw ValidationError("dataset: specific dim mismatch for task " + std::to_string(t.task_id));
    if (t.x_anchor.rows() != t.y.size() || t.x_specific.rows() != t.y.size())
      throw ValidationError("dataset: row counts disagree for task " + std::to_string(t.task_id));
    if (!all_finite(t.x_anchor) || !all_finite(t.x_specific) || !t.y.allFinite())
      throw ValidationError("dataset: non-finite entries in task " + std::to_string(t.task_id));
  }
}

bool ImputedDataset::is_complete() const {
  for (auto [t, s] : base.layout.missing())
    if (!imputed_blocks.count({t, s})) return false;
  return true;
}

BlockProvenance ImputedDataset::provenance(int task, int source) const {
  if (base.layout.is_observed(task, source)) return BlockProvenance::Observed;
  if (imputed_blocks.count({task, source})) return BlockProvenance::Imputed;
  throw ValidationError("block (" + std::to_string(task) + "," + std::to_string(source) +
                        ") neither observed nor imputed");
}

const Matrix& ImputedDataset::block(int task, int source) const {
  const TaskDataset& t = base.task(task);
  if (source == 0) return t.x_anchor;
  if (source == task && base.layout.is_observed(task, source)) return t.x_specific;
  auto it = imputed_blocks.find({task, source});
  if (it == imputed_blocks.end())
    throw ValidationError("block (" + std::to_string(task) + "," + std::to_string(source) +
                          ") not available");
  return it->second;
}

Matrix ImputedDataset::full_features(int task) const {
  const BlockLayout& layout = base.layout;
  const int n = base.task(task).rows();
  Matrix full(n, layout.total_dim());
  for (int s = 0; s <= layout.task_count; ++s)
    full.middleCols(layout.source_offset(s), layout.source_dims[s]) = block(task, s);
  return full;
}

void ImputedDataset::validate() const {
  base.validate();
  for (const auto& [key, block] : imputed_blocks) {
    auto [t, s] = key;
    if (base.layout.is_observed(t, s))
      throw ValidationError("imputed block (" + std::to_string(t) + "," + std::to_string(s) +
                            ") shadows an observed block");
    if (block.rows() != base.task(t).rows() || block.cols() != base.layout.source_dims[s])
      throw ValidationError("imputed block (" + std::to_string(t) + "," + std::to_string(s) +
                            ") has wrong shape");
    if (!all_finite(block))
      throw ValidationError("imputed block (" + std::to_string(t) + "," + std::to_string(s) +
                            ") has non-finite entries");
  }
}

SplitIndices split(const MultiTaskDataset& ds, const SplitSpec& spec) {
  if (spec.train < 0 || spec.val < 0 || spec.test < 0 ||
      std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9)
    throw ValidationError("split: fractions must be nonnegative and sum to 1");
  SplitIndices out;
  Rng rng(spec.seed);
  for (const TaskDataset& t : ds.tasks) {
    const int n = t.rows();
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    const int n_val = static_cast<int>(std::floor(spec.val * n));
    const int n_test = static_cast<int>(std::floor(spec.test * n));
    const int n_train = n - n_val - n_test;
    auto require = [&](double frac, int count, const char* part) {
      if (frac > 0 && count == 0)
        throw ValidationError(std::string("split: ") + part + " part is empty for task " +
                              std::to_string(t.task_id) + " (n=" + std::to_string(n) + ")");
    };
    require(spec.train, n_train, "train");
    require(spec.val, n_val, "val");
    require(spec.test, n_test, "test");
    out.train.emplace_back(idx.begin(), idx.begin() + n_train);
    out.val.emplace_back(idx.begin() + n_train, idx.begin() + n_train + n_val);
    out.test.emplace_back(idx.begin() + n_train + n_val, idx.end());
  }
  return out;
}

namespace {

Matrix take_rows(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

constexpr double kSdFloor = 1e-12;

void accumulate_stats(const Matrix& block, Vector& sum, Vector& sumsq, long& count) {
  sum += block.colwise().sum().transpose();
  sumsq += block.array().square().colwise().sum().matrix().transpose();
  count += block.rows();
}

}  // namespace

Matrix StandardizationStats::apply_block(int source, const Matrix& block) const {
  Matrix out = block;
  out.rowwise() -= feature_mean[source].transpose();
  out.array().rowwise() /= feature_sd[source].transpose().array();
  return out;
}

Matrix StandardizationStats::invert_block(int source, const Matrix& block) const {
  Matrix out = block;
  out.array().rowwise() *= feature_sd[source].transpose().array();
  out.rowwise() += feature_mean[source].transpose();
  return out;
}

Vector StandardizationStats::apply_y(int task_index, const Vector& y) const {
  return (y.array() - y_mean[task_index]) / y_sd[task_index];
}

Vector StandardizationStats::invert_y(int task_index, const Vector& y) const {
  return (y.array() * y_sd[task_index] + y_mean[task_index]).matrix();
}

StandardizationStats standardize_fit(const MultiTaskDataset& ds, const SplitIndices& split) {
  const BlockLayout& layout = ds.layout;
  StandardizationStats stats;
  stats.feature_mean.resize(layout.task_count + 1);
  stats.feature_sd.resize(layout.task_count + 1);
  for (int s = 0; s <= layout.task_count; ++s) {
    const int p = layout.source_dims[s];
    Vector sum = Vector::Zero(p);
    Vector sumsq = Vector::Zero(p);
    long count = 0;
    for (std::size_t ti = 0; ti < ds.tasks.size(); ++ti) {
      const TaskDataset& t = ds.tasks[ti];
      if (!layout.is_observed(t.task_id, s)) continue;
      const Matrix& block = (s == 0) ? t.x_anchor : t.x_specific;
      accumulate_stats(take_rows(block, split.train[ti]), sum, sumsq, count);
    }
    if (count == 0) throw ValidationError("standardize_fit: no training rows for source " + std::to_string(s));
    Vector mean = sum / static_cast<double>(count);
    // Population sd (divisor n).
    Vector var = sumsq / static_cast<double>(count) - mean.array().square().matrix();
    Vector sd = var.array().max(0.0).sqrt();
    for (int j = 0; j < p; ++j)
      if (sd(j) < kSdFloor) sd(j) = 1.0;
    stats.feature_mean[s] = std::move(mean);
    stats.feature_sd[s] = std::move(sd);
  }
  for (std::size_t ti = 0; ti < ds.tasks.size(); ++ti) {
    const TaskDataset& t = ds.tasks[ti];
    if (t.response_kind == ResponseKind::Binary) {
      stats.y_mean.push_back(0.0);
      stats.y_sd.push_back(1.0);
      continue;
    }
    Vector ytr(static_cast<Eigen::Index>(split.train[ti].size()));
    for (std::size_t i = 0; i < split.train[ti].size(); ++i) ytr(static_cast<Eigen::Index>(i)) = t.y(split.train[ti][i]);
    const double mean = ytr.mean();
    double sd = std::sqrt((ytr.array() - mean).square().sum() / static_cast<double>(ytr.size()));
    if (sd < kSdFloor) sd = 1.0;
    stats.y_mean.push_back(mean);
    stats.y_sd.push_back(sd);
  }
  return stats;
}

MultiTaskDataset standardize_apply(const StandardizationStats& stats, const MultiTaskDataset& ds) {
  MultiTaskDataset out = ds;
  for (std::size_t ti = 0; ti < out.tasks.size(); ++ti) {
    TaskDataset& t = out.tasks[ti];
    t.x_anchor = stats.apply_block(0, t.x_anchor);
    t.x_specific = stats.apply_block(t.task_id, t.x_specific);
    if (t.response_kind == ResponseKind::Continuous)
      t.y = stats.apply_y(static_cast<int>(ti), t.y);
  }
  return out;
}

ImputedDataset standardize_apply(const StandardizationStats& stats, const ImputedDataset& ds) {
  ImputedDataset out;
  out.base = standardize_apply(stats, ds.base);
  for (const auto& [key, block] : ds.imputed_blocks)
    out.imputed_blocks.emplace(key, stats.apply_block(key.second, block));
  return out;
}

// --- CSV ------------------------------------------------------------------

namespace {

double parse_cell(const std::string& cell, const std::string& path, std::size_t row, std::size_t col) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || errno == ERANGE || !std::isfinite(v))
    throw ValidationError(path + ": row " + std::to_string(row) + ", column " +
                          std::to_string(col) + ": invalid numeric cell '" + cell + "'");
  return v;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace

Matrix load_csv_matrix(const std::string& path, bool has_header, int expected_cols) {
  std::ifstream in(path);
  if (!in) throw ValidationError(path + ": cannot open file");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t cols = 0;
  bool skipped_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (has_header && !skipped_header) {
      skipped_header = true;
      continue;
    }
    if (trim(line).empty()) continue;
    std::vector<std::string> fields = split_fields(line);
    std::vector<double> row;
    row.reserve(fields.size());
    for (std::size_t c = 0; c < fields.size(); ++c)
      row.push_back(parse_cell(trim(fields[c]), path, line_no, c + 1));
    if (rows.empty()) {
      cols = row.size();
    } else if (row.size() != cols) {
      throw ValidationError(path + ": row " + std::to_string(line_no) + ": expected " +
                            std::to_string(cols) + " columns, found " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError(path + ": file has no data rows");
  if (expected_cols >= 0 && static_cast<int>(cols) != expected_cols)
    throw ValidationError(path + ": expected " + std::to_string(expected_cols) +
                          " columns per manifest, found " + std::to_string(cols));
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return m;
}

void save_csv_matrix(const std::string& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw ValidationError(path + ": cannot open for writing");
  char buf[40];
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", m(r, c));
      if (c) out << ',';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw ValidationError(path + ": write failed");
}

// --- manifest ---------------------------------------------------------------

LoadedDataset load_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw ValidationError(manifest_path + ": cannot open file");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(manifest_path + ": " + e.what());
  }
  if (!doc.contains("tasks") || !doc["tasks"].is_array() || doc["tasks"].empty())
    throw ValidationError(manifest_path + ": manifest needs a non-empty 'tasks' array");

  LoadedDataset out;
  out.has_header = doc.value("has_header", false);
  const fs::path base_dir = fs::path(manifest_path).parent_path();
  auto resolve = [&](const std::string& p) {
    fs::path fp(p);
    return fp.is_absolute() ? fp.string() : (base_dir / fp).string();
  };

  const int task_count = static_cast<int>(doc["tasks"].size());
  std::vector<int> source_dims(task_count + 1, -1);
  BlockLayout layout;
  layout.task_count = task_count;

  struct PendingBlock {
    int task, source;
    Matrix values;
    BlockProvenance prov;
  };
  std::vector<PendingBlock> blocks;
  MultiTaskDataset data;
  data.tasks.resize(task_count);

  for (const json& jt : doc["tasks"]) {
    const int id = jt.at("id").get<int>();
    if (id < 1 || id > task_count)
      throw ValidationError(manifest_path + ": task ids must be 1..T without gaps");
    TaskDataset& task = data.tasks[id - 1];
    task.task_id = id;
    task.response_kind = response_kind_from_string(jt.value("response_kind", "continuous"));
    const std::string ypath = resolve(jt.at("response_path").get<std::string>());
    Matrix ym = load_csv_matrix(ypath, out.has_header);
    if (ym.cols() != 1)
      throw ValidationError(ypath + ": response file must have exactly one column");
    task.y = ym.col(0);
    if (task.response_kind == ResponseKind::Binary &&
        ((task.y.array() != 0.0) && (task.y.array() != 1.0)).any())
      throw ValidationError(ypath + ": binary responses must be 0 or 1");

    for (const json& js : jt.at("sources")) {
      const int sid = js.at("source_id").get<int>();
      if (sid < 0 || sid > task_count)
        throw ValidationError(manifest_path + ": source_id out of range");
      const int dim = js.at("dim").get<int>();
      if (source_dims[sid] == -1)
        source_dims[sid] = dim;
      else if (source_dims[sid] != dim)
        throw ValidationError(manifest_path + ": source " + std::to_string(sid) +
                              " dim differs across tasks");
      const std::string path = resolve(js.at("path").get<std::string>());
      Matrix values = load_csv_matrix(path, out.has_header, dim);
      if (values.rows() != task.y.size())
        throw ValidationError(path + ": row count " + std::to_string(values.rows()) +
                              " does not match response rows " + std::to_string(task.y.size()));
      const std::string prov = js.value("provenance", "observed");
      PendingBlock pb{id, sid, std::move(values),
                      prov == "imputed" ? BlockProvenance::Imputed : BlockProvenance::Observed};
      blocks.push_back(std::move(pb));
    }
  }

  for (int s = 0; s <= task_count; ++s)
    if (source_dims[s] == -1)
      throw ValidationError(manifest_path + ": no task provides source " + std::to_string(s));
  layout.source_dims = source_dims;

  for (PendingBlock& pb : blocks)
    if (pb.prov == BlockProvenance::Observed)
      layout.observed.emplace_back(pb.task, pb.source);
  std::sort(layout.observed.begin(), layout.observed.end());
  layout.validate();
  data.layout = layout;

  for (PendingBlock& pb : blocks) {
    TaskDataset& task = data.tasks[pb.task - 1];
    if (pb.source == 0)
      task.x_anchor = std::move(pb.values);
    else if (pb.source == pb.task && pb.prov == BlockProvenance::Observed)
      task.x_specific = std::move(pb.values);
    else
      out.data.imputed_blocks[{pb.task, pb.source}] = std::move(pb.values);
  }

  out.data.base = std::move(data);
  out.data.validate();

  if (doc.contains("split")) {
    SplitSpec spec;
    const json& js = doc["split"];
    spec.seed = js.value("seed", 0ULL);
    if (js.contains("fractions")) {
      const auto f = js["fractions"].get<std::vector<double>>();
      if (f.size() != 3) throw ValidationError(manifest_path + ": split.fractions needs 3 entries");
      spec.train = f[0];
      spec.val = f[1];
      spec.test = f[2];
    }
    out.split = spec;
  }
  return out;
}

void save_manifest(const std::string& out_dir, const ImputedDataset& ds,
                   const std::optional<SplitSpec>& split) {
  fs::create_directories(out_dir);
  json doc;
  doc["version"] = 1;
  doc["has_header"] = false;
  if (split) {
    doc["split"] = {{"seed", split->seed},
                    {"fractions", {split->train, split->val, split->test}}};
  }
  json jtasks = json::array();
  const BlockLayout& layout = ds.base.layout;
  for (const TaskDataset& t : ds.base.tasks) {
    json jt;
    jt["id"] = t.task_id;
    jt["response_kind"] = to_string(t.response_kind);
    const std::string yname = "task" + std::to_string(t.task_id) + "_y.csv";
    Matrix ym = t.y;
    save_csv_matrix((fs::path(out_dir) / yname).string(), ym);
    jt["response_path"] = yname;
    json jsources = json::array();
    for (int s = 0; s <= layout.task_count; ++s) {
      const bool observed = layout.is_observed(t.task_id, s);
      if (!observed && !ds.imputed_blocks.count({t.task_id, s})) continue;
      const std::string bname =
          "task" + std::to_string(t.task_id) + "_source" + std::to_string(s) + ".csv";
      save_csv_matrix((fs::path(out_dir) / bname).string(), ds.block(t.task_id, s));
      jsources.push_back({{"source_id", s},
                          {"path", bname},
                          {"dim", layout.source_dims[s]},
                          {"provenance", observed ? "observed" : "imputed"}});
    }
    jt["sources"] = std::move(jsources);
    jtasks.push_back(std::move(jt));
  }
  doc["tasks"] = std::move(jtasks);
  std::ofstream out(fs::path(out_dir) / "manifest.json");
  if (!out) throw ValidationError(out_dir + ": cannot write manifest.json");
  out << doc.dump(2) << '\n';
}

}  // namespace mtlhmb
