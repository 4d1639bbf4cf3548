#include "harness.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <thread>

namespace mtlhmb {

namespace fs = std::filesystem;
using nlohmann::json;

double rmse(const Vector& pred, const Vector& y) {
  if (pred.size() != y.size()) throw ValidationError("rmse: length mismatch");
  if (pred.size() == 0) throw ValidationError("rmse: empty vectors");
  return std::sqrt((pred - y).squaredNorm() / static_cast<double>(y.size()));
}

double average_rmse(const std::vector<double>& per_task) {
  if (per_task.empty()) throw ValidationError("average_rmse: empty input");
  return std::accumulate(per_task.begin(), per_task.end(), 0.0) /
         static_cast<double>(per_task.size());
}

GridMode grid_mode_from_string(const std::string& s) {
  if (s == "full") return GridMode::Full;
  if (s == "reduced") return GridMode::Reduced;
  if (s == "fixed") return GridMode::Fixed;
  throw ValidationError("unknown grid mode: " + s);
}

std::string to_string(GridMode mode) {
  switch (mode) {
    case GridMode::Full: return "full";
    case GridMode::Reduced: return "reduced";
    case GridMode::Fixed: return "fixed";
  }
  throw ValidationError("unknown grid mode");
}

std::vector<SupervisedNetConfig> supervised_grid(GridMode mode) {
  std::vector<SupervisedNetConfig> out;
  auto add = [&](int w, int d, int b) {
    SupervisedNetConfig cfg;
    cfg.width = w;
    cfg.depth = d;
    cfg.batch = b;
    out.push_back(cfg);
  };
  switch (mode) {
    case GridMode::Full:
      for (int w : {32, 64, 128})
        for (int d : {2, 3, 4, 5})
          for (int b : {8, 16, 32}) add(w, d, b);
      break;
    case GridMode::Reduced:
      for (int w : {32, 64})
        for (int d : {2, 3}) add(w, d, 16);
      break;
    case GridMode::Fixed:
      add(64, 3, 16);
      break;
  }
  return out;
}

std::vector<MtlConfig> mtl_grid(GridMode mode) {
  std::vector<MtlConfig> out;
  auto add = [&](int w, int d, int L, int b, double reg) {
    MtlConfig cfg;
    cfg.enc_width = w;
    cfg.enc_depth = d;
    cfg.path_depth = L;
    cfg.batch = b;
    cfg.gamma = cfg.delta = cfg.kappa = reg;
    out.push_back(cfg);
  };
  switch (mode) {
    case GridMode::Full:
      for (int w : {32, 64, 128})
        for (int d : {2, 3, 4})
          for (int L : {2, 3, 4})
            for (int b : {8, 16, 32})
              for (double reg : {0.01, 0.1, 1.0}) add(w, d, L, b, reg);
      break;
    case GridMode::Reduced:
      for (int w : {32, 64})
        for (int d : {2, 3}) add(w, d, 3, 16, 0.1);
      break;
    case GridMode::Fixed:
      add(64, 3, 3, 16, 0.1);
      break;
  }
  return out;
}

std::vector<HbiConfig> hbi_grid(GridMode mode) {
  std::vector<HbiConfig> out;
  auto add = [&](int w, int d, int b) {
    HbiConfig cfg;
    cfg.width = w;
    cfg.depth = d;
    cfg.batch = b;
    out.push_back(cfg);
  };
  if (mode == GridMode::Full) {
    for (int w : {8, 16, 32})
      for (int d : {1, 2, 3})
        for (int b : {8, 16, 32}) add(w, d, b);
  } else {
    add(32, 2, 16);
  }
  return out;
}

std::size_t pick_best(const std::vector<double>& losses) {
  if (losses.empty()) throw ValidationError("pick_best: empty grid");
  std::size_t best = 0;
  for (std::size_t i = 1; i < losses.size(); ++i)
    if (losses[i] < losses[best]) best = i;
  return best;
}

void ExperimentSpec::validate() const {
  dgp.validate();
  if (repetitions < 1) throw ValidationError("experiment: repetitions must be >= 1");
  if (sweep_values.empty()) throw ValidationError("experiment: sweep values empty");
  if (methods.empty()) throw ValidationError("experiment: methods empty");
  for (const std::string& m : methods)
    if (m != "mtl_hmb") baseline_kind_from_string(m);
  if (max_epochs < 1 || patience < 1)
    throw ValidationError("experiment: max_epochs/patience must be positive");
  for (double v : sweep_values) apply_sweep(dgp, sweep_param, v).validate();
}

namespace {

DgpConfig two_task_base() {
  DgpConfig cfg;
  cfg.task_count = 2;
  cfg.n = {300, 300};
  cfg.p = {100, 25, 25};
  cfg.rho = {0.95, 0.95};
  cfg.alpha = 0.3;
  cfg.sigma = {0.1, 0.1};
  cfg.response_form = ResponseForm::NonlinearSquare;
  return cfg;
}

}  // namespace

ExperimentSpec setting_template(const std::string& id) {
  ExperimentSpec spec;
  spec.setting = id;
  spec.methods = {"stl", "htl", "mtl_hmb"};
  spec.dgp = two_task_base();
  if (id == "A") {
    spec.sweep_param = "rho";
    spec.sweep_values = {0.5, 0.65, 0.8, 0.95};
  } else if (id == "B") {
    spec.dgp.rho = {0.95, 0.5};
    spec.sweep_param = "rho2";
    spec.sweep_values = {0.5, 0.7, 0.9};
  } else if (id == "C") {
    spec.dgp.rho = {0.8, 0.8};
    spec.sweep_param = "alpha";
    spec.sweep_values = {0.1, 0.3, 0.5, 0.7, 0.9};
  } else if (id == "D") {
    spec.dgp.rho = {0.95, 0.7};
    spec.sweep_param = "n";
    spec.sweep_values = {100, 200, 300, 400, 500, 600};
  } else if (id == "E") {
    spec.dgp.rho = {0.95, 0.7};
    spec.sweep_param = "p_spec";
    spec.sweep_values = {25, 50, 75, 100};
  } else if (id == "F") {
    spec.dgp.rho = {0.95, 0.7};
    spec.sweep_param = "sigma1";
    spec.sweep_values = {0.1, 0.2, 0.3, 0.4, 0.5};
  } else if (id == "MULTI3" || id == "MULTI4") {
    const int T = id == "MULTI3" ? 3 : 4;
    spec.dgp.task_count = T;
    spec.dgp.n.assign(T, 300);
    spec.dgp.p.assign(T + 1, 25);
    spec.dgp.p[0] = 125;
    spec.dgp.rho.assign(T, 0.9);
    spec.dgp.rho[0] = 0.95;
    spec.dgp.sigma.assign(T, 0.1);
  } else if (id == "ABLATION") {
    spec.dgp.rho = {0.8, 0.6};
    spec.dgp.n = {300, 100};
    spec.sweep_param = "n2";
    spec.sweep_values = {100, 200, 300, 400};
    spec.methods = {"stl", "htl", "mtl_hmb", "step1_stl", "hps_hbi", "naive_step2"};
  } else if (id == "LINEAR") {
    spec.dgp.rho = {0.95, 0.7};
    spec.dgp.response_form = ResponseForm::Linear;
  } else if (id == "CUSTOM") {
    // caller must supply the DGP
  } else {
    throw ValidationError("unknown setting: " + id);
  }
  return spec;
}

DgpConfig apply_sweep(DgpConfig base, const std::string& param, double value) {
  auto as_count = [&](double v) {
    const int n = static_cast<int>(std::llround(v));
    if (std::abs(v - n) > 1e-9 || n < 1)
      throw ValidationError("sweep: " + param + " needs a positive integer, got " +
                            std::to_string(v));
    return n;
  };
  if (param == "none") return base;
  if (param == "rho") {
    std::fill(base.rho.begin(), base.rho.end(), value);
  } else if (param == "rho2") {
    if (base.task_count < 2) throw ValidationError("sweep: rho2 needs at least 2 tasks");
    base.rho[1] = value;
  } else if (param == "alpha") {
    base.alpha = value;
  } else if (param == "n") {
    std::fill(base.n.begin(), base.n.end(), as_count(value));
  } else if (param == "n2") {
    if (base.task_count < 2) throw ValidationError("sweep: n2 needs at least 2 tasks");
    base.n[1] = as_count(value);
  } else if (param == "sigma1") {
    base.sigma[0] = value;
  } else if (param == "p_spec") {
    for (std::size_t s = 1; s < base.p.size(); ++s) base.p[s] = as_count(value);
  } else {
    throw ValidationError("unknown sweep parameter: " + param);
  }
  return base;
}

ExperimentSpec parse_experiment_config(const std::string& config_json) {
  json doc;
  try {
    doc = json::parse(config_json);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("experiment config: ") + e.what());
  }
  ExperimentSpec spec = setting_template(doc.value("setting", "CUSTOM"));
  if (doc.contains("dgp")) {
    json merged = json::parse(dgp_config_to_json(spec.dgp));
    merged.update(doc["dgp"]);
    spec.dgp = dgp_config_from_json(merged.dump());
  }
  if (doc.contains("sweep")) {
    spec.sweep_param = doc["sweep"].value("param", "none");
    if (doc["sweep"].contains("values"))
      spec.sweep_values = doc["sweep"]["values"].get<std::vector<double>>();
  }
  if (doc.contains("methods")) spec.methods = doc["methods"].get<std::vector<std::string>>();
  spec.repetitions = doc.value("repetitions", spec.repetitions);
  spec.base_seed = doc.value("base_seed", spec.base_seed);
  if (doc.contains("grid")) spec.grid = grid_mode_from_string(doc["grid"].get<std::string>());
  if (doc.contains("split")) {
    const auto f = doc["split"].value("fractions", std::vector<double>{0.6, 0.2, 0.2});
    if (f.size() != 3) throw ValidationError("experiment config: split.fractions needs 3 entries");
    spec.frac_train = f[0];
    spec.frac_val = f[1];
    spec.frac_test = f[2];
  }
  spec.max_epochs = doc.value("max_epochs", spec.max_epochs);
  spec.patience = doc.value("patience", spec.patience);
  spec.validate();
  return spec;
}

std::string config_hash(const std::string& canonical) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

constexpr std::uint64_t kRepetitionStride = 1000003ULL;

Matrix take_rows(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

Vector take_rows(const Vector& v, const std::vector<int>& rows) {
  Vector out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(rows[i]);
  return out;
}

/// Everything one repetition's methods share: the generated raw data, split,
/// standardization, and lazily built imputations.
struct RepetitionContext {
  const ExperimentSpec* spec = nullptr;
  DgpConfig dgp;
  std::uint64_t rep_seed = 0;
  GroundTruthDataset gt;
  SplitIndices splits;
  StandardizationStats stats;
  MultiTaskDataset std_data;
  std::optional<ImputedDataset> hbi_imputed;
  std::optional<ImputedDataset> naive_imputed;

  const ImputedDataset& hbi() {
    if (!hbi_imputed) {
      std::vector<HbiConfig> candidates = hbi_grid(spec->grid);
      for (std::size_t c = 0; c < candidates.size(); ++c) {
        candidates[c].seed = mix_seed(rep_seed, 0x71);
        candidates[c].max_epochs = spec->max_epochs;
        candidates[c].patience = spec->patience;
      }
      hbi_imputed = impute_all(std_data, splits, candidates);
    }
    return *hbi_imputed;
  }

  const ImputedDataset& naive() {
    if (!naive_imputed) {
      HbiConfig cfg = hbi_grid(GridMode::Fixed).front();
      cfg.seed = mix_seed(rep_seed, 0x81);
      cfg.max_epochs = spec->max_epochs;
      cfg.patience = spec->patience;
      naive_imputed = naive_impute_all(std_data, splits, cfg);
    }
    return *naive_imputed;
  }
};

RepetitionContext make_context(const ExperimentSpec& spec, double sweep_value, int repetition) {
  RepetitionContext ctx;
  ctx.spec = &spec;
  ctx.dgp = apply_sweep(spec.dgp, spec.sweep_param, sweep_value);
  ctx.rep_seed = spec.base_seed + static_cast<std::uint64_t>(repetition) * kRepetitionStride;
  ctx.dgp.seed = ctx.rep_seed;
  ctx.gt = generate(ctx.dgp);
  SplitSpec split_spec;
  split_spec.train = spec.frac_train;
  split_spec.val = spec.frac_val;
  split_spec.test = spec.frac_test;
  split_spec.seed = mix_seed(ctx.rep_seed, 0x91);
  ctx.splits = split(ctx.gt.observed, split_spec);
  ctx.stats = standardize_fit(ctx.gt.observed, ctx.splits);
  ctx.std_data = standardize_apply(ctx.stats, ctx.gt.observed);
  return ctx;
}

/// Raw-scale test RMSE per task given standardized-space predictions.
std::vector<double> test_rmse(
    RepetitionContext& ctx,
    const std::function<Vector(int task, const std::vector<int>& rows)>& predict_rows) {
  std::vector<double> out;
  for (int t = 1; t <= ctx.dgp.task_count; ++t) {
    const std::vector<int>& rows = ctx.splits.test[t - 1];
    const Vector pred_std = predict_rows(t, rows);
    const Vector pred = ctx.stats.invert_y(t - 1, pred_std);
    const Vector y_raw = take_rows(ctx.gt.observed.task(t).y, rows);
    out.push_back(rmse(pred, y_raw));
  }
  return out;
}

std::vector<double> run_mtl_family(RepetitionContext& ctx, const ImputedDataset& imputed,
                                   TaskEncoderInput input_mode, std::uint64_t stream,
                                   std::string* hash_out) {
  const ExperimentSpec& spec = *ctx.spec;
  std::vector<MtlConfig> grid = mtl_grid(spec.grid);
  std::vector<double> losses;
  std::vector<MtlModel> models;
  for (std::size_t c = 0; c < grid.size(); ++c) {
    MtlConfig cfg = grid[c];
    cfg.task_input = input_mode;
    if (input_mode == TaskEncoderInput::OwnSource) cfg.delta = 0.0;
    cfg.max_epochs = spec.max_epochs;
    cfg.patience = spec.patience;
    cfg.seed = mix_seed(mix_seed(ctx.rep_seed, stream), c);
    MtlModel model = input_mode == TaskEncoderInput::OwnSource
                         ? train_htl(ctx.std_data, ctx.splits, cfg)
                         : train_mtl(imputed, ctx.splits, cfg);
    losses.push_back(mtl_validation_loss(model, imputed, ctx.splits));
    models.push_back(std::move(model));
  }
  const std::size_t best = pick_best(losses);
  const MtlModel& model = models[best];
  *hash_out = config_hash("mtl w=" + std::to_string(grid[best].enc_width) +
                          " d=" + std::to_string(grid[best].enc_depth) +
                          " L=" + std::to_string(grid[best].path_depth) +
                          " b=" + std::to_string(grid[best].batch) +
                          " g=" + std::to_string(grid[best].gamma) + "|" +
                          dgp_config_to_json(ctx.dgp));
  return test_rmse(ctx, [&](int t, const std::vector<int>& rows) {
    const TaskDataset& task = imputed.base.task(t);
    return predict(model, t, take_rows(task.x_anchor, rows),
                   take_rows(task_input_matrix(model, imputed, t), rows));
  });
}

std::vector<double> run_stl_family(RepetitionContext& ctx, const ImputedDataset& data,
                                   bool full_features, std::uint64_t stream,
                                   std::string* hash_out) {
  const ExperimentSpec& spec = *ctx.spec;
  const std::vector<SupervisedNetConfig> grid = supervised_grid(spec.grid);
  std::vector<Mlp> nets;
  std::string hash_src = "stl";
  for (int t = 1; t <= ctx.dgp.task_count; ++t) {
    const TaskDataset& task = data.base.task(t);
    Matrix x;
    if (full_features) {
      x = data.full_features(t);
    } else {
      x.resize(task.rows(), task.x_anchor.cols() + task.x_specific.cols());
      x << task.x_anchor, task.x_specific;
    }
    const Matrix x_train = take_rows(x, ctx.splits.train[t - 1]);
    const Matrix x_val = take_rows(x, ctx.splits.val[t - 1]);
    const Vector y_train = take_rows(task.y, ctx.splits.train[t - 1]);
    const Vector y_val = take_rows(task.y, ctx.splits.val[t - 1]);
    std::vector<double> losses;
    std::vector<Mlp> candidates;
    for (std::size_t c = 0; c < grid.size(); ++c) {
      SupervisedNetConfig cfg = grid[c];
      cfg.max_epochs = spec.max_epochs;
      cfg.patience = spec.patience;
      cfg.seed = mix_seed(mix_seed(ctx.rep_seed, stream + t), c);
      Mlp net =
          train_regressor(x_train, y_train, x_val, y_val, task.response_kind, cfg);
      losses.push_back(supervised_loss(task.response_kind, forward(net, x_val).col(0), y_val));
      candidates.push_back(std::move(net));
    }
    const std::size_t best = pick_best(losses);
    hash_src += " t" + std::to_string(t) + ":w" + std::to_string(grid[best].width) + "d" +
                std::to_string(grid[best].depth);
    nets.push_back(std::move(candidates[best]));
  }
  *hash_out = config_hash(hash_src + "|" + dgp_config_to_json(ctx.dgp));
  return test_rmse(ctx, [&](int t, const std::vector<int>& rows) {
    const TaskDataset& task = data.base.task(t);
    Matrix x;
    if (full_features) {
      x = data.full_features(t);
    } else {
      x.resize(task.rows(), task.x_anchor.cols() + task.x_specific.cols());
      x << task.x_anchor, task.x_specific;
    }
    return forward(nets[t - 1], take_rows(x, rows)).col(0).eval();
  });
}

std::vector<double> run_hps(RepetitionContext& ctx, std::uint64_t stream, std::string* hash_out) {
  const ExperimentSpec& spec = *ctx.spec;
  const ImputedDataset& imputed = ctx.hbi();
  const std::vector<SupervisedNetConfig> grid = supervised_grid(spec.grid);
  std::vector<double> losses;
  std::vector<HpsModel> models;
  for (std::size_t c = 0; c < grid.size(); ++c) {
    SupervisedNetConfig cfg = grid[c];
    cfg.max_epochs = spec.max_epochs;
    cfg.patience = spec.patience;
    cfg.seed = mix_seed(mix_seed(ctx.rep_seed, stream), c);
    HpsModel model = train_hps(imputed, ctx.splits, cfg);
    losses.push_back(hps_validation_loss(model, imputed, ctx.splits));
    models.push_back(std::move(model));
  }
  const std::size_t best = pick_best(losses);
  const HpsModel& model = models[best];
  *hash_out = config_hash("hps w=" + std::to_string(grid[best].width) +
                          " d=" + std::to_string(grid[best].depth) + "|" +
                          dgp_config_to_json(ctx.dgp));
  return test_rmse(ctx, [&](int t, const std::vector<int>& rows) {
    return predict(model, t, take_rows(imputed.full_features(t), rows));
  });
}

std::vector<double> run_method(RepetitionContext& ctx, const std::string& method,
                               std::string* hash_out) {
  if (method == "mtl_hmb")
    return run_mtl_family(ctx, ctx.hbi(), TaskEncoderInput::FullConcat, 0x11, hash_out);
  if (method == "naive_step2")
    return run_mtl_family(ctx, ctx.naive(), TaskEncoderInput::FullConcat, 0x61, hash_out);
  if (method == "htl") {
    ImputedDataset wrapper;
    wrapper.base = ctx.std_data;
    return run_mtl_family(ctx, wrapper, TaskEncoderInput::OwnSource, 0x31, hash_out);
  }
  if (method == "stl") {
    ImputedDataset wrapper;
    wrapper.base = ctx.std_data;
    return run_stl_family(ctx, wrapper, false, 0x20, hash_out);
  }
  if (method == "step1_stl") return run_stl_family(ctx, ctx.hbi(), true, 0x50, hash_out);
  if (method == "hps_hbi") return run_hps(ctx, 0x41, hash_out);
  throw ValidationError("unknown method: " + method);
}

}  // namespace

std::vector<ResultRecord> run_repetition(const ExperimentSpec& spec, double sweep_value,
                                         int repetition) {
  RepetitionContext ctx = make_context(spec, sweep_value, repetition);
  std::vector<ResultRecord> records;
  for (const std::string& method : spec.methods) {
    ResultRecord base;
    base.setting = spec.setting;
    base.sweep_param = spec.sweep_param;
    base.sweep_value = sweep_value;
    base.repetition = repetition;
    base.method = method;
    base.seed = ctx.rep_seed;
    const auto start = std::chrono::steady_clock::now();
    try {
      std::string hash;
      const std::vector<double> per_task = run_method(ctx, method, &hash);
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      base.config_hash = hash;
      base.wall_time = wall;
      for (int t = 1; t <= ctx.dgp.task_count; ++t) {
        ResultRecord rec = base;
        rec.task_id = t;
        rec.rmse = per_task[t - 1];
        records.push_back(std::move(rec));
      }
      ResultRecord avg = base;
      avg.task_id = 0;
      avg.rmse = average_rmse(per_task);
      records.push_back(std::move(avg));
    } catch (const std::exception& e) {
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      for (int t = 0; t <= ctx.dgp.task_count; ++t) {
        ResultRecord rec = base;
        rec.task_id = t;
        rec.failed = true;
        rec.error = e.what();
        rec.wall_time = wall;
        records.push_back(std::move(rec));
      }
    }
  }
  return records;
}

std::vector<ResultRecord> run_experiment(const ExperimentSpec& spec, int workers,
                                         std::ostream* progress) {
  spec.validate();
  struct Job {
    double sweep_value;
    int repetition;
  };
  std::vector<Job> jobs;
  for (double v : spec.sweep_values)
    for (int r = 0; r < spec.repetitions; ++r) jobs.push_back({v, r});

  std::vector<std::vector<ResultRecord>> slots(jobs.size());
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex log_mutex;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      slots[i] = run_repetition(spec, jobs[i].sweep_value, jobs[i].repetition);
      const std::size_t completed = done.fetch_add(1) + 1;
      if (progress) {
        std::lock_guard<std::mutex> lock(log_mutex);
        *progress << "[" << completed << "/" << jobs.size() << "] " << spec.setting << " "
                  << spec.sweep_param << "=" << jobs[i].sweep_value << " rep "
                  << jobs[i].repetition << std::endl;
      }
    }
  };

  const int n_threads = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  std::vector<ResultRecord> records;
  for (std::vector<ResultRecord>& slot : slots)
    for (ResultRecord& rec : slot) records.push_back(std::move(rec));
  return records;
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string sanitize(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

/// Writes via a temp file in the same directory, then renames into place.
class AtomicFile {
 public:
  explicit AtomicFile(const std::string& path)
      : path_(path), tmp_(path + ".tmp"), out_(tmp_) {
    if (!out_) throw ValidationError(tmp_ + ": cannot open for writing");
  }
  std::ofstream& stream() { return out_; }
  void commit() {
    out_.close();
    if (!out_) throw ValidationError(tmp_ + ": write failed");
    fs::rename(tmp_, path_);
  }

 private:
  std::string path_, tmp_;
  std::ofstream out_;
};

}  // namespace

void write_records_csv(const std::string& path, const std::vector<ResultRecord>& records) {
  AtomicFile file(path);
  std::ofstream& out = file.stream();
  out << "setting,sweep_param,sweep_value,repetition,method,task_id,split,rmse,seed,config_hash,"
         "status,error\n";
  for (const ResultRecord& r : records) {
    out << r.setting << ',' << r.sweep_param << ',' << fmt_double(r.sweep_value) << ','
        << r.repetition << ',' << r.method << ',' << r.task_id << ',' << r.split << ','
        << (r.failed ? "" : fmt_double(r.rmse)) << ',' << r.seed << ',' << r.config_hash << ','
        << (r.failed ? "failed" : "ok") << ',' << sanitize(r.error) << '\n';
  }
  file.commit();
}

void write_timings_csv(const std::string& path, const std::vector<ResultRecord>& records) {
  AtomicFile file(path);
  std::ofstream& out = file.stream();
  out << "setting,sweep_param,sweep_value,repetition,method,wall_time_s\n";
  for (const ResultRecord& r : records) {
    if (r.task_id != 0) continue;
    out << r.setting << ',' << r.sweep_param << ',' << fmt_double(r.sweep_value) << ','
        << r.repetition << ',' << r.method << ',' << fmt_double(r.wall_time) << '\n';
  }
  file.commit();
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw ValidationError("quantile: empty data");
  if (sorted.size() == 1) return sorted.front();
  const double h = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::vector<SummaryRow> aggregate(const std::vector<ResultRecord>& records) {
  if (records.empty()) throw ValidationError("aggregate: no records");
  struct Key {
    std::string setting, sweep_param, method;
    double sweep_value;
    bool operator<(const Key& o) const {
      return std::tie(setting, sweep_param, sweep_value, method) <
             std::tie(o.setting, o.sweep_param, o.sweep_value, o.method);
    }
  };
  std::map<Key, std::pair<std::vector<double>, int>> groups;
  for (const ResultRecord& r : records) {
    if (r.task_id != 0) continue;
    auto& entry = groups[{r.setting, r.sweep_param, r.method, r.sweep_value}];
    if (r.failed)
      ++entry.second;
    else
      entry.first.push_back(r.rmse);
  }
  std::vector<SummaryRow> rows;
  for (auto& [key, entry] : groups) {
    std::vector<double>& vals = entry.first;
    SummaryRow row;
    row.setting = key.setting;
    row.sweep_param = key.sweep_param;
    row.sweep_value = key.sweep_value;
    row.method = key.method;
    row.n = static_cast<int>(vals.size());
    row.n_failed = entry.second;
    if (!vals.empty()) {
      std::sort(vals.begin(), vals.end());
      row.mean = std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
      if (vals.size() > 1) {
        double ss = 0.0;
        for (double v : vals) ss += (v - row.mean) * (v - row.mean);
        row.sd = std::sqrt(ss / (vals.size() - 1));
      }
      row.min = vals.front();
      row.q1 = quantile_sorted(vals, 0.25);
      row.median = quantile_sorted(vals, 0.5);
      row.q3 = quantile_sorted(vals, 0.75);
      row.max = vals.back();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows) {
  AtomicFile file(path);
  std::ofstream& out = file.stream();
  out << "setting,sweep_param,sweep_value,method,n,n_failed,mean,sd,min,q1,median,q3,max\n";
  for (const SummaryRow& r : rows) {
    out << r.setting << ',' << r.sweep_param << ',' << fmt_double(r.sweep_value) << ','
        << r.method << ',' << r.n << ',' << r.n_failed << ',' << fmt_double(r.mean) << ','
        << fmt_double(r.sd) << ',' << fmt_double(r.min) << ',' << fmt_double(r.q1) << ','
        << fmt_double(r.median) << ',' << fmt_double(r.q3) << ',' << fmt_double(r.max) << '\n';
  }
  file.commit();
}

void write_summary_json(const std::string& path, const std::vector<SummaryRow>& rows) {
  json doc = json::array();
  for (const SummaryRow& r : rows) {
    json jr;
    jr["setting"] = r.setting;
    jr["sweep_param"] = r.sweep_param;
    jr["sweep_value"] = r.sweep_value;
    jr["method"] = r.method;
    jr["n"] = r.n;
    jr["n_failed"] = r.n_failed;
    jr["mean"] = r.mean;
    jr["sd"] = r.sd;
    jr["min"] = r.min;
    jr["q1"] = r.q1;
    jr["median"] = r.median;
    jr["q3"] = r.q3;
    jr["max"] = r.max;
    // Percentage improvement of this method over every other method at the
    // same sweep point: (baseline - this) / baseline * 100.
    json improvements = json::object();
    for (const SummaryRow& other : rows) {
      if (other.method == r.method || other.setting != r.setting ||
          other.sweep_value != r.sweep_value || other.n == 0 || other.mean == 0.0)
        continue;
      improvements[other.method] = (other.mean - r.mean) / other.mean * 100.0;
    }
    jr["improvement_pct_vs"] = std::move(improvements);
    doc.push_back(std::move(jr));
  }
  AtomicFile file(path);
  file.stream() << doc.dump(2) << '\n';
  file.commit();
}

}  // namespace mtlhmb
