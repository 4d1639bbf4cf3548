#include "dgp.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/Cholesky>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace mtlhmb {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(ResponseForm form) {
  return form == ResponseForm::NonlinearSquare ? "nonlinear_square" : "linear";
}

ResponseForm response_form_from_string(const std::string& s) {
  if (s == "nonlinear_square") return ResponseForm::NonlinearSquare;
  if (s == "linear") return ResponseForm::Linear;
  throw ValidationError("unknown response_form: " + s);
}

int DgpConfig::total_dim() const { return std::accumulate(p.begin(), p.end(), 0); }

void DgpConfig::validate() const {
  if (task_count < 1) throw ValidationError("dgp: task_count must be >= 1");
  if (static_cast<int>(n.size()) != task_count) throw ValidationError("dgp: need one n per task");
  if (static_cast<int>(p.size()) != task_count + 1)
    throw ValidationError("dgp: need T+1 source dims");
  if (static_cast<int>(rho.size()) != task_count) throw ValidationError("dgp: need one rho per task");
  if (static_cast<int>(sigma.size()) != task_count)
    throw ValidationError("dgp: need one sigma per task");
  for (int v : n)
    if (v < 0) throw ValidationError("dgp: n must be nonnegative");
  for (int v : p)
    if (v < 1) throw ValidationError("dgp: source dims must be positive");
  for (double r : rho)
    if (!(r > 0.0 && r < 1.0)) throw ValidationError("dgp: rho must lie in (0,1)");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("dgp: alpha must lie in [0,1]");
  for (double s : sigma)
    if (s < 0.0) throw ValidationError("dgp: sigma must be nonnegative");
}

Matrix gen_covariance(int p, double rho) {
  if (!(rho > 0.0 && rho < 1.0)) throw ValidationError("gen_covariance: rho must lie in (0,1)");
  if (p < 1) throw ValidationError("gen_covariance: p must be positive");
  Matrix sigma(p, p);
  const double log_rho = std::log(rho);
  for (int i = 0; i < p; ++i) {
    sigma(i, i) = 1.0;
    for (int j = 0; j < i; ++j) {
      const double v = std::exp(0.01 * (i - j) * log_rho);
      sigma(i, j) = v;
      sigma(j, i) = v;
    }
  }
  return sigma;
}

Matrix sample_gaussian(int n, const Matrix& sigma, Rng& rng) {
  if (sigma.rows() != sigma.cols()) throw ValidationError("sample_gaussian: sigma must be square");
  const Eigen::Index p = sigma.rows();
  Eigen::LLT<Matrix> llt(sigma);
  if (llt.info() != Eigen::Success) {
    Matrix jittered = sigma + 1e-10 * Matrix::Identity(p, p);
    llt.compute(jittered);
    if (llt.info() != Eigen::Success)
      throw ValidationError("sample_gaussian: covariance is not positive definite");
  }
  Matrix lower = llt.matrixL();
  Matrix z(n, p);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < p; ++j) z(i, j) = gauss(rng);
  return z * lower.transpose();
}

double gen_response(const Vector& x, const Vector& v_c, const Vector& v_t, double alpha,
                    ResponseForm form) {
  if (x.size() != v_c.size() || x.size() != v_t.size())
    throw ValidationError("gen_response: dimension mismatch");
  const double p = static_cast<double>(x.size());
  const double shared = (form == ResponseForm::NonlinearSquare)
                            ? v_c.dot(x.cwiseProduct(x)) / p
                            : v_c.dot(x) / p;
  const double specific = v_t.dot(x) / p;
  return alpha * shared + (1.0 - alpha) * specific;
}

GroundTruthDataset generate(const DgpConfig& config) {
  config.validate();
  const int p = config.total_dim();
  Rng rng(config.seed);
  std::normal_distribution<double> coeff(-10.0, 10.0);

  GroundTruthDataset gt;
  gt.config = config;
  gt.v_c.resize(p);
  for (int d = 0; d < p; ++d) gt.v_c(d) = coeff(rng);
  for (int t = 0; t < config.task_count; ++t) {
    Vector v(p);
    for (int d = 0; d < p; ++d) v(d) = coeff(rng);
    gt.v_t.push_back(std::move(v));
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  MultiTaskDataset observed;
  observed.layout = BlockLayout::anchored(config.task_count, config.p);
  for (int t = 0; t < config.task_count; ++t) {
    Matrix sigma = gen_covariance(p, config.rho[t]);
    Matrix x = sample_gaussian(config.n[t], sigma, rng);
    Vector y(config.n[t]);
    for (int i = 0; i < config.n[t]; ++i) {
      const Vector row = x.row(i).transpose();
      y(i) = gen_response(row, gt.v_c, gt.v_t[t], config.alpha, config.response_form) +
             config.sigma[t] * gauss(rng);
    }
    TaskDataset task;
    task.task_id = t + 1;
    task.x_anchor = x.leftCols(config.p[0]);
    task.x_specific = x.middleCols(observed.layout.source_offset(t + 1), config.p[t + 1]);
    task.y = y;
    task.response_kind = ResponseKind::Continuous;
    observed.tasks.push_back(std::move(task));
    gt.x_full.push_back(std::move(x));
    gt.y.push_back(std::move(y));
  }
  gt.observed = std::move(observed);
  gt.observed.validate();
  return gt;
}

Matrix GroundTruthDataset::hidden_block(int task, int source) const {
  const BlockLayout& layout = observed.layout;
  if (layout.is_observed(task, source))
    throw ValidationError("hidden_block: block is observed");
  return x_full[task - 1].middleCols(layout.source_offset(source), layout.source_dims[source]);
}

void save_ground_truth(const std::string& out_dir, const GroundTruthDataset& gt) {
  fs::create_directories(out_dir);
  ImputedDataset wrapper;
  wrapper.base = gt.observed;
  SplitSpec split;
  split.seed = gt.config.seed;
  save_manifest(out_dir, wrapper, split);

  json side;
  side["config"] = json::parse(dgp_config_to_json(gt.config));
  side["v_c"] = std::vector<double>(gt.v_c.data(), gt.v_c.data() + gt.v_c.size());
  json jvt = json::array();
  json jfull = json::array();
  for (int t = 0; t < gt.config.task_count; ++t) {
    jvt.push_back(std::vector<double>(gt.v_t[t].data(), gt.v_t[t].data() + gt.v_t[t].size()));
    const std::string fname = "task" + std::to_string(t + 1) + "_full.csv";
    save_csv_matrix((fs::path(out_dir) / fname).string(), gt.x_full[t]);
    jfull.push_back(fname);
  }
  side["v_t"] = std::move(jvt);
  side["full_feature_paths"] = std::move(jfull);
  std::ofstream out(fs::path(out_dir) / "ground_truth.json");
  if (!out) throw ValidationError(out_dir + ": cannot write ground_truth.json");
  out << side.dump(2) << '\n';
}

DgpConfig dgp_config_from_json(const std::string& config_json) {
  json doc;
  try {
    doc = json::parse(config_json);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("dgp config: ") + e.what());
  }
  DgpConfig cfg;
  cfg.task_count = doc.value("task_count", 2);
  cfg.n = doc.value("n", std::vector<int>(cfg.task_count, 300));
  cfg.p = doc.value("p", std::vector<int>{100, 25, 25});
  cfg.rho = doc.value("rho", std::vector<double>(cfg.task_count, 0.95));
  cfg.alpha = doc.value("alpha", 0.3);
  cfg.sigma = doc.value("sigma", std::vector<double>(cfg.task_count, 0.1));
  cfg.response_form = response_form_from_string(doc.value("response_form", "nonlinear_square"));
  cfg.seed = doc.value("seed", 0ULL);
  cfg.validate();
  return cfg;
}

std::string dgp_config_to_json(const DgpConfig& config) {
  json doc;
  doc["task_count"] = config.task_count;
  doc["n"] = config.n;
  doc["p"] = config.p;
  doc["rho"] = config.rho;
  doc["alpha"] = config.alpha;
  doc["sigma"] = config.sigma;
  doc["response_form"] = to_string(config.response_form);
  doc["seed"] = config.seed;
  return doc.dump();
}

}  // namespace mtlhmb
