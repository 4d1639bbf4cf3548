#include "model_io.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace mtlhmb {

using nlohmann::json;

namespace {

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

Matrix matrix_from_json(const json& j) {
  const Eigen::Index rows = j.at("rows").get<Eigen::Index>();
  const Eigen::Index cols = j.at("cols").get<Eigen::Index>();
  Matrix m(rows, cols);
  const json& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows)
    throw ValidationError("model file: matrix row count mismatch");
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = data[r];
    if (static_cast<Eigen::Index>(row.size()) != cols)
      throw ValidationError("model file: matrix column count mismatch");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[c].get<double>();
  }
  return m;
}

json vector_to_json(const Vector& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Vector vector_from_json(const json& j) {
  const auto vals = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::ReLU: return "relu";
    case Activation::Sigmoid: return "sigmoid";
  }
  throw ValidationError("unknown activation");
}

Activation activation_from_name(const std::string& s) {
  if (s == "identity") return Activation::Identity;
  if (s == "relu") return Activation::ReLU;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw ValidationError("model file: unknown activation " + s);
}

json layer_to_json(const DenseLayer& layer) {
  return json{{"weights", matrix_to_json(layer.weights)},
              {"bias", matrix_to_json(layer.bias)},
              {"activation", activation_name(layer.act)}};
}

DenseLayer layer_from_json(const json& j) {
  DenseLayer layer;
  layer.weights = matrix_from_json(j.at("weights"));
  layer.bias = matrix_from_json(j.at("bias"));
  layer.act = activation_from_name(j.at("activation").get<std::string>());
  return layer;
}

json mlp_to_json(const Mlp& mlp) {
  json layers = json::array();
  for (const DenseLayer& l : mlp.layers) layers.push_back(layer_to_json(l));
  return layers;
}

Mlp mlp_from_json(const json& j) {
  Mlp mlp;
  for (const json& jl : j) mlp.layers.push_back(layer_from_json(jl));
  if (mlp.layers.empty()) throw ValidationError("model file: empty network");
  return mlp;
}

}  // namespace

void save_model(const std::string& path, const TrainedMtlModel& trained) {
  const MtlModel& m = trained.model;
  json doc;
  doc["format_version"] = kModelFormatVersion;
  doc["kind"] = "mtl_hmb";
  doc["layout"] = {{"task_count", m.layout.task_count}, {"source_dims", m.layout.source_dims}};
  json observed = json::array();
  for (auto [t, s] : m.layout.observed) observed.push_back({t, s});
  doc["layout"]["observed"] = std::move(observed);
  doc["task_input"] =
      m.task_input == TaskEncoderInput::FullConcat ? "full_concat" : "own_source";
  doc["enc_shared"] = mlp_to_json(m.enc_shared);
  json enc_task = json::array();
  for (const Mlp& e : m.enc_task) enc_task.push_back(mlp_to_json(e));
  doc["enc_task"] = std::move(enc_task);
  json path_shared = json::array();
  for (const DenseLayer& l : m.path_shared) path_shared.push_back(layer_to_json(l));
  doc["path_shared"] = std::move(path_shared);
  json path_task = json::array();
  for (const auto& path : m.path_task) {
    json levels = json::array();
    for (const DenseLayer& l : path) levels.push_back(layer_to_json(l));
    path_task.push_back(std::move(levels));
  }
  doc["path_task"] = std::move(path_task);
  json heads = json::array();
  for (const DenseLayer& h : m.heads) heads.push_back(layer_to_json(h));
  doc["heads"] = std::move(heads);
  json kinds = json::array();
  for (ResponseKind k : m.response_kinds) kinds.push_back(to_string(k));
  doc["response_kinds"] = std::move(kinds);

  json stats;
  json fmean = json::array(), fsd = json::array();
  for (const Vector& v : trained.stats.feature_mean) fmean.push_back(vector_to_json(v));
  for (const Vector& v : trained.stats.feature_sd) fsd.push_back(vector_to_json(v));
  stats["feature_mean"] = std::move(fmean);
  stats["feature_sd"] = std::move(fsd);
  stats["y_mean"] = trained.stats.y_mean;
  stats["y_sd"] = trained.stats.y_sd;
  doc["standardization"] = std::move(stats);
  doc["split"] = {{"seed", trained.split.seed},
                  {"fractions", {trained.split.train, trained.split.val, trained.split.test}}};

  std::ofstream out(path);
  if (!out) throw ValidationError(path + ": cannot open for writing");
  out << doc.dump() << '\n';
  if (!out) throw ValidationError(path + ": write failed");
}

TrainedMtlModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(path + ": cannot open file");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path + ": " + e.what());
  }
  const int version = doc.value("format_version", -1);
  if (version != kModelFormatVersion)
    throw ValidationError(path + ": unsupported model format version " + std::to_string(version));

  TrainedMtlModel trained;
  MtlModel& m = trained.model;
  m.layout.task_count = doc.at("layout").at("task_count").get<int>();
  m.layout.source_dims = doc.at("layout").at("source_dims").get<std::vector<int>>();
  for (const json& jp : doc.at("layout").at("observed"))
    m.layout.observed.emplace_back(jp[0].get<int>(), jp[1].get<int>());
  m.layout.validate();
  m.task_input = doc.at("task_input").get<std::string>() == "own_source"
                     ? TaskEncoderInput::OwnSource
                     : TaskEncoderInput::FullConcat;
  m.enc_shared = mlp_from_json(doc.at("enc_shared"));
  for (const json& je : doc.at("enc_task")) m.enc_task.push_back(mlp_from_json(je));
  for (const json& jl : doc.at("path_shared")) m.path_shared.push_back(layer_from_json(jl));
  for (const json& jp : doc.at("path_task")) {
    std::vector<DenseLayer> path;
    for (const json& jl : jp) path.push_back(layer_from_json(jl));
    m.path_task.push_back(std::move(path));
  }
  for (const json& jh : doc.at("heads")) m.heads.push_back(layer_from_json(jh));
  for (const json& jk : doc.at("response_kinds"))
    m.response_kinds.push_back(response_kind_from_string(jk.get<std::string>()));

  const json& stats = doc.at("standardization");
  for (const json& jv : stats.at("feature_mean"))
    trained.stats.feature_mean.push_back(vector_from_json(jv));
  for (const json& jv : stats.at("feature_sd"))
    trained.stats.feature_sd.push_back(vector_from_json(jv));
  trained.stats.y_mean = stats.at("y_mean").get<std::vector<double>>();
  trained.stats.y_sd = stats.at("y_sd").get<std::vector<double>>();

  trained.split.seed = doc.at("split").at("seed").get<std::uint64_t>();
  const auto fr = doc.at("split").at("fractions").get<std::vector<double>>();
  if (fr.size() != 3) throw ValidationError(path + ": split.fractions needs 3 entries");
  trained.split.train = fr[0];
  trained.split.val = fr[1];
  trained.split.test = fr[2];
  return trained;
}

}  // namespace mtlhmb
