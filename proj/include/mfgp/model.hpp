#pragma once

// One trained model of any benchmark method, plus its JSON file format.
//
// A stored model keeps hyperparameters, training data and the jitter its
// factorization needed; loading re-conditions with that jitter, so a reloaded
// model predicts bit-for-bit like the one that was saved.

#include <cctype>
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "mfgp/data.hpp"
#include "mfgp/errors.hpp"
#include "mfgp/gp.hpp"
#include "mfgp/multifidelity.hpp"
#include "mfgp/version.hpp"

namespace mfgp {

enum class Method { GpLow, GpHigh, GpAug, Largp, Nargp };

inline std::string to_string(Method m) {
  switch (m) {
  case Method::GpLow: return "gp-low";
  case Method::GpHigh: return "gp-high";
  case Method::GpAug: return "gp-aug";
  case Method::Largp: return "largp";
  case Method::Nargp: return "nargp";
  }
  return "?";
}

inline std::vector<Method> all_methods() {
  return {Method::GpLow, Method::GpHigh, Method::GpAug, Method::Largp, Method::Nargp};
}

// Accepts any case with '-' or '_'; gp-vol and gp-cat name the augmented baseline.
inline Method parse_method(const std::string &name) {
  std::string key;
  for (char c : name) key.push_back(c == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  for (auto m : all_methods())
    if (to_string(m) == key) return m;
  if (key == "gp-vol" || key == "gp-cat") return Method::GpAug;
  throw InvalidArgument("unknown method: " + name);
}

inline bool is_multifidelity(Method m) { return m == Method::Largp || m == Method::Nargp; }

struct TrainedModel {
  Method method = Method::GpHigh;
  GpModel gp;                    // gp-low, gp-high, gp-aug
  MfgpModel mf;                  // largp, nargp
  std::vector<double> indicator; // gp-aug: indicator value per level, top level used for prediction
  std::vector<ImputedPoint> imputed;
  std::optional<NormalizationStats> normalization; // set when trained on normalized data
  std::vector<std::string> feature_names;
  std::string target_name;

  // Raw feature count expected by predict_model.
  Index input_dim() const {
    if (is_multifidelity(method)) return mf.input_dim();
    return method == Method::GpAug ? gp.X_train.cols() - 1 : gp.X_train.cols();
  }
};

// Fits `method` to levels ordered lowest first. LARGP and NARGP complete
// missing lower-level rows first, with imputation seeded from derive_seed(seed, 1).
inline TrainedModel train_model(Method method, const std::vector<FidelityLevel> &levels, const FitConfig &gp,
                                std::uint64_t seed, ImputationMode imputation = ImputationMode::PosteriorMean,
                                std::vector<double> indicator = {}) {
  validate_levels(levels);
  FitConfig cfg = gp;
  cfg.seed = seed;
  TrainedModel tm;
  tm.method = method;
  switch (method) {
  case Method::GpLow:
  case Method::GpHigh: {
    const auto &lv = method == Method::GpLow ? levels.front() : levels.back();
    tm.gp = fit(lv.X, lv.y, cfg);
    break;
  }
  case Method::GpAug: {
    if (indicator.size() != levels.size()) throw InvalidArgument("gp-aug needs one indicator value per level");
    Index n = 0;
    for (const auto &lv : levels) n += lv.X.rows();
    const Index d = levels.front().X.cols();
    Matrix X(n, d + 1);
    Vector y(n);
    Index r = 0;
    for (std::size_t l = 0; l < levels.size(); ++l) {
      const auto &lv = levels[l];
      X.block(r, 0, lv.X.rows(), d) = lv.X;
      X.block(r, d, lv.X.rows(), 1).setConstant(indicator[l]);
      y.segment(r, lv.y.size()) = lv.y;
      r += lv.X.rows();
    }
    tm.gp = fit(X, y, cfg);
    tm.indicator = std::move(indicator);
    break;
  }
  case Method::Largp:
  case Method::Nargp: {
    std::vector<FidelityLevel> train = levels;
    if (levels.size() > 1) {
      NestingConfig ncfg;
      ncfg.gp = cfg;
      ncfg.mode = imputation;
      ncfg.seed = derive_seed(seed, 1);
      auto nested = ensure_nested(levels, ncfg);
      train = std::move(nested.levels);
      tm.imputed = std::move(nested.log);
    }
    MfgpConfig mcfg;
    mcfg.gp = cfg;
    tm.mf = fit_mfgp(method == Method::Largp ? MfgpKind::Largp : MfgpKind::Nargp, train, mcfg);
    break;
  }
  }
  return tm;
}

// Prediction in the units the model was trained in.
inline PredictiveDistribution predict_model(const TrainedModel &tm, const Matrix &X, bool observation_variance = false) {
  PredictOptions popt;
  popt.observation_variance = observation_variance;
  switch (tm.method) {
  case Method::GpLow:
  case Method::GpHigh: return predict(tm.gp, X, popt);
  case Method::GpAug: {
    const Index d = tm.input_dim();
    if (X.cols() != d) throw DimensionMismatch("prediction inputs", d, X.cols());
    Matrix Xs(X.rows(), d + 1);
    Xs.leftCols(d) = X;
    Xs.col(d).setConstant(tm.indicator.back());
    return predict(tm.gp, Xs, popt);
  }
  case Method::Largp:
  case Method::Nargp: return predict_mfgp(tm.mf, X, observation_variance);
  }
  throw InvalidArgument("unknown method");
}

// Prediction from raw features: inputs are normalized with the stored
// statistics and the mean and variance mapped back to target units.
inline PredictiveDistribution predict_original(const TrainedModel &tm, const Matrix &X, bool observation_variance = false) {
  if (!tm.normalization) return predict_model(tm, X, observation_variance);
  const auto &s = *tm.normalization;
  auto pd = predict_model(tm, normalize_features(X, s), observation_variance);
  const double range = s.target_zero_range() ? 0.0 : s.y_max - s.y_min;
  pd.mean = denormalize_target(pd.mean, s);
  pd.variance *= range * range;
  return pd;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline nlohmann::json vec_json(const Vector &v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector json_vec(const nlohmann::json &j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

inline nlohmann::json mat_json(const Matrix &m) {
  auto rows = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) rows.push_back(vec_json(m.row(i).transpose()));
  return rows;
}

inline Matrix json_mat(const nlohmann::json &j, Index cols) {
  Matrix m(static_cast<Index>(j.size()), cols);
  for (Index i = 0; i < m.rows(); ++i) {
    const Vector r = json_vec(j.at(static_cast<std::size_t>(i)));
    if (r.size() != cols) throw DimensionMismatch("model file: training row", cols, r.size());
    m.row(i) = r.transpose();
  }
  return m;
}

inline nlohmann::json rbf_json(const RbfKernel &k) {
  return {{"mode", k.mode == LengthscaleMode::Ard ? "ard" : "shared"},
          {"dim", k.dim},
          {"lengthscales", vec_json(k.lengthscales)},
          {"variance", k.variance}};
}

inline RbfKernel json_rbf(const nlohmann::json &j) {
  const auto mode = j.at("mode").get<std::string>();
  const Vector ls = json_vec(j.at("lengthscales"));
  const double var = j.at("variance").get<double>();
  if (mode == "ard") return RbfKernel::ard(ls, var);
  if (mode == "shared") {
    if (ls.size() != 1) throw DimensionMismatch("model file: shared lengthscale", 1, ls.size());
    return RbfKernel::shared(ls[0], var, j.at("dim").get<Index>());
  }
  throw InvalidArgument("model file: unknown lengthscale mode " + mode);
}

inline nlohmann::json kernel_json(const KernelSpec &k) {
  if (k.family == KernelFamily::Rbf) return {{"family", "rbf"}, {"rbf", rbf_json(k.rbf)}};
  return {{"family", "nargp"},
          {"interaction", rbf_json(k.interaction)},
          {"output_lengthscale", k.output_lengthscale},
          {"bias", rbf_json(k.bias)}};
}

inline KernelSpec json_kernel(const nlohmann::json &j) {
  const auto family = j.at("family").get<std::string>();
  if (family == "rbf") return KernelSpec::make_rbf(json_rbf(j.at("rbf")));
  if (family == "nargp")
    return KernelSpec::make_nargp(json_rbf(j.at("interaction")), j.at("output_lengthscale").get<double>(),
                                  json_rbf(j.at("bias")));
  throw InvalidArgument("model file: unknown kernel family " + family);
}

inline nlohmann::json gp_json(const GpModel &m) {
  return {{"kernel", kernel_json(m.hyper.kernel)},
          {"noise_variance", m.hyper.noise_variance},
          {"mean_constant", m.hyper.mean_constant},
          {"jitter", m.factor.jitter},
          {"mll", m.mll_at_fit},
          {"X", mat_json(m.X_train)},
          {"y", vec_json(m.y_train)}};
}

inline GpModel json_gp(const nlohmann::json &j) {
  Hyperparameters h;
  h.kernel = json_kernel(j.at("kernel"));
  h.noise_variance = j.at("noise_variance").get<double>();
  h.mean_constant = j.at("mean_constant").get<double>();
  const Matrix X = json_mat(j.at("X"), h.kernel.input_dim());
  const Vector y = json_vec(j.at("y"));
  return condition(h, X, y, JitterPolicy{}, j.at("jitter").get<double>());
}

} // namespace detail

// `provenance` is stored verbatim (run config, input hash).
inline nlohmann::json model_to_json(const TrainedModel &tm, const nlohmann::json &provenance = nlohmann::json::object()) {
  nlohmann::json j;
  j["format"] = "mfgp-model";
  j["version"] = 1;
  j["library_version"] = version;
  j["method"] = to_string(tm.method);
  j["features"] = tm.feature_names;
  j["target"] = tm.target_name;
  if (tm.normalization) {
    const auto &s = *tm.normalization;
    j["normalization"] = {{"x_min", detail::vec_json(s.x_min)},
                          {"x_max", detail::vec_json(s.x_max)},
                          {"y_min", s.y_min},
                          {"y_max", s.y_max}};
  } else {
    j["normalization"] = nullptr;
  }
  if (is_multifidelity(tm.method)) {
    auto levels = nlohmann::json::array();
    for (const auto &lv : tm.mf.levels) levels.push_back({{"rho", lv.rho}, {"mu", lv.mu}, {"gp", detail::gp_json(lv.gp)}});
    j["levels"] = std::move(levels);
    auto imputed = nlohmann::json::array();
    for (const auto &p : tm.imputed) imputed.push_back({{"level", p.level}, {"row", p.row}, {"value", p.value}});
    j["imputed"] = std::move(imputed);
  } else {
    j["gp"] = detail::gp_json(tm.gp);
    if (tm.method == Method::GpAug) j["indicator"] = tm.indicator;
  }
  j["provenance"] = provenance;
  return j;
}

inline TrainedModel model_from_json(const nlohmann::json &j) {
  try {
    if (j.at("format").get<std::string>() != "mfgp-model") throw InvalidArgument("not a model file");
    if (j.at("version").get<int>() != 1) throw InvalidArgument("unsupported model file version");
    TrainedModel tm;
    tm.method = parse_method(j.at("method").get<std::string>());
    tm.feature_names = j.at("features").get<std::vector<std::string>>();
    tm.target_name = j.at("target").get<std::string>();
    if (!j.at("normalization").is_null()) {
      const auto &n = j.at("normalization");
      NormalizationStats s;
      s.x_min = detail::json_vec(n.at("x_min"));
      s.x_max = detail::json_vec(n.at("x_max"));
      s.y_min = n.at("y_min").get<double>();
      s.y_max = n.at("y_max").get<double>();
      tm.normalization = std::move(s);
    }
    if (is_multifidelity(tm.method)) {
      tm.mf.kind = tm.method == Method::Largp ? MfgpKind::Largp : MfgpKind::Nargp;
      for (const auto &lv : j.at("levels"))
        tm.mf.levels.push_back(MfgpLevel{detail::json_gp(lv.at("gp")), lv.at("rho").get<double>(), lv.at("mu").get<double>()});
      if (tm.mf.levels.empty()) throw InvalidArgument("model file has no levels");
      for (const auto &p : j.at("imputed"))
        tm.imputed.push_back(ImputedPoint{p.at("level").get<int>(), p.at("row").get<Index>(), p.at("value").get<double>()});
    } else {
      tm.gp = detail::json_gp(j.at("gp"));
      if (tm.method == Method::GpAug) {
        tm.indicator = j.at("indicator").get<std::vector<double>>();
        if (tm.indicator.empty()) throw InvalidArgument("gp-aug model without indicator values");
      }
    }
    const auto d = static_cast<std::size_t>(tm.input_dim());
    if (tm.feature_names.size() != d) throw DimensionMismatch("model file: feature names", d, tm.feature_names.size());
    if (tm.normalization && static_cast<std::size_t>(tm.normalization->x_min.size()) != d)
      throw DimensionMismatch("model file: normalization", d, static_cast<std::size_t>(tm.normalization->x_min.size()));
    return tm;
  } catch (const nlohmann::json::exception &e) {
    throw InvalidArgument(std::string("malformed model file: ") + e.what());
  }
}

inline void save_model(const std::string &path, const TrainedModel &tm,
                       const nlohmann::json &provenance = nlohmann::json::object()) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << model_to_json(tm, provenance).dump(2) << '\n';
}

inline TrainedModel load_model(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception &e) {
    throw DataError(path + ": " + e.what());
  }
  return model_from_json(j);
}

// Learned parameters per level, for fit reports.
inline nlohmann::json model_summary(const TrainedModel &tm) {
  auto level = [](const GpModel &gp) {
    nlohmann::json l = {{"mll", gp.mll_at_fit},
                        {"kernel", detail::kernel_json(gp.hyper.kernel)},
                        {"noise_variance", gp.hyper.noise_variance},
                        {"mean_constant", gp.hyper.mean_constant},
                        {"jitter", gp.factor.jitter},
                        {"n_train", gp.X_train.rows()}};
    if (gp.info.best_restart >= 0) {
      l["best_restart"] = gp.info.best_restart;
      l["failed_restarts"] = gp.info.failed_restarts;
    }
    return l;
  };
  nlohmann::json s;
  s["method"] = to_string(tm.method);
  auto levels = nlohmann::json::array();
  if (is_multifidelity(tm.method)) {
    for (std::size_t t = 0; t < tm.mf.levels.size(); ++t) {
      auto l = level(tm.mf.levels[t].gp);
      if (tm.method == Method::Largp && t > 0) {
        l["rho"] = tm.mf.levels[t].rho;
        l["mu"] = tm.mf.levels[t].mu;
      }
      levels.push_back(std::move(l));
    }
    s["imputed_rows"] = tm.imputed.size();
  } else {
    levels.push_back(level(tm.gp));
  }
  s["levels"] = std::move(levels);
  return s;
}

} // namespace mfgp
