// mfgp command-line tool.
//
// Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
// Every output carries the resolved run configuration and a hash of its
// inputs; worker count and output paths are left out so they never change
// the bytes written.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mfgp/bench.hpp"
#include "mfgp/data.hpp"
#include "mfgp/featsel.hpp"
#include "mfgp/model.hpp"
#include "mfgp/synthetic.hpp"
#include "mfgp/version.hpp"

using nlohmann::json;
using namespace mfgp;

namespace {

constexpr int exit_config = 2;
constexpr int exit_numerical = 3;

const char *const seed_scheme =
    "split r: derive_seed(seed, r); fit in a split: restarts drawn from the split seed; "
    "nesting imputation: derive_seed(split seed, 1); make-synthetic: high subset derive_seed(seed, 0), "
    "noise derive_seed(seed, 1) and derive_seed(seed, 2)";

struct DataArgs {
  std::string path;
  std::string target;
  std::string fidelity_col;
  std::vector<std::string> features;
  std::vector<std::string> fidelity_order;
};

void add_data_options(CLI::App *cmd, DataArgs &a, bool required) {
  auto *data = cmd->add_option("--data", a.path, "input CSV");
  if (required) data->required();
  auto *target = cmd->add_option("--target", a.target, "target column");
  if (required) target->required();
  cmd->add_option("--fidelity-col", a.fidelity_col, "fidelity column; omit for a single level");
  cmd->add_option("--features", a.features, "feature columns (default: all other columns)")->delimiter(',');
  cmd->add_option("--fidelity-order", a.fidelity_order, "fidelity labels, lowest first")->delimiter(',');
}

json data_json(const DataArgs &a) {
  return {{"data", a.path},
          {"target", a.target},
          {"fidelity_col", a.fidelity_col},
          {"features", a.features},
          {"fidelity_order", a.fidelity_order}};
}

Dataset load_dataset(const DataArgs &a) {
  if (a.target.empty()) throw InvalidArgument("--target is required with --data");
  return load_csv(a.path, CsvSchema{a.target, a.fidelity_col, a.features, a.fidelity_order});
}

struct FitArgs {
  int restarts = 10;
  std::string lengthscales = "ard";
  std::string imputation = "mean";
  std::vector<double> aug_indicator;
};

void add_fit_options(CLI::App *cmd, FitArgs &f) {
  cmd->add_option("--restarts", f.restarts, "optimizer starts per GP, the canonical one included")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--lengthscales", f.lengthscales, "ard or shared")->check(CLI::IsMember({"ard", "shared"}));
  cmd->add_option("--imputation", f.imputation, "nesting imputation: mean or sample")
      ->check(CLI::IsMember({"mean", "sample"}));
  cmd->add_option("--aug-indicator", f.aug_indicator, "gp-aug indicator value per level")->delimiter(',');
}

json fit_json(const FitArgs &f) {
  return {{"restarts", f.restarts},
          {"lengthscales", f.lengthscales},
          {"imputation", f.imputation},
          {"aug_indicator", f.aug_indicator}};
}

FitConfig fit_config(const FitArgs &f) {
  FitConfig c = default_bench_fit();
  c.restarts = f.restarts;
  c.lengthscale_mode = f.lengthscales == "shared" ? LengthscaleMode::Shared : LengthscaleMode::Ard;
  return c;
}

ImputationMode imputation_mode(const FitArgs &f) {
  return f.imputation == "sample" ? ImputationMode::PosteriorSample : ImputationMode::PosteriorMean;
}

DiscretizationMethod discretization(const std::string &s) {
  return s == "mdl" ? DiscretizationMethod::FayyadIraniMdl : DiscretizationMethod::EqualFrequency;
}

std::string read_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// "-" or empty writes to standard output.
void write_output(const std::string &path, const std::string &text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  out << text;
  if (!out) throw DataError("write failed: " + path);
}

std::string provenance_line(const json &config, const std::string &input_hash) {
  return "# mfgp " + std::string(version) + " config=" + config.dump() + " input_hash=" + input_hash + "\n";
}

json provenance(const json &config, const std::string &input_hash) {
  return {{"config", config}, {"input_hash", input_hash}, {"toolkit_version", version}};
}

std::string csv_number(double v) { return std::isfinite(v) ? format_double(v) : "nan"; }

// ---------------------------------------------------------------------------

struct FitCommand {
  DataArgs data;
  FitArgs fit;
  std::string method;
  bool no_normalize = false;
  std::uint64_t seed = 1;
  std::string out = "model.json";
  std::string summary;

  void run() const {
    const Method m = parse_method(method);
    const Dataset ds = load_dataset(data);
    json config = data_json(data);
    config["command"] = "fit";
    config["method"] = to_string(m);
    config["fit"] = fit_json(fit);
    config["normalize"] = !no_normalize;
    config["seed"] = seed;
    config["seed_scheme"] = seed_scheme;
    const std::string hash = hex64(dataset_hash(ds));

    Dataset train = ds;
    std::optional<NormalizationStats> stats;
    if (!no_normalize) {
      stats = fit_normalize(ds);
      train = apply_normalize(ds, *stats);
    }
    BenchConfig bc;
    bc.aug_indicator = fit.aug_indicator;
    const auto indicator = detail::indicator_values(bc, ds.n_levels());
    TrainedModel tm = train_model(m, to_levels(train), fit_config(fit), seed, imputation_mode(fit),
                                  m == Method::GpAug ? indicator : std::vector<double>{});
    tm.feature_names = ds.feature_names;
    tm.target_name = ds.target_name;
    tm.normalization = stats;
    save_model(out, tm, provenance(config, hash));

    json s = provenance(config, hash);
    s["model"] = model_summary(tm);
    s["levels_in_data"] = ds.fidelity_labels;
    write_output(summary, s.dump(2) + "\n");
  }
};

struct PredictCommand {
  std::string model;
  std::string input;
  std::string out;
  bool observation_noise = false;

  void run() const {
    const TrainedModel tm = load_model(model);
    const auto table = load_feature_table(input, tm.feature_names);
    const json config = {{"command", "predict"},
                         {"model", model},
                         {"input", input},
                         {"observation_noise", observation_noise}};
    const std::string hash = hex64(fnv1a(read_file(input), fnv1a(read_file(model))));
    const auto pd = predict_original(tm, table.X, observation_noise);

    std::ostringstream s;
    s << provenance_line(config, hash);
    for (const auto &n : table.names) s << detail::csv_escape(n) << ',';
    s << "mean,variance,lo2sd,hi2sd\n";
    for (Index i = 0; i < table.X.rows(); ++i) {
      for (Index j = 0; j < table.X.cols(); ++j) s << format_double(table.X(i, j)) << ',';
      const double sd = std::sqrt(pd.variance[i]);
      s << format_double(pd.mean[i]) << ',' << format_double(pd.variance[i]) << ','
        << format_double(pd.mean[i] - 2 * sd) << ',' << format_double(pd.mean[i] + 2 * sd) << '\n';
    }
    write_output(out, s.str());
  }
};

struct SelectCommand {
  DataArgs data;
  FitArgs fit;
  std::string method = "largp";
  int bins = 5;
  std::string discretization_name = "equal-frequency";
  Index n_train = 10;
  int repeats = 30;
  Index max_features = 0;
  std::uint64_t seed = 1;
  int jobs = 1;
  std::string ranking_out = "ranking.csv";
  std::string sweep_out = "sweep.csv";

  void run() const {
    const Method m = parse_method(method);
    const Dataset ds = load_dataset(data);
    json config = data_json(data);
    config["command"] = "select-features";
    config["method"] = to_string(m);
    config["fit"] = fit_json(fit);
    config["bins"] = bins;
    config["discretization"] = discretization_name;
    config["n_train"] = n_train;
    config["repeats"] = repeats;
    config["max_features"] = max_features;
    config["seed"] = seed;
    config["seed_scheme"] = std::string(seed_scheme) + "; sweep size k: seed + k";
    const std::string hash = hex64(dataset_hash(ds));

    // Ranked once on every row, all fidelity levels pooled.
    Labels target;
    const auto table = discretize_table(ds.X, ds.y, bins, discretization(discretization_name), &target);
    const auto ranking = mrmr_rank(table, target);

    BenchConfig bc;
    bc.methods = {m};
    bc.n_train = {n_train};
    bc.repeats = repeats;
    bc.seed = seed;
    bc.gp = fit_config(fit);
    bc.imputation = imputation_mode(fit);
    bc.aug_indicator = fit.aug_indicator;
    bc.jobs = jobs;
    const Index top = max_features > 0 ? std::min(max_features, ds.cols()) : ds.cols();
    std::vector<Index> sizes;
    for (Index k = 1; k <= top; ++k) sizes.push_back(k);
    const auto sweep = sweep_subset_size(ds, ranking, m, bc, sizes);
    const Index best = best_subset_size(sweep);

    std::ostringstream r;
    r << provenance_line(config, hash) << "rank,feature,column,score\n";
    for (std::size_t k = 0; k < ranking.order.size(); ++k) {
      const Index c = ranking.order[k];
      r << k + 1 << ',' << detail::csv_escape(ds.feature_names[static_cast<std::size_t>(c)]) << ',' << c << ','
        << csv_number(ranking.scores[k]) << '\n';
    }
    write_output(ranking_out, r.str());

    std::ostringstream w;
    w << provenance_line(config, hash) << "n_features,mean_rmse,std_rmse,n_failures,features\n";
    for (const auto &p : sweep) {
      std::string names;
      for (auto c : p.features) names += (names.empty() ? "" : ";") + ds.feature_names[static_cast<std::size_t>(c)];
      w << p.n_features << ',' << csv_number(p.mean_rmse) << ',' << csv_number(p.std_rmse) << ',' << p.n_failures << ','
        << detail::csv_escape(names) << '\n';
    }
    write_output(sweep_out, w.str());

    if (best > 0) {
      std::string names;
      for (auto c : top_features(ranking, best))
        names += (names.empty() ? "" : ",") + ds.feature_names[static_cast<std::size_t>(c)];
      std::cout << "best_n_features=" << best << " features=" << names << '\n';
    } else {
      std::cout << "best_n_features=none (every sweep point failed)\n";
    }
  }
};

struct BenchmarkCommand {
  DataArgs data;
  FitArgs fit;
  std::string task;
  Index n_low = 20;
  Index test_points = 100;
  double noise_low = 0.0, noise_high = 0.0;
  std::vector<std::string> methods = {"gp-low", "gp-high", "gp-aug", "largp", "nargp"};
  std::vector<Index> nt = {6, 10, 14};
  int repeats = 30;
  std::string normalization = "all-rows";
  bool original_units = false;
  Index n_features = 0;
  bool per_split = false;
  int bins = 5;
  std::string discretization_name = "equal-frequency";
  std::uint64_t seed = 1;
  int jobs = 1;
  std::string out_dir = ".";

  void run() const {
    if (data.path.empty() == task.empty()) throw InvalidArgument("give exactly one of --data and --task");
    BenchConfig bc;
    bc.methods.clear();
    for (const auto &m : methods) bc.methods.push_back(parse_method(m));
    bc.n_train = nt;
    bc.repeats = repeats;
    bc.seed = seed;
    bc.gp = fit_config(fit);
    bc.imputation = imputation_mode(fit);
    bc.aug_indicator = fit.aug_indicator;
    bc.normalization = normalization == "train-only" ? NormalizationReference::TrainOnly : NormalizationReference::AllRows;
    bc.original_units = original_units;
    bc.feature_selection = {n_features, per_split, bins, discretization(discretization_name)};
    bc.jobs = jobs;

    json config = config_json(bc);
    config["command"] = "benchmark";
    config["seed_scheme"] = seed_scheme;
    ExperimentReport rep;
    std::string hash;
    if (task.empty()) {
      config["source"] = data_json(data);
      const Dataset ds = load_dataset(data);
      hash = hex64(dataset_hash(ds));
      rep = run_experiment(ds, bc);
    } else {
      SyntheticExperiment exp{task, n_low, test_points, {noise_low, noise_high}};
      config["source"] = {{"task", synthetic_task(task).name},
                          {"n_low", n_low},
                          {"test_points", test_points},
                          {"noise_low", noise_low},
                          {"noise_high", noise_high}};
      hash = hex64(dataset_hash(synthetic_pool(exp, seed)));
      rep = run_experiment(exp, bc);
    }

    std::filesystem::create_directories(out_dir);
    const auto dir = std::filesystem::path(out_dir);
    json report = report_json(rep);
    report["run"] = provenance(config, hash);
    write_output((dir / "report.json").string(), report.dump(2) + "\n");
    const std::string csv = provenance_line(config, hash) + summary_csv(rep);
    write_output((dir / "summary.csv").string(), csv);
    std::cout << summary_csv(rep);
  }
};

struct SyntheticCommand {
  std::string task;
  Index n_low = 12, n_high = 6;
  double noise_low = 0.0, noise_high = 0.0;
  std::uint64_t seed = 1;
  std::string out;

  void run() const {
    const Dataset ds = levels_to_dataset(make_synthetic(task, n_low, n_high, seed, {noise_low, noise_high}));
    const json config = {{"command", "make-synthetic"}, {"task", synthetic_task(task).name},
                         {"n_low", n_low},              {"n_high", n_high},
                         {"noise_low", noise_low},      {"noise_high", noise_high},
                         {"seed", seed},                {"seed_scheme", seed_scheme}};
    std::ostringstream s;
    s << provenance_line(config, hex64(dataset_hash(ds)));
    write_csv(s, ds);
    write_output(out, s.str());
  }
};

struct PcaCommand {
  std::string data;
  std::vector<std::string> features, exclude;
  Index components = 2;
  std::string out;

  void run() const {
    const auto table = load_feature_table(data, features, exclude);
    const json config = {{"command", "pca"},   {"data", data},           {"features", table.names},
                         {"exclude", exclude}, {"components", components}};
    const auto r = pca_project(table.X, components);
    json cfg = config;
    cfg["explained_ratio"] = std::vector<double>(r.explained_ratio.data(), r.explained_ratio.data() + r.explained_ratio.size());
    std::ostringstream s;
    s << provenance_line(cfg, hex64(fnv1a(read_file(data))));
    for (Index k = 0; k < components; ++k) s << (k ? "," : "") << "pc" << k + 1;
    s << '\n';
    for (Index i = 0; i < r.projected.rows(); ++i) {
      for (Index k = 0; k < components; ++k) s << (k ? "," : "") << format_double(r.projected(i, k));
      s << '\n';
    }
    write_output(out, s.str());
  }
};

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Multi-fidelity Gaussian process toolkit"};
  app.set_version_flag("--version", std::string(version));
  app.require_subcommand(1);
  int jobs = 1;
  std::uint64_t seed = 1;

  FitCommand fitc;
  auto *fit = app.add_subcommand("fit", "train one method and write a model file");
  add_data_options(fit, fitc.data, true);
  add_fit_options(fit, fitc.fit);
  fit->add_option("--method", fitc.method, "gp-low, gp-high, gp-aug, largp or nargp")->required();
  fit->add_flag("--no-normalize", fitc.no_normalize, "train on raw units instead of min-max scaled data");
  fit->add_option("--seed", seed, "random seed");
  fit->add_option("--out", fitc.out, "model file")->capture_default_str();
  fit->add_option("--summary", fitc.summary, "fit summary JSON (default: standard output)");

  PredictCommand predc;
  auto *pred = app.add_subcommand("predict", "predict mean, variance and 2-sigma band from a model file");
  pred->add_option("--model", predc.model, "model file")->required();
  pred->add_option("--input", predc.input, "CSV with the model's feature columns")->required();
  pred->add_option("--out", predc.out, "predictions CSV (default: standard output)");
  pred->add_flag("--observation-noise", predc.observation_noise, "add the noise variance to the band");

  SelectCommand selc;
  auto *sel = app.add_subcommand("select-features", "rank features and sweep the subset size");
  add_data_options(sel, selc.data, true);
  add_fit_options(sel, selc.fit);
  sel->add_option("--method", selc.method, "method evaluated by the sweep")->capture_default_str();
  sel->add_option("--bins", selc.bins, "discretization bins")->capture_default_str();
  sel->add_option("--discretization", selc.discretization_name, "equal-frequency or mdl")
      ->check(CLI::IsMember({"equal-frequency", "mdl"}));
  sel->add_option("--nt", selc.n_train, "high-fidelity training rows per split")->capture_default_str();
  sel->add_option("--repeats", selc.repeats, "random splits per subset size")->check(CLI::PositiveNumber);
  sel->add_option("--max-features", selc.max_features, "largest subset size swept (default: all)");
  sel->add_option("--seed", seed, "random seed");
  sel->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  sel->add_option("--ranking-out", selc.ranking_out, "ranking CSV")->capture_default_str();
  sel->add_option("--sweep-out", selc.sweep_out, "sweep CSV")->capture_default_str();

  BenchmarkCommand benc;
  auto *ben = app.add_subcommand("benchmark", "repeated-split RMSE comparison of methods");
  add_data_options(ben, benc.data, false);
  add_fit_options(ben, benc.fit);
  ben->add_option("--task", benc.task, "synthetic task instead of --data");
  ben->add_option("--n-low", benc.n_low, "synthetic: low-fidelity grid size")->capture_default_str();
  ben->add_option("--test-points", benc.test_points, "synthetic: test grid size")->capture_default_str();
  ben->add_option("--noise-low", benc.noise_low, "synthetic: low-fidelity noise sd");
  ben->add_option("--noise-high", benc.noise_high, "synthetic: high-fidelity noise sd");
  ben->add_option("--methods", benc.methods, "methods to compare")->delimiter(',');
  ben->add_option("--nt", benc.nt, "high-fidelity training sizes")->delimiter(',');
  ben->add_option("--repeats", benc.repeats, "random splits per cell")->check(CLI::PositiveNumber);
  ben->add_option("--normalization", benc.normalization, "all-rows or train-only")
      ->check(CLI::IsMember({"all-rows", "train-only"}));
  ben->add_flag("--original-units", benc.original_units, "also report RMSE in target units");
  ben->add_option("--n-features", benc.n_features, "keep the top MRMR features (0: all)");
  ben->add_flag("--per-split", benc.per_split, "rerun feature selection on each split's training rows");
  ben->add_option("--bins", benc.bins, "discretization bins for feature selection");
  ben->add_option("--discretization", benc.discretization_name, "equal-frequency or mdl")
      ->check(CLI::IsMember({"equal-frequency", "mdl"}));
  ben->add_option("--seed", seed, "random seed");
  ben->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  ben->add_option("--out-dir", benc.out_dir, "directory for report.json and summary.csv")->capture_default_str();

  SyntheticCommand sync;
  auto *syn = app.add_subcommand("make-synthetic", "write a two-level synthetic dataset");
  syn->add_option("--task", sync.task, "linear_link or nonlinear_link")->required();
  syn->add_option("--n-low", sync.n_low, "low-fidelity grid size")->capture_default_str();
  syn->add_option("--n-high", sync.n_high, "high-fidelity points, a subset of the grid")->capture_default_str();
  syn->add_option("--noise-low", sync.noise_low, "low-fidelity noise sd");
  syn->add_option("--noise-high", sync.noise_high, "high-fidelity noise sd");
  syn->add_option("--seed", seed, "random seed");
  syn->add_option("--out", sync.out, "CSV path (default: standard output)");

  PcaCommand pcac;
  auto *pca = app.add_subcommand("pca", "project numeric columns onto principal components");
  pca->add_option("--data", pcac.data, "input CSV")->required();
  pca->add_option("--features", pcac.features, "columns to use (default: all not excluded)")->delimiter(',');
  pca->add_option("--exclude", pcac.exclude, "columns to leave out")->delimiter(',');
  pca->add_option("--components", pcac.components, "number of components")->capture_default_str();
  pca->add_option("--out", pcac.out, "projection CSV (default: standard output)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_config;
  }

  try {
    if (*fit) {
      fitc.seed = seed;
      fitc.run();
    } else if (*pred) {
      predc.run();
    } else if (*sel) {
      selc.seed = seed;
      selc.jobs = jobs;
      selc.run();
    } else if (*ben) {
      benc.seed = seed;
      benc.jobs = jobs;
      benc.run();
    } else if (*syn) {
      sync.seed = seed;
      sync.run();
    } else if (*pca) {
      pcac.run();
    }
  } catch (const NumericalError &e) {
    std::cerr << "mfgp: numerical failure: " << e.what() << '\n';
    return exit_numerical;
  } catch (const InvalidArgument &e) {
    std::cerr << "mfgp: " << e.what() << '\n';
    return exit_config;
  } catch (const DataError &e) {
    std::cerr << "mfgp: " << e.what() << '\n';
    return exit_config;
  } catch (const std::filesystem::filesystem_error &e) {
    std::cerr << "mfgp: " << e.what() << '\n';
    return exit_config;
  } catch (const std::exception &e) {
    std::cerr << "mfgp: " << e.what() << '\n';
    return exit_numerical;
  }
  return 0;
}
