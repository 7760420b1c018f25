// Command-line front end: fit, select-k, simulate, evaluate, predict.
// Exit codes: 0 success, 2 input/validation error, 3 numeric error.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "glfm/glfm.hpp"

namespace fs = std::filesystem;
using glfm::ConfigError;
using glfm::NumericError;
using json = glfm::io::json;

namespace {

const std::set<std::string> kConfigKeys = {
    "k",          "variant",      "family",     "families",       "c1",
    "c2",         "tol",          "max_sweeps", "ridge",          "line_search_shrink",
    "max_halvings", "init",       "epsilon",    "seed",           "threads",
    "k_set",      "n_perm",       "top_k",      "strategy",       "tie_seed",
    "hypotheses", "p",            "p_z",        "j",              "n",
    "t",          "k_star",       "n_reps",     "baseline_lr",    "latent_coverage",
    "update_scale"};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  const json cfg = glfm::io::read_json_file(path);
  if (!cfg.is_object()) throw ConfigError(path + ": config must be a json object");
  for (const auto& [key, value] : cfg.items()) {
    (void)value;
    if (!kConfigKeys.count(key)) throw ConfigError(path + ": unknown config key '" + key + "'");
  }
  return cfg;
}

template <class T>
T config_or(const json& cfg, const std::string& key, T fallback) {
  if (cfg.contains(key)) return cfg.at(key).get<T>();
  return fallback;
}

glfm::ModelSpec variant_spec(const std::string& name) {
  glfm::ModelSpec spec;
  if (name == "base") {
  } else if (name == "timecov") {
    spec.use_time_covariates = true;
  } else if (name == "tvload") {
    spec.time_varying_loadings = true;
    spec.time_varying_coefficients = true;
  } else if (name == "lineargamma") {
    spec.linear_intercept = true;
  } else if (name == "tvload+lineargamma") {
    spec.time_varying_loadings = true;
    spec.time_varying_coefficients = true;
    spec.linear_intercept = true;
  } else {
    throw ConfigError("unknown variant: " + name +
                      " (expected base, timecov, tvload, lineargamma, tvload+lineargamma)");
  }
  return spec;
}

std::vector<int> parse_k_set(const std::string& text) {
  std::vector<int> out;
  if (text.empty()) return out;
  const auto parse_int = [](const std::string& s) {
    try {
      std::size_t pos = 0;
      const int v = std::stoi(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("cannot parse candidate set entry '" + s + "'");
    }
  };
  std::stringstream ss(text);
  std::string piece;
  while (std::getline(ss, piece, ',')) {
    const auto dots = piece.find("..");
    if (dots != std::string::npos) {
      const int lo = parse_int(piece.substr(0, dots));
      const int hi = parse_int(piece.substr(dots + 2));
      for (int k = lo; k <= hi; ++k) out.push_back(k);
    } else if (!piece.empty()) {
      out.push_back(parse_int(piece));
    }
  }
  return out;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Options shared by the data-driven commands.
struct CommandIO {
  std::string responses, covariates, time_covariates, config_path, out_dir = ".";
  std::uint64_t seed = 0;
  int threads = 1;

  void attach(CLI::App* cmd, bool responses_required = true) {
    auto* r = cmd->add_option("--responses", responses, "long-format responses csv");
    if (responses_required) r->required();
    cmd->add_option("--covariates", covariates, "person covariates csv");
    cmd->add_option("--time-covariates", time_covariates, "time-dependent covariates csv");
    cmd->add_option("--config", config_path, "json config file");
    cmd->add_option("--out-dir", out_dir, "output directory");
    cmd->add_option("--seed", seed, "random seed");
    cmd->add_option("--threads", threads, "worker threads (1 = bitwise deterministic)");
  }
};

glfm::Dataset load_dataset(const CommandIO& io, const json& cfg,
                           const std::string& family_flag) {
  glfm::Dataset data = glfm::io::read_responses_csv(io.responses);
  const int expected_p = config_or<int>(cfg, "p", -1);
  if (!io.covariates.empty()) {
    data.covariates = glfm::io::read_covariates_csv(io.covariates, data.n_persons);
  } else {
    data.covariates.resize(data.n_persons, 0);
    if (expected_p > 0)
      throw ConfigError("config declares p=" + std::to_string(expected_p) +
                        " covariates but no covariates file was given");
  }
  if (expected_p >= 0 && data.n_covariates() != expected_p)
    throw ConfigError("config declares p=" + std::to_string(expected_p) + " but file has " +
                      std::to_string(data.n_covariates()));
  const int expected_pz = config_or<int>(cfg, "p_z", -1);
  if (!io.time_covariates.empty())
    data.time_covariates =
        glfm::io::read_time_covariates_csv(io.time_covariates, data.n_persons, data.n_times);
  else if (expected_pz > 0)
    throw ConfigError("config declares p_z time covariates but no file was given");
  if (expected_pz >= 0 && data.n_time_covariates() != expected_pz)
    throw ConfigError("time covariate count does not match config");

  std::string family = family_flag.empty() ? config_or<std::string>(cfg, "family", "bernoulli")
                                           : family_flag;
  data.families.assign(static_cast<std::size_t>(data.n_items),
                       glfm::io::family_from_string(family));
  if (cfg.contains("families")) {
    const auto& fams = cfg.at("families");
    if (static_cast<int>(fams.size()) != data.n_items)
      throw ConfigError("config families list must have one entry per item");
    for (int j = 0; j < data.n_items; ++j)
      data.families[static_cast<std::size_t>(j)] =
          glfm::io::family_from_string(fams[static_cast<std::size_t>(j)].get<std::string>());
  }
  data.validate();
  return data;
}

glfm::FitOptions fit_options(const json& cfg, std::uint64_t seed) {
  glfm::FitOptions opts;
  opts.max_sweeps = config_or<int>(cfg, "max_sweeps", opts.max_sweeps);
  opts.rel_tol = config_or<double>(cfg, "tol", opts.rel_tol);
  opts.ridge = config_or<double>(cfg, "ridge", opts.ridge);
  opts.line_search_shrink = config_or<double>(cfg, "line_search_shrink", opts.line_search_shrink);
  opts.max_halvings = config_or<int>(cfg, "max_halvings", opts.max_halvings);
  opts.update_scale = config_or<bool>(cfg, "update_scale", opts.update_scale);
  opts.seed = seed;
  opts.validate();
  return opts;
}

json resolved_config_json(const glfm::ModelSpec& spec, const glfm::FitOptions& opts,
                          std::uint64_t seed) {
  json j;
  j["model"] = glfm::io::model_to_json(spec);
  j["fit"] = {{"max_sweeps", opts.max_sweeps},
              {"tol", opts.rel_tol},
              {"ridge", opts.ridge},
              {"line_search_shrink", opts.line_search_shrink},
              {"max_halvings", opts.max_halvings}};
  j["seed"] = seed;
  return j;
}

void write_json(const std::string& path, const json& j) {
  glfm::io::write_text_file(path, j.dump(2) + "\n");
}

glfm::ParameterSet make_start(const std::string& init_kind, const glfm::ModelSpec& spec,
                              const glfm::Dataset& data, std::uint64_t seed, double epsilon) {
  glfm::InitOptions init_opts;
  init_opts.epsilon = epsilon;
  if (init_kind == "svd") {
    if (!glfm::svd_init_supported(data)) {
      std::cerr << "svd init unsupported for non-binary items; using random init\n";
      return glfm::random_init(spec, data, seed);
    }
    return glfm::svd_init(spec, data, init_opts);
  }
  if (init_kind == "random") return glfm::random_init(spec, data, seed);
  if (init_kind == "zero") return glfm::zero_params(spec, data);
  throw ConfigError("unknown init: " + init_kind + " (expected svd, random, zero)");
}

// ---------------------------------------------------------------------------

int cmd_fit(const CommandIO& io, const json& cfg, const std::string& variant, int k,
            double c1, double c2, const std::string& family, const std::string& init_kind) {
  glfm::Dataset data = load_dataset(io, cfg, family);
  glfm::ModelSpec spec = variant_spec(variant);
  spec.n_factors = k;
  spec.c1 = c1;
  spec.c2 = c2;
  if (spec.use_time_covariates && data.n_time_covariates() == 0)
    throw ConfigError("variant timecov requires a time covariates file");
  const glfm::FitOptions opts = fit_options(cfg, io.seed);

  const glfm::ParameterSet start =
      make_start(init_kind, spec, data, io.seed, config_or<double>(cfg, "epsilon", 0.01));
  const glfm::FitResult result = glfm::fit(spec, data, start, opts);
  const glfm::NormalizeResult normalized = glfm::normalize_full(spec, data, result.params);

  fs::create_directories(io.out_dir);
  write_json(io.out_dir + "/params.json", glfm::io::params_to_json(spec, data, normalized.params));
  json report;
  report["command"] = "fit";
  report["loglik"] = result.loglik;
  report["converged"] = result.converged;
  report["sweeps_used"] = result.sweeps_used;
  report["loglik_trace"] = result.loglik_trace;
  report["eigengap_warning"] = normalized.eigengap_warning;
  report["seed"] = io.seed;
  report["config_hash"] = fnv1a(resolved_config_json(spec, opts, io.seed).dump());
  write_json(io.out_dir + "/report.json", report);
  return 0;
}

int cmd_select_k(const CommandIO& io, const json& cfg, const std::string& variant,
                 const std::string& k_set, double c1, double c2, const std::string& family,
                 const std::string& init_kind) {
  glfm::Dataset data = load_dataset(io, cfg, family);
  glfm::ModelSpec spec = variant_spec(variant);
  spec.c1 = c1;
  spec.c2 = c2;
  std::vector<int> candidates = parse_k_set(k_set);
  if (candidates.empty() && cfg.contains("k_set"))
    candidates = cfg.at("k_set").get<std::vector<int>>();
  if (candidates.empty()) throw ConfigError("select-k requires --k-set");

  glfm::SelectionOptions opts;
  opts.fit = fit_options(cfg, io.seed);
  opts.init.epsilon = config_or<double>(cfg, "epsilon", 0.01);
  opts.use_svd_init = init_kind != "random";
  opts.threads = io.threads;
  const glfm::SelectionResult sel = glfm::select_k(spec, data, candidates, opts);

  fs::create_directories(io.out_dir);
  json report;
  report["command"] = "select-k";
  report["k_hat"] = sel.k_hat;
  report["penalty_lambda"] = glfm::penalty_lambda(spec, data);
  json ic = json::object();
  json loglik = json::object();
  for (const auto& [K, value] : sel.ic_values) {
    ic[std::to_string(K)] = value;
    loglik[std::to_string(K)] = sel.fits.at(K).loglik;
  }
  report["ic"] = std::move(ic);
  report["loglik"] = std::move(loglik);
  report["warnings"] = sel.warnings;
  report["seed"] = io.seed;
  write_json(io.out_dir + "/report.json", report);

  glfm::ModelSpec best = spec;
  best.n_factors = sel.k_hat;
  const glfm::NormalizeResult normalized =
      glfm::normalize_full(best, data, sel.fits.at(sel.k_hat).params);
  write_json(io.out_dir + "/params.json", glfm::io::params_to_json(best, data, normalized.params));
  return 0;
}

int cmd_simulate(const CommandIO& io, const json& cfg, const std::string& variant,
                 const std::string& k_set, int j_items, int n_persons, int t_times, int k_star,
                 int n_reps, double c1, double c2, bool baseline_lr, bool latent_coverage) {
  glfm::SimConfig config;
  config.J = j_items > 0 ? j_items : config_or<int>(cfg, "j", 100);
  config.N = n_persons > 0 ? n_persons : config_or<int>(cfg, "n", 500);
  config.T = t_times > 0 ? t_times : config_or<int>(cfg, "t", 4);
  config.K_star = k_star >= 0 ? k_star : config_or<int>(cfg, "k_star", 3);
  config.n_reps = n_reps > 0 ? n_reps : config_or<int>(cfg, "n_reps", 1);
  config.seed = io.seed;
  config.variant = variant_spec(variant.empty() ? config_or<std::string>(cfg, "variant", "base")
                                                : variant);
  config.variant.c1 = c1;
  config.variant.c2 = c2;

  glfm::StudyOptions opts;
  opts.fit = fit_options(cfg, io.seed);
  opts.init.epsilon = config_or<double>(cfg, "epsilon", 0.01);
  opts.candidates = parse_k_set(k_set);
  if (opts.candidates.empty() && cfg.contains("k_set"))
    opts.candidates = cfg.at("k_set").get<std::vector<int>>();
  opts.baseline_lr = baseline_lr || config_or<bool>(cfg, "baseline_lr", false);
  opts.latent_coverage = latent_coverage || config_or<bool>(cfg, "latent_coverage", false);
  opts.threads = io.threads;
  opts.verbose = true;

  const glfm::StudyReport report = glfm::run_study(config, opts);

  fs::create_directories(io.out_dir);
  std::ostringstream csv;
  csv << "rep,failed,k_hat,loglik,sweeps,converged,loss,bloss,aloss,tloss,bloss_lr,"
         "fdr_x1x2,fdr_x3x4,fdr_x5,fnr_x1x2,fnr_x3x4,fnr_x5,cover_hits,cover_total\n";
  for (const auto& row : report.rows) {
    const auto& m = row.metrics;
    csv << row.rep << "," << (row.failed ? 1 : 0) << "," << row.k_hat << ","
        << glfm::io::format_double(row.loglik) << "," << row.sweeps << ","
        << (row.converged ? 1 : 0) << "," << glfm::io::format_double(m.loss) << ","
        << glfm::io::format_double(m.bloss) << "," << glfm::io::format_double(m.aloss) << ","
        << glfm::io::format_double(m.tloss) << ","
        << glfm::io::format_double(m.bloss_baseline) << ",";
    for (int f = 0; f < 3; ++f) csv << glfm::io::format_double(m.fdr[static_cast<std::size_t>(f)]) << ",";
    for (int f = 0; f < 3; ++f) csv << glfm::io::format_double(m.fnr[static_cast<std::size_t>(f)]) << ",";
    csv << m.cover_hits << "," << m.cover_total << "\n";
  }
  glfm::io::write_text_file(io.out_dir + "/reps.csv", csv.str());

  json summary;
  summary["command"] = "simulate";
  summary["config"] = {{"j", config.J},       {"n", config.N},
                       {"t", config.T},       {"k_star", config.K_star},
                       {"n_reps", config.n_reps}, {"seed", config.seed},
                       {"variant", variant.empty() ? "base" : variant}};
  summary["n_failed"] = report.n_failed;
  summary["p_correct_k"] = report.p_correct_k;
  summary["mean_loss"] = report.mean_loss;
  summary["mean_bloss"] = report.mean_bloss;
  summary["mean_aloss"] = report.mean_aloss;
  summary["mean_tloss"] = report.mean_tloss;
  summary["ecp"] = report.ecp;
  summary["mmfdr"] = report.mmfdr;
  summary["mmfnr"] = report.mmfnr;
  summary["mmse"] = report.mmse;
  summary["mamse"] = report.mamse;
  summary["mtmse"] = report.mtmse;
  summary["aecp"] = report.aecp;
  summary["tecp"] = report.tecp;
  summary["mean_bloss_lr"] = report.mean_bloss_baseline;
  write_json(io.out_dir + "/summary.json", summary);
  return 0;
}

int cmd_evaluate(const CommandIO& io, const json& cfg, const std::string& params_path,
                 int n_perm) {
  if (params_path.empty()) throw ConfigError("evaluate requires --params");
  const glfm::io::LoadedParams loaded =
      glfm::io::params_from_json(glfm::io::read_json_file(params_path));
  glfm::Dataset data = load_dataset(io, cfg, "");
  data.families = loaded.families;
  data.validate();
  const glfm::ModelSpec& spec = loaded.spec;
  const glfm::ParamLayout lay = glfm::ParamLayout::make(spec, data);
  const glfm::ParameterSet params = glfm::normalize_beta_only(spec, data, loaded.params);

  std::vector<glfm::Hypothesis> hypotheses;
  for (int l = 0; l < lay.p; ++l) {
    glfm::Hypothesis hyp;
    hyp.name = "x" + std::to_string(l + 1);
    for (int b = 0; b < (lay.tvc ? lay.T : 1); ++b) hyp.beta_indices.push_back(b * lay.p + l);
    hypotheses.push_back(std::move(hyp));
  }
  if (cfg.contains("hypotheses")) {
    for (const auto& h : cfg.at("hypotheses")) {
      glfm::Hypothesis hyp;
      hyp.name = h.at("name").get<std::string>();
      for (const auto& idx : h.at("indices")) {
        const int one_based = idx.get<int>();
        if (one_based < 1 || one_based > lay.beta_len)
          throw ConfigError("hypothesis index out of range: " + std::to_string(one_based));
        hyp.beta_indices.push_back(one_based - 1);
      }
      hypotheses.push_back(std::move(hyp));
    }
  }
  const glfm::InferenceReport report =
      glfm::make_inference_report(spec, data, params, hypotheses);

  fs::create_directories(io.out_dir);
  std::ostringstream coef;
  coef << "item,coef,estimate,se\n";
  for (int j = 0; j < data.n_items; ++j)
    for (int c = 0; c < lay.beta_len; ++c)
      coef << j + 1 << "," << c + 1 << ","
           << glfm::io::format_double(params.item_params(j, lay.beta_off + c)) << ","
           << glfm::io::format_double(report.per_item[static_cast<std::size_t>(j)].beta_se(c))
           << "\n";
  glfm::io::write_text_file(io.out_dir + "/coefficients.csv", coef.str());

  std::ostringstream wald;
  wald << "item,hypothesis,stat,p_value,adj_p_value\n";
  for (int j = 0; j < data.n_items; ++j) {
    const auto& item = report.per_item[static_cast<std::size_t>(j)];
    for (const auto& hyp : hypotheses)
      wald << j + 1 << "," << hyp.name << ","
           << glfm::io::format_double(item.wald_stats.at(hyp.name)) << ","
           << glfm::io::format_double(item.p_values.at(hyp.name)) << ","
           << glfm::io::format_double(item.adj_p_values.at(hyp.name)) << "\n";
  }
  glfm::io::write_text_file(io.out_dir + "/wald_by.csv", wald.str());

  if (n_perm > 0) {
    glfm::SelectionOptions perm_opts;
    perm_opts.fit = fit_options(cfg, io.seed);
    perm_opts.init.epsilon = config_or<double>(cfg, "epsilon", 0.01);
    const glfm::PermutationResult perm =
        glfm::permutation_test_B(spec, data, perm_opts, n_perm, io.seed, io.threads);
    json pj;
    pj["stat"] = perm.stat;
    pj["p_value"] = perm.p_value;
    pj["n_perm"] = n_perm;
    pj["dropped"] = perm.dropped;
    json nulls = json::array();
    for (long l = 0; l < perm.null_stats.size(); ++l) nulls.push_back(perm.null_stats(l));
    pj["null_stats"] = std::move(nulls);
    write_json(io.out_dir + "/permutation.json", pj);
  }
  return 0;
}

// next-period responses: long format, rows at time T+1 only
void read_next_responses(const std::string& path, int n_persons, int n_items, int next_time,
                         Eigen::MatrixXd& actual, Eigen::VectorXd& observed) {
  glfm::Dataset next = glfm::io::read_responses_csv(path);
  if (next.n_items != n_items)
    throw ConfigError(path + ": item count differs from the training data");
  if (next.n_persons > n_persons)
    throw ConfigError(path + ": person id exceeds the training data");
  if (next.n_times != next_time)
    throw ConfigError(path + ": rows must be at time " + std::to_string(next_time));
  actual = Eigen::MatrixXd::Zero(n_persons, n_items);
  observed = Eigen::VectorXd::Zero(n_persons);
  const int t = next.n_times - 1;
  for (int i = 0; i < next.n_persons; ++i) {
    if (!next.obs(i, t)) continue;
    observed(i) = 1.0;
    for (int j = 0; j < n_items; ++j) actual(i, j) = next.y(i, j, t);
  }
}

int cmd_predict(const CommandIO& io, const json& cfg, const std::string& params_path,
                const std::string& next_path, int top_k, const std::string& strategy_name,
                std::uint64_t tie_seed) {
  if (params_path.empty()) throw ConfigError("predict requires --params");
  const glfm::io::LoadedParams loaded =
      glfm::io::params_from_json(glfm::io::read_json_file(params_path));
  glfm::Dataset data = load_dataset(io, cfg, "");
  data.families = loaded.families;
  data.validate();
  const glfm::ModelSpec& spec = loaded.spec;

  const Eigen::MatrixXd probs = glfm::predict_proba_next(spec, data, loaded.params);
  fs::create_directories(io.out_dir);
  std::vector<std::string> prob_cols;
  for (int j = 0; j < data.n_items; ++j) prob_cols.push_back("item" + std::to_string(j + 1));
  glfm::io::write_matrix_csv(io.out_dir + "/probs.csv", probs, prob_cols);

  const bool all_bernoulli = glfm::svd_init_supported(data);
  if (all_bernoulli) {
    std::ostringstream dev;
    dev << "time,deviance\n";
    glfm::detail::DesignCache cache;
    cache.build(spec, data, loaded.params.theta);
    Eigen::MatrixXd eta;
    for (int t = 0; t < data.n_times; ++t) {
      cache.eta_all(loaded.params.item_params, t, eta);
      const Eigen::MatrixXd fitted = eta.unaryExpr([](double e) { return glfm::sigmoid(e); });
      const auto [per_item, total] = glfm::residual_deviance(spec, data, fitted, t);
      dev << t + 1 << "," << glfm::io::format_double(total) << "\n";
    }
    if (!next_path.empty()) {
      Eigen::MatrixXd actual;
      Eigen::VectorXd next_observed;
      read_next_responses(next_path, data.n_persons, data.n_items, data.n_times + 1, actual,
                          next_observed);
      double total = 0.0;
      long clipped = 0;
      for (int i = 0; i < data.n_persons; ++i) {
        if (next_observed(i) == 0.0) continue;
        for (int j = 0; j < data.n_items; ++j) {
          double p = probs(i, j);
          if (!(p > 0.0 && p < 1.0)) {
            p = std::min(std::max(p, 1e-12), 1.0 - 1e-12);
            ++clipped;
          }
          total += -2.0 * (actual(i, j) * std::log(p) + (1.0 - actual(i, j)) * std::log(1.0 - p));
        }
      }
      if (clipped > 0) std::cerr << "predict: clipped " << clipped << " probabilities\n";
      dev << data.n_times + 1 << "," << glfm::io::format_double(total) << "\n";
    }
    glfm::io::write_text_file(io.out_dir + "/deviance.csv", dev.str());
  } else {
    std::cerr << "residual deviance skipped: defined for all-Bernoulli items only\n";
  }

  const Eigen::MatrixXi counts = glfm::history_counts(data);
  glfm::RecommendationConfig rec_cfg;
  rec_cfg.top_k = top_k;
  rec_cfg.tie_seed = tie_seed;
  const auto parse_strategy = [](const std::string& name) {
    if (name == "hist") return glfm::Strategy::Hist;
    if (name == "prop") return glfm::Strategy::Prop;
    if (name == "hist-hist") return glfm::Strategy::HistHist;
    if (name == "hist-prop") return glfm::Strategy::HistProp;
    throw ConfigError("unknown strategy: " + name);
  };
  rec_cfg.strategy = parse_strategy(strategy_name);
  const Eigen::MatrixXi recs = glfm::recommend(rec_cfg, counts, probs);
  std::ostringstream rec_csv;
  rec_csv << "person";
  for (int k = 0; k < top_k; ++k) rec_csv << ",rank" << k + 1;
  rec_csv << "\n";
  for (int i = 0; i < data.n_persons; ++i) {
    rec_csv << i + 1;
    for (int k = 0; k < top_k; ++k) rec_csv << "," << recs(i, k);
    rec_csv << "\n";
  }
  glfm::io::write_text_file(io.out_dir + "/recommendations.csv", rec_csv.str());

  if (!next_path.empty()) {
    Eigen::MatrixXd actual;
    Eigen::VectorXd next_observed;
    read_next_responses(next_path, data.n_persons, data.n_items, data.n_times + 1, actual,
                        next_observed);
    std::ostringstream sens;
    sens << "strategy,top_k,sensitivity\n";
    for (const auto& name : {"hist", "prop", "hist-hist", "hist-prop"}) {
      glfm::RecommendationConfig c = rec_cfg;
      c.strategy = parse_strategy(name);
      const Eigen::MatrixXi r = glfm::recommend(c, counts, probs);
      sens << name << "," << top_k << ","
           << glfm::io::format_double(glfm::sensitivity(r, actual)) << "\n";
    }
    glfm::io::write_text_file(io.out_dir + "/sensitivity.csv", sens.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint-likelihood latent factor models for multivariate longitudinal data"};
  app.require_subcommand(1);

  CommandIO fit_io, sel_io, sim_io, eval_io, pred_io;
  std::string fit_variant = "base", sel_variant = "base", sim_variant;
  std::string fit_family, sel_family;
  std::string fit_init = "svd", sel_init = "svd";
  std::string sel_kset, sim_kset;
  std::string eval_params, pred_params, pred_next;
  int fit_k = 0;
  double fit_c1 = 5.0, fit_c2 = 5.0, sel_c1 = 5.0, sel_c2 = 5.0, sim_c1 = 5.0, sim_c2 = 5.0;
  double fit_tol = -1.0;
  int fit_max_sweeps = -1;
  int sim_j = -1, sim_n = -1, sim_t = -1, sim_kstar = -1, sim_reps = -1;
  bool sim_lr = false, sim_latent = false;
  int eval_nperm = 0;
  int pred_topk = 10;
  std::string pred_strategy = "hist-prop";
  std::uint64_t pred_tieseed = 0;

  auto* fit_cmd = app.add_subcommand("fit", "estimate the model on csv data");
  fit_io.attach(fit_cmd);
  fit_cmd->add_option("--k", fit_k, "number of latent factors");
  fit_cmd->add_option("--variant", fit_variant,
                      "base|timecov|tvload|lineargamma|tvload+lineargamma");
  fit_cmd->add_option("--family", fit_family, "bernoulli|poisson|gaussian for all items");
  fit_cmd->add_option("--c1", fit_c1, "factor norm radius multiplier");
  fit_cmd->add_option("--c2", fit_c2, "item norm radius multiplier");
  fit_cmd->add_option("--tol", fit_tol, "relative convergence tolerance");
  fit_cmd->add_option("--max-sweeps", fit_max_sweeps, "sweep limit");
  fit_cmd->add_option("--init", fit_init, "svd|random|zero");

  auto* sel_cmd = app.add_subcommand("select-k", "choose the number of factors");
  sel_io.attach(sel_cmd);
  sel_cmd->add_option("--k-set", sel_kset, "candidate set, e.g. 1..10 or 1,2,3");
  sel_cmd->add_option("--variant", sel_variant, "model variant");
  sel_cmd->add_option("--family", sel_family, "family for all items");
  sel_cmd->add_option("--c1", sel_c1, "factor norm radius multiplier");
  sel_cmd->add_option("--c2", sel_c2, "item norm radius multiplier");
  sel_cmd->add_option("--init", sel_init, "svd|random");

  auto* sim_cmd = app.add_subcommand("simulate", "synthetic study with known truth");
  sim_io.attach(sim_cmd, false);
  sim_cmd->add_option("--j", sim_j, "number of items");
  sim_cmd->add_option("--n", sim_n, "number of persons");
  sim_cmd->add_option("--t", sim_t, "number of time points");
  sim_cmd->add_option("--k-star", sim_kstar, "true number of factors");
  sim_cmd->add_option("--reps", sim_reps, "number of replications");
  sim_cmd->add_option("--k-set", sim_kset, "candidate set for selection");
  sim_cmd->add_option("--variant", sim_variant, "model variant");
  sim_cmd->add_option("--c1", sim_c1, "factor norm radius multiplier");
  sim_cmd->add_option("--c2", sim_c2, "item norm radius multiplier");
  sim_cmd->add_flag("--baseline-lr", sim_lr, "also fit the K=0 logistic baseline");
  sim_cmd->add_flag("--latent-coverage", sim_latent, "coverage for loadings and factors");

  auto* eval_cmd = app.add_subcommand("evaluate", "Wald tests with BY adjustment");
  eval_io.attach(eval_cmd);
  eval_cmd->add_option("--params", eval_params, "params.json from fit")->required();
  eval_cmd->add_option("--n-perm", eval_nperm, "permutation replicates for the B=0 test");

  auto* pred_cmd = app.add_subcommand("predict", "next-period probabilities and rankings");
  pred_io.attach(pred_cmd);
  pred_cmd->add_option("--params", pred_params, "params.json from fit")->required();
  pred_cmd->add_option("--next-responses", pred_next, "observed responses at time T+1");
  pred_cmd->add_option("--top-k", pred_topk, "recommendations per person");
  pred_cmd->add_option("--strategy", pred_strategy, "hist|prop|hist-hist|hist-prop");
  pred_cmd->add_option("--tie-seed", pred_tieseed, "seed for random tie breaking");

  try {
    app.parse(argc, argv);
    if (fit_cmd->parsed()) {
      json cfg = load_config(fit_io.config_path);
      if (fit_tol > 0) cfg["tol"] = fit_tol;
      if (fit_max_sweeps > 0) cfg["max_sweeps"] = fit_max_sweeps;
      if (!fit_cmd->get_option("--k")->empty()) cfg["k"] = fit_k;
      return cmd_fit(fit_io, cfg, fit_variant, config_or<int>(cfg, "k", fit_k), fit_c1, fit_c2,
                     fit_family, fit_init);
    }
    if (sel_cmd->parsed())
      return cmd_select_k(sel_io, load_config(sel_io.config_path), sel_variant, sel_kset,
                          sel_c1, sel_c2, sel_family, sel_init);
    if (sim_cmd->parsed())
      return cmd_simulate(sim_io, load_config(sim_io.config_path), sim_variant, sim_kset, sim_j,
                          sim_n, sim_t, sim_kstar, sim_reps, sim_c1, sim_c2, sim_lr, sim_latent);
    if (eval_cmd->parsed())
      return cmd_evaluate(eval_io, load_config(eval_io.config_path), eval_params, eval_nperm);
    if (pred_cmd->parsed())
      return cmd_predict(pred_io, load_config(pred_io.config_path), pred_params, pred_next,
                         pred_topk, pred_strategy, pred_tieseed);
    return 2;
  } catch (const CLI::ParseError& err) {
    if (err.get_exit_code() == 0) return app.exit(err);  // --help
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const ConfigError& err) {
    std::cerr << "input error: " << err.what() << "\n";
    return 2;
  } catch (const NumericError& err) {
    std::cerr << "numeric error: " << err.what() << "\n";
    return 3;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 3;
  }
}
