// Acceptance suite. Runs every shipping criterion at its stated tolerance
// and prints one PASS/FAIL line per criterion. Exit code 0 iff all pass.
//
// GLFM_ACCEPT_THREADS overrides the worker count; a single numeric argument
// restricts the run to that criterion (all by default).

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "glfm/glfm.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace glfm;

namespace {

struct Outcome {
  int criterion;
  bool pass;
  std::string detail;
};

std::vector<Outcome> outcomes;
int g_threads = 2;

void record(int criterion, bool pass, const std::string& detail) {
  outcomes.push_back({criterion, pass, detail});
  std::cout << (pass ? "PASS" : "FAIL") << " criterion " << criterion << ": " << detail
            << std::endl;
}

double elapsed(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ModelSpec variant_flags(bool tvl, bool tvc, bool lin, bool z) {
  ModelSpec spec;
  spec.time_varying_loadings = tvl;
  spec.time_varying_coefficients = tvc;
  spec.linear_intercept = lin;
  spec.use_time_covariates = z;
  return spec;
}

// criteria 1-4 share one selection study at the Table-1 corner
void criteria_1_to_4() {
  SimConfig cfg;
  cfg.J = 100;
  cfg.N = 500;
  cfg.T = 4;
  cfg.K_star = 3;
  cfg.n_reps = 20;
  cfg.seed = 20260811;
  StudyOptions opts;
  opts.candidates = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  opts.threads = g_threads;
  opts.verbose = true;
  const auto t0 = std::chrono::steady_clock::now();
  const StudyReport report = run_study(cfg, opts);
  std::cerr << "[selection study: " << elapsed(t0) << " s]\n";

  int correct = 0;
  for (const auto& row : report.rows) correct += (!row.failed && row.k_hat == 3) ? 1 : 0;
  {
    std::ostringstream ss;
    ss << "factor-number selection: K_hat = 3 in " << correct << "/20 replications (need >= 19)";
    record(1, correct >= 19, ss.str());
  }
  {
    std::ostringstream ss;
    ss << "estimation error: mean Loss " << report.mean_loss << " in [0.45, 0.65], mean Bloss "
       << report.mean_bloss << " in [0.39, 0.59]";
    record(2,
           report.mean_loss >= 0.45 && report.mean_loss <= 0.65 && report.mean_bloss >= 0.39 &&
               report.mean_bloss <= 0.59,
           ss.str());
  }
  {
    std::ostringstream ss;
    ss << "coverage: pooled 95% CI coverage " << report.ecp << " in [0.90, 0.98]";
    record(3, report.ecp >= 0.90 && report.ecp <= 0.98, ss.str());
  }
  {
    std::ostringstream ss;
    ss << "FDR control: max mean FDR over families " << report.mmfdr << " <= 0.05";
    record(4, report.mmfdr <= 0.05, ss.str());
  }
}

void criterion_5() {
  SimConfig cfg;
  cfg.J = 100;
  cfg.N = 1000;
  cfg.T = 4;
  cfg.K_star = 3;
  cfg.n_reps = 20;
  cfg.seed = 511;
  StudyOptions opts;
  opts.baseline_lr = true;
  opts.threads = g_threads;
  opts.verbose = true;
  const auto t0 = std::chrono::steady_clock::now();
  const StudyReport report = run_study(cfg, opts);
  std::cerr << "[baseline study: " << elapsed(t0) << " s]\n";
  const double gap = report.mean_bloss_baseline - report.mean_bloss;
  std::ostringstream ss;
  ss << "baseline gap: K=0 Bloss " << report.mean_bloss_baseline << " minus K=3 Bloss "
     << report.mean_bloss << " = " << gap << " (need >= 0.05)";
  record(5, gap >= 0.05, ss.str());
}

void criterion_6() {
  const auto t0 = std::chrono::steady_clock::now();
  struct VariantDef {
    const char* name;
    bool tvl, tvc, lin, z;
  };
  const VariantDef variants[] = {{"base", false, false, false, false},
                                 {"timecov", false, false, false, true},
                                 {"tvload", true, true, false, false},
                                 {"lineargamma", false, false, true, false},
                                 {"tvload+lineargamma", true, true, true, false}};
  Rng rng(600);
  const double h = 1e-5;
  double worst = 0.0;
  std::string worst_at = "none";
  for (const auto& v : variants) {
    Dataset data;
    data.n_persons = 9;
    data.n_items = 5;
    data.n_times = 3;
    data.responses = Eigen::MatrixXd::Zero(9, 15);
    data.observed = Eigen::MatrixXd::Ones(9, 3);
    data.observed(1, 2) = 0.0;
    data.observed(6, 0) = 0.0;
    data.covariates = Eigen::MatrixXd::Zero(9, 2);
    if (v.z) data.time_covariates.assign(3, Eigen::MatrixXd::Zero(9, 2));
    data.families.assign(5, Family::Bernoulli);
    ModelSpec spec = variant_flags(v.tvl, v.tvc, v.lin, v.z);
    spec.n_factors = 2;
    for (int point = 0; point < 10; ++point) {
      for (int i = 0; i < 9; ++i)
        for (int l = 0; l < 2; ++l) data.covariates(i, l) = rng.normal();
      for (auto& z : data.time_covariates)
        for (int i = 0; i < 9; ++i)
          for (int l = 0; l < 2; ++l) z(i, l) = rng.normal();
      ParameterSet params = zero_params(spec, data);
      for (int i = 0; i < 9; ++i)
        for (int k = 0; k < 2; ++k) params.theta(i, k) = 0.4 * rng.normal();
      for (int j = 0; j < 5; ++j)
        for (int c = 0; c < params.item_params.cols(); ++c)
          params.item_params(j, c) = 0.4 * rng.normal();
      for (int t = 0; t < 3; ++t) {
        const Eigen::MatrixXd eta = predict_natural_params(spec, data, params, t);
        for (int j = 0; j < 5; ++j)
          for (int i = 0; i < 9; ++i)
            data.y_ref(i, j, t) = rng.bernoulli(sigmoid(eta(i, j))) ? 1.0 : 0.0;
      }
      const int j = point % 5, i = point % 9;
      const Eigen::VectorXd g = item_block_gradient(spec, data, params, j);
      for (int c = 0; c < g.size(); ++c) {
        ParameterSet up = params, dn = params;
        up.item_params(j, c) += h;
        dn.item_params(j, c) -= h;
        const double fd =
            (joint_loglik(spec, data, up) - joint_loglik(spec, data, dn)) / (2.0 * h);
        const double rel = std::abs(g(c) - fd) / (1.0 + std::abs(g(c)));
        if (rel > worst) {
          worst = rel;
          worst_at = std::string(v.name) + " item";
        }
      }
      const Eigen::VectorXd gp = person_block_gradient(spec, data, params, i);
      for (int k = 0; k < gp.size(); ++k) {
        ParameterSet up = params, dn = params;
        up.theta(i, k) += h;
        dn.theta(i, k) -= h;
        const double fd =
            (joint_loglik(spec, data, up) - joint_loglik(spec, data, dn)) / (2.0 * h);
        const double rel = std::abs(gp(k) - fd) / (1.0 + std::abs(gp(k)));
        if (rel > worst) {
          worst = rel;
          worst_at = std::string(v.name) + " person";
        }
      }
    }
  }
  const double secs = elapsed(t0);
  std::ostringstream ss;
  ss << "gradient correctness: worst relative error " << worst << " (" << worst_at << ") < 1e-5, "
     << secs << " s < 60 s";
  record(6, worst < 1e-5 && secs < 60.0, ss.str());
}

void criterion_7() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_gap = 0.0;
  for (int instance = 0; instance < 5; ++instance) {
    SimConfig cfg;
    cfg.J = 4;
    cfg.N = 30;
    cfg.T = 2;
    cfg.K_star = 1;
    cfg.seed = 70 + static_cast<std::uint64_t>(instance);
    const SimTruth truth = generate(cfg, 0);
    const ParameterSet start = random_init(truth.spec, truth.dataset, 1000 + instance);
    FitOptions opts;
    opts.rel_tol = 1e-14;
    opts.max_sweeps = 20000;
    const FitResult fr = fit(truth.spec, truth.dataset, start, opts);

    oracle::BaseProblem prob;
    prob.y = truth.dataset.responses;
    prob.r = truth.dataset.observed;
    prob.x = truth.dataset.covariates;
    prob.N = cfg.N;
    prob.J = cfg.J;
    prob.T = cfg.T;
    prob.p = 5;
    prob.K = 1;
    prob.c1 = truth.spec.c1;
    prob.c2 = truth.spec.c2;
    const ParamLayout lay = ParamLayout::make(truth.spec, truth.dataset);
    oracle::BaseParams par;
    par.gamma = start.item_params.middleCols(lay.gamma_off, lay.gamma_len);
    par.beta = start.item_params.middleCols(lay.beta_off, lay.beta_len);
    par.a = start.item_params.middleCols(lay.a_off, lay.a_len);
    par.theta = start.theta;
    const double reference = oracle::base_pga(prob, par);
    worst_gap = std::max(worst_gap, std::abs(fr.loglik - reference));
  }
  const double secs = elapsed(t0);
  std::ostringstream ss;
  ss << "oracle equivalence: worst |loglik gap| " << worst_gap << " <= 1e-3 over 5 instances, "
     << secs << " s < 300 s";
  record(7, worst_gap <= 1e-3 && secs < 300.0, ss.str());
}

void criterion_8() {
  struct VariantDef {
    const char* name;
    bool tvl, tvc, lin, z;
  };
  const VariantDef variants[] = {{"base", false, false, false, false},
                                 {"timecov", false, false, false, true},
                                 {"tvload", true, true, false, false},
                                 {"lineargamma", false, false, true, false},
                                 {"tvload+lineargamma", true, true, true, false}};
  Rng rng(800);
  double worst_eta = 0.0, worst_criteria = 0.0;
  for (const auto& v : variants) {
    for (int trial = 0; trial < 20; ++trial) {
      const int N = 14, J = 7, T = 3, p = 2, K = 2;
      Dataset data;
      data.n_persons = N;
      data.n_items = J;
      data.n_times = T;
      data.responses = Eigen::MatrixXd::Zero(N, static_cast<long>(J) * T);
      data.observed = Eigen::MatrixXd::Ones(N, T);
      data.covariates = Eigen::MatrixXd::Zero(N, p);
      if (v.z) data.time_covariates.assign(T, Eigen::MatrixXd::Zero(N, 2));
      data.families.assign(J, Family::Bernoulli);
      for (int i = 0; i < N; ++i)
        for (int l = 0; l < p; ++l) data.covariates(i, l) = rng.normal();
      for (auto& z : data.time_covariates)
        for (int i = 0; i < N; ++i)
          for (int l = 0; l < z.cols(); ++l) z(i, l) = rng.normal();
      ModelSpec spec = variant_flags(v.tvl, v.tvc, v.lin, v.z);
      spec.n_factors = K;
      ParameterSet params = zero_params(spec, data);
      for (int i = 0; i < N; ++i)
        for (int k = 0; k < K; ++k) params.theta(i, k) = rng.normal();
      for (int j = 0; j < J; ++j)
        for (int c = 0; c < params.item_params.cols(); ++c)
          params.item_params(j, c) = rng.normal();
      const ParameterSet before = params;
      const NormalizeResult out = normalize_full(spec, data, params);

      for (int t = 0; t < T; ++t) {
        const Eigen::MatrixXd a = predict_natural_params(spec, data, before, t);
        const Eigen::MatrixXd b = predict_natural_params(spec, data, out.params, t);
        for (int i = 0; i < N; ++i)
          for (int j = 0; j < J; ++j)
            worst_eta = std::max(worst_eta, std::abs(a(i, j) - b(i, j)) /
                                                (1.0 + std::abs(a(i, j))));
      }
      const ParamLayout lay = ParamLayout::make(spec, data);
      const Eigen::MatrixXd A1 = out.params.item_params.middleCols(lay.a_block(0), K);
      worst_criteria = std::max(
          worst_criteria,
          (A1.transpose() * A1 / double(J) - Eigen::MatrixXd::Identity(K, K))
              .cwiseAbs()
              .maxCoeff());
      const Eigen::MatrixXd tc = out.params.theta.transpose() * out.params.theta / double(N);
      for (int a = 0; a < K; ++a)
        for (int b = 0; b < K; ++b)
          if (a != b) worst_criteria = std::max(worst_criteria, std::abs(tc(a, b)));
      worst_criteria =
          std::max(worst_criteria, (out.params.theta.transpose() * data.covariates)
                                           .cwiseAbs()
                                           .maxCoeff() /
                                       double(N));
      if (!v.lin)
        worst_criteria = std::max(
            worst_criteria,
            (out.params.theta.transpose() * Eigen::VectorXd::Ones(N)).cwiseAbs().maxCoeff() /
                double(N));
    }
  }
  std::ostringstream ss;
  ss << "normalization invariance: worst relative eta drift " << worst_eta
     << ", worst criterion residual " << worst_criteria << " (both <= 1e-8)";
  record(8, worst_eta <= 1e-8 && worst_criteria <= 1e-8, ss.str());
}

void criterion_9() {
  struct Cell {
    const char* variant;
    int J, N;
    std::uint64_t seed;
  };
  const Cell cells[] = {{"tvload", 100, 500, 901},
                        {"tvload", 200, 1000, 902},
                        {"lineargamma", 100, 500, 911},
                        {"lineargamma", 200, 1000, 912}};
  double bloss[4] = {0, 0, 0, 0};
  bool all_correct = true;
  const auto t0 = std::chrono::steady_clock::now();
  for (int c = 0; c < 4; ++c) {
    SimConfig cfg;
    cfg.J = cells[c].J;
    cfg.N = cells[c].N;
    cfg.T = 4;
    cfg.K_star = 3;
    cfg.n_reps = 5;
    cfg.seed = cells[c].seed;
    cfg.variant = std::string(cells[c].variant) == "tvload"
                      ? variant_flags(true, true, false, false)
                      : variant_flags(false, false, true, false);
    StudyOptions opts;
    opts.candidates = {1, 2, 3, 4, 5, 6};
    opts.threads = g_threads;
    opts.verbose = true;
    const StudyReport report = run_study(cfg, opts);
    bloss[c] = report.mean_bloss;
    for (const auto& row : report.rows)
      all_correct = all_correct && !row.failed && row.k_hat == 3;
    std::cerr << "[variant cell " << cells[c].variant << " J=" << cells[c].J << ": "
              << elapsed(t0) << " s cumulative]\n";
  }
  std::ostringstream ss;
  ss << "extension variants: all K_hat = 3 " << (all_correct ? "yes" : "no")
     << "; tvload Bloss " << bloss[0] << " -> " << bloss[1] << ", lineargamma Bloss "
     << bloss[2] << " -> " << bloss[3] << " (both must decrease)";
  record(9, all_correct && bloss[1] < bloss[0] && bloss[3] < bloss[2], ss.str());
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion_10() {
  const char* cli = std::getenv("GLFM_CLI");
  if (cli == nullptr) {
    record(10, false, "deterministic reproduction: GLFM_CLI not set");
    return;
  }
  const fs::path base = fs::temp_directory_path() / "glfm_acceptance_determinism";
  fs::remove_all(base);
  fs::create_directories(base);

  // small but non-trivial input data, written once
  std::ostringstream resp, cov;
  resp << "person,item,time,value\n";
  cov << "person,x1,x2\n";
  Rng rng(1005);
  for (int i = 1; i <= 12; ++i) {
    cov << i << "," << (rng.bernoulli(0.5) ? 1 : 0) << "," << rng.uniform(-1.0, 1.0) << "\n";
    for (int t = 1; t <= 3; ++t) {
      if (i % 4 == 0 && t == 2) continue;  // a missing wave
      for (int j = 1; j <= 3; ++j)
        resp << i << "," << j << "," << t << "," << (rng.bernoulli(0.5) ? 1 : 0) << "\n";
    }
  }
  const fs::path resp_path = base / "responses.csv";
  const fs::path cov_path = base / "covariates.csv";
  io::write_text_file(resp_path.string(), resp.str());
  io::write_text_file(cov_path.string(), cov.str());

  const auto run = [&](const std::string& args) {
    const std::string cmd = std::string(cli) + " " + args + " >/dev/null 2>&1";
    return WEXITSTATUS(std::system(cmd.c_str()));
  };

  bool ok = true;
  std::string detail;
  const auto compare_dirs = [&](const fs::path& a, const fs::path& b) {
    for (const auto& entry : fs::directory_iterator(a)) {
      const fs::path other = b / entry.path().filename();
      if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) {
        ok = false;
        detail += " mismatch:" + entry.path().filename().string();
      }
    }
  };

  for (int round = 0; round < 2; ++round) {
    const fs::path out = base / ("fit" + std::to_string(round));
    if (run("fit --responses " + resp_path.string() + " --covariates " + cov_path.string() +
            " --k 1 --seed 42 --threads 1 --out-dir " + out.string()) != 0)
      ok = false;
  }
  compare_dirs(base / "fit0", base / "fit1");

  for (int round = 0; round < 2; ++round) {
    const fs::path out = base / ("sel" + std::to_string(round));
    if (run("select-k --responses " + resp_path.string() + " --covariates " +
            cov_path.string() + " --k-set 0,1 --seed 42 --threads 1 --out-dir " +
            out.string()) != 0)
      ok = false;
  }
  compare_dirs(base / "sel0", base / "sel1");

  for (int round = 0; round < 2; ++round) {
    const fs::path out = base / ("sim" + std::to_string(round));
    if (run("simulate --j 10 --n 40 --t 3 --k-star 1 --reps 2 --k-set 1,2 --seed 42 "
            "--threads 1 --out-dir " +
            out.string()) != 0)
      ok = false;
  }
  compare_dirs(base / "sim0", base / "sim1");

  for (int round = 0; round < 2; ++round) {
    const fs::path out = base / ("eval" + std::to_string(round));
    if (run("evaluate --responses " + resp_path.string() + " --covariates " +
            cov_path.string() + " --params " + (base / "fit0" / "params.json").string() +
            " --n-perm 5 --seed 42 --threads 1 --out-dir " + out.string()) != 0)
      ok = false;
  }
  compare_dirs(base / "eval0", base / "eval1");

  for (int round = 0; round < 2; ++round) {
    const fs::path out = base / ("pred" + std::to_string(round));
    if (run("predict --responses " + resp_path.string() + " --covariates " + cov_path.string() +
            " --params " + (base / "fit0" / "params.json").string() +
            " --top-k 2 --strategy hist-prop --tie-seed 42 --threads 1 --out-dir " +
            out.string()) != 0)
      ok = false;
  }
  compare_dirs(base / "pred0", base / "pred1");

  record(10, ok,
         "deterministic reproduction: fit/select-k/simulate/evaluate/predict reruns byte-identical" +
             detail);
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* env = std::getenv("GLFM_ACCEPT_THREADS"))
    g_threads = std::max(1, std::atoi(env));
  else
    g_threads = std::max(1u, std::thread::hardware_concurrency());
  const int only = argc > 1 ? std::atoi(argv[1]) : 0;

  const auto want = [&](int c) { return only == 0 || only == c; };
  const auto t0 = std::chrono::steady_clock::now();
  if (want(1) || want(2) || want(3) || want(4)) criteria_1_to_4();
  if (want(5)) criterion_5();
  if (want(6)) criterion_6();
  if (want(7)) criterion_7();
  if (want(8)) criterion_8();
  if (want(9)) criterion_9();
  if (want(10)) criterion_10();
  std::cerr << "[acceptance total: " << elapsed(t0) << " s]\n";

  bool all = true;
  for (const auto& o : outcomes) all = all && o.pass;
  std::cout << (all ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED") << " (" << outcomes.size()
            << " criteria)" << std::endl;
  return all ? 0 : 1;
}
