// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//
//   lfi_acceptance [--only 1,5,12] [--configs DIR] [--work DIR]

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lfi/cli/commands.hpp"
#include "lfi/core/grad_check.hpp"
#include "lfi/flow/conditional_flow.hpp"

namespace fs = std::filesystem;
using namespace lfi;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor normal(Shape s, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(s));
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

// The production flow architecture with randomly initialised output layers,
// so that every layer is far from the identity.
flow::FlowConfig random_flow(std::size_t dim, std::size_t features, std::uint64_t seed) {
  flow::FlowConfig c;
  c.dim = dim;
  c.features = features;
  c.subnet = {.hidden = {128, 128}, .dropout = 0.0, .zero_output = false};
  c.permutation_seed = seed;
  c.init_seed = seed + 1;
  return c;
}

std::vector<double> row_vec(const Tensor& t, std::size_t r) {
  const auto v = t.row_values(r);
  return {v.begin(), v.end()};
}

// ------------------------------------------------------------------ 1

Outcome invertibility() {
  ParameterStore store;
  const flow::ConditionalFlow f(store, random_flow(32, 64, 11));
  Rng rng(12);
  const std::size_t n = 1000;
  const Tensor theta = normal({n, 32}, rng, 1.5), u = normal({n, 64}, rng);
  const auto t0 = Clock::now();
  Tape tape(Mode::eval, 0, false);
  const auto z = f.forward(store, tape.constant(theta), tape.constant(u));
  const auto back = f.inverse(store, z.value, tape.constant(u));
  const double secs = seconds_since(t0);
  const double err = max_abs_diff(back.value.value(), theta);
  return {err < 1e-6 && secs < 10.0 && f.layer_count() == 10,
          fmt("max|theta - h^-1(h(theta))| = %.2e over %zu points, %zu layers, %.2f s", err, n, f.layer_count(), secs)};
}

// ------------------------------------------------------------------ 2

// log|det| of the numeric Jacobian, central differences with step h.
double numeric_logdet(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& map, const Eigen::VectorXd& x,
                      double h) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd jac(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::VectorXd up = x, down = x;
    up[j] += h;
    down[j] -= h;
    jac.col(j) = (map(up) - map(down)) / (2.0 * h);
  }
  return std::log(std::abs(jac.determinant()));
}

Outcome logdet_exactness() {
  double worst = 0.0;
  std::size_t points = 0;
  for (std::size_t dim : {2u, 5u, 8u}) {
    ParameterStore store;
    const flow::ConditionalFlow f(store, random_flow(dim, 16, 20 + dim));
    Rng rng(30 + dim);
    const std::size_t n = dim == 8 ? 100 : 30;
    for (std::size_t p = 0; p < n; ++p) {
      const Tensor u = normal({1, 16}, rng);
      Eigen::VectorXd x(static_cast<Eigen::Index>(dim));
      for (auto& v : x) v = 1.5 * rng.normal();
      auto map = [&](const Eigen::VectorXd& v) {
        Tape t(Mode::eval, 0, false);
        const Tensor y = f.forward(store, t.constant(Tensor({1, dim}, std::vector<double>(v.begin(), v.end()))),
                                   t.constant(u)).value.value();
        return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(dim)));
      };
      Tape t(Mode::eval, 0, false);
      const double ld = f.forward(store, t.constant(Tensor({1, dim}, std::vector<double>(x.begin(), x.end()))),
                                  t.constant(u)).logdet.value()[0];
      worst = std::max(worst, std::abs(ld - numeric_logdet(map, x, 1e-6)));
      ++points;
    }
  }
  return {worst < 1e-4, fmt("max |logdet - log|det J_fd|| = %.2e over %zu points, N in {2,5,8}", worst, points)};
}

// ------------------------------------------------------------------ 3

Outcome gradient_fidelity() {
  train::ModelConfig mc;
  mc.flow.dim = 4;
  mc.flow.coupling_layers = 2;
  mc.flow.spline_layers = 2;
  mc.flow.subnet = {.hidden = {8, 8}, .dropout = 0.0, .zero_output = false};
  mc.summary.sensors = 3;
  mc.summary.stages = {{4, 3, 1}, {4, 2, 2}};
  mc.summary.features = 6;
  train::PosteriorModel model(mc);
  Rng rng(40);
  const Tensor theta = normal({8, 4}, rng), obs = normal({8, 7, 3}, rng);
  model.fit_standardization({theta, obs});
  const LossBuilder loss = [&](Tape& tape, const ParameterStore&) { return train::joint_loss(tape, model, theta, obs); };

  // Independent per-tensor comparison, Richardson-extrapolated central differences.
  GradientMap analytic;
  {
    Tape tape(Mode::eval, 0);
    analytic = tape.backward(loss(tape, model.params()), model.params());
  }
  auto value = [&] {
    Tape tape(Mode::eval, 0, false);
    return loss(tape, model.params()).value()[0];
  };
  double worst = 0.0;
  std::string worst_name;
  ParameterStore& store = model.params();
  for (ParamId id = 0; id < store.size(); ++id) {
    Tensor& p = store.value(id);
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      auto central = [&](double h) {
        p[i] = orig + h;
        const double up = value();
        p[i] = orig - h;
        const double down = value();
        p[i] = orig;
        return (up - down) / (2.0 * h);
      };
      const double fd = (4.0 * central(1e-5) - central(2e-5)) / 3.0;
      diff = std::max(diff, std::abs(analytic[id][i] - fd));
      scale = std::max(scale, std::abs(fd));
    }
    const double rel = diff / (scale + 1e-12);
    if (rel > worst) {
      worst = rel;
      worst_name = store.name(id);
    }
  }
  return {worst < 1e-4, fmt("max relative gradient error %.2e over %zu parameter tensors (%zu scalars), worst %s",
                            worst, store.size(), store.scalar_count(), worst_name.c_str())};
}

// ------------------------------------------------------------------ 4

Outcome spline_structure() {
  ParameterStore store;
  Rng init(50);
  const flow::SplineConfig sc{.bins = 16, .bound = 3.0};
  const flow::SplineLayer layer(store, "s", 6, 4, {.hidden = {32, 32}, .dropout = 0.0, .zero_output = false}, sc, init);
  Rng rng(51);
  const Tensor cond = normal({1, 4}, rng);
  auto apply = [&](const Tensor& x, bool inverse) {
    Tape t(Mode::eval, 0, false);
    Tensor u({x.rows(), 4});
    for (std::size_t r = 0; r < x.rows(); ++r) std::copy(cond.data(), cond.data() + 4, u.data() + r * 4);
    return inverse ? layer.inverse(store, t.constant(x), t.constant(u)).value.value()
                   : layer.forward(store, t.constant(x), t.constant(u)).value.value();
  };

  // Sorted sweep of each transformed coordinate with the conditioning half fixed.
  const std::size_t n = 4001;
  Tensor sweep({n, 6});
  for (std::size_t i = 0; i < n; ++i) {
    const double v = -5.0 + 10.0 * static_cast<double>(i) / (n - 1);
    sweep(i, 0) = 0.3, sweep(i, 1) = -0.8, sweep(i, 2) = 1.1;
    for (std::size_t j = 3; j < 6; ++j) sweep(i, j) = v;
  }
  const Tensor y = apply(sweep, false);
  bool monotone = true, identity_outside = true;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 3; j < 6; ++j) {
      if (i > 0 && !(y(i, j) > y(i - 1, j))) monotone = false;
      if (std::abs(sweep(i, j)) >= 3.0 && y(i, j) != sweep(i, j)) identity_outside = false;
    }
    for (std::size_t j = 0; j < 3; ++j) identity_outside = identity_outside && y(i, j) == sweep(i, j);
  }

  // Knot continuity of value and first derivative from both adjacent bins.
  double knot_gap = 0.0;
  {
    Tape t(Mode::eval, 0, false);
    const Tensor x = Tensor({1, 6}, std::vector<double>{0.3, -0.8, 1.1, 0.0, 0.0, 0.0});
    const flow::SplineKnots k = layer.knots(store, t.constant(x), t.constant(cond));
    for (std::size_t r = 0; r < k.x.rows(); ++r) {
      auto bin = [&](std::size_t b) {
        return flow::RqBin{k.x.value()(r, b), k.x.value()(r, b + 1), k.y.value()(r, b), k.y.value()(r, b + 1),
                           k.d.value()(r, b), k.d.value()(r, b + 1)};
      };
      for (std::size_t j = 1; j + 1 < k.x.cols(); ++j) {
        const double at = k.x.value()(r, j);
        const flow::RqPoint a = flow::rq_eval(at, bin(j - 1)), b = flow::rq_eval(at, bin(j));
        knot_gap = std::max({knot_gap, std::abs(a.y - b.y), std::abs(a.dy[0] - b.dy[0])});
      }
    }
  }

  const double round_trip = max_abs_diff(apply(y, true), sweep);
  const bool pass = monotone && identity_outside && knot_gap < 1e-8 && round_trip < 1e-8;
  return {pass, fmt("monotone %s, identity outside [-B,B] %s, knot gap %.2e, inverse round trip %.2e",
                    monotone ? "yes" : "NO", identity_outside ? "exact" : "NOT EXACT", knot_gap, round_trip)};
}

// ------------------------------------------------------------------ 5

Outcome conjugate_recovery(const fs::path& configs, const fs::path& work) {
  cli::CommonOptions o{.config = (configs / "linear_gaussian.cfg").string(), .out = (work / "linear").string()};
  const cli::RunConfig rc = cli::load_config(o);
  std::ostringstream quiet;
  cli::cmd_generate(o, quiet);
  const auto t0 = Clock::now();
  cli::cmd_train(o, {.data = (work / "linear" / "dataset.lfi").string()}, quiet);
  const double train_secs = seconds_since(t0);

  const auto ds = simulate::read_dataset((work / "linear" / "dataset.lfi").string());
  const auto model = train::PosteriorModel::load((work / "linear" / "model.nfck").string());
  const simulate::LinearGaussianModel lg = rc.linear_model();
  const train::Pairs test = ds.test();
  const double prior_sd = std::sqrt(rc.values().get_double("linear_prior_variance"));
  double mean_err = 0.0, cov_err = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    Tensor obs({1, test.sensors()});
    Eigen::VectorXd u(static_cast<Eigen::Index>(test.sensors()));
    for (std::size_t j = 0; j < test.sensors(); ++j) u[static_cast<Eigen::Index>(j)] = obs[j] = test.obs[i * test.sensors() + j];
    const auto exact = lg.posterior(u);
    Rng rng(derive_seed(60, {i}));
    const Tensor s = model.sample(obs, 2000, rng);
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
        s.data(), static_cast<Eigen::Index>(s.rows()), static_cast<Eigen::Index>(s.cols()));
    const Eigen::VectorXd mean = m.colwise().mean();
    const Eigen::MatrixXd centred = m.rowwise() - mean.transpose();
    const Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(s.rows() - 1);
    mean_err += (mean - exact.mean).cwiseAbs().maxCoeff() / prior_sd;
    cov_err += (cov - exact.cov).norm() / exact.cov.norm();
  }
  mean_err /= static_cast<double>(test.size());
  cov_err /= static_cast<double>(test.size());
  const bool pass = mean_err <= 0.05 && cov_err <= 0.15 && train_secs <= 600.0 && ds.size() == 2000;
  return {pass, fmt("over %zu held-out sets: mean error %.4f prior sd (max component), covariance Frobenius "
                    "error %.3f, %zu pairs, training %.0f s",
                    test.size(), mean_err, cov_err, ds.size(), train_secs)};
}

// ------------------------------------------------------------- 6, 7, 8, 9

struct GroundwaterRun {
  bool ok = false;
  std::string error;
  double train_secs = 0.0;
  std::size_t epochs = 0;
  simulate::SimulationDataset ds;
  fs::path model_path;
};

GroundwaterRun train_groundwater(const fs::path& configs, const fs::path& work) {
  GroundwaterRun run;
  cli::CommonOptions o{.config = (configs / "groundwater.cfg").string(), .out = (work / "groundwater").string()};
  try {
    std::ostringstream quiet;
    cli::cmd_generate(o, quiet);
    const fs::path data = work / "groundwater" / "dataset.lfi";
    std::fprintf(stderr, "  groundwater: %s", quiet.str().c_str());
    const auto t0 = Clock::now();
    std::ostringstream log;
    cli::cmd_train(o, {.data = data.string()}, log);
    run.train_secs = seconds_since(t0);
    std::fprintf(stderr, "  groundwater: trained in %.0f s; %s", run.train_secs,
                 log.str().substr(log.str().rfind("epochs=")).c_str());
    run.ds = simulate::read_dataset(data.string());
    run.model_path = work / "groundwater" / "model.nfck";
    run.ok = true;
  } catch (const std::exception& e) {
    run.error = e.what();
  }
  return run;
}

Tensor test_obs(const train::Pairs& test, std::size_t i, std::size_t steps) {
  Tensor obs({steps, test.sensors()});
  std::copy(test.obs.data() + i * test.steps() * test.sensors(),
            test.obs.data() + i * test.steps() * test.sensors() + obs.size(), obs.data());
  return obs;
}

std::vector<double> test_theta(const train::Pairs& test, std::size_t i) { return row_vec(test.theta, i); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Held-out posterior statistics at a given record length.
struct HeldOut {
  std::vector<double> coverage, rel_l2;
};

HeldOut held_out(const train::PosteriorModel& model, const train::Pairs& test, std::size_t steps) {
  HeldOut h;
  for (std::size_t i = 0; i < test.size(); ++i) {
    Rng rng(derive_seed(70, {i}));
    const diagnose::PosteriorSamples s(model.sample(test_obs(test, i, steps), 2000, rng));
    const auto ref = test_theta(test, i);
    h.coverage.push_back(diagnose::coverage(s, ref).fraction);
    // The prior-mean estimate theta = 0 has relative l2 error exactly 1.
    h.rel_l2.push_back(diagnose::rel_l2_error(s.mean, ref));
  }
  return h;
}

Outcome calibration(const GroundwaterRun& run, const HeldOut& h) {
  if (!run.ok) return {false, "training failed: " + run.error};
  double mean = 0.0;
  for (double c : h.coverage) mean += c;
  mean /= static_cast<double>(h.coverage.size());
  const auto& d = run.ds.data;
  const bool setup = d.dim() == 32 && d.sensors() == 4 && d.steps() == 25 && run.ds.size() == 2000;
  return {setup && mean >= 0.88 && mean <= 0.99 && run.train_secs <= 1800.0,
          fmt("95%% coverage %.3f over %zu held-out simulations (N=%zu, N_u=%zu, k=%zu, M=%zu, %zu epochs, %.0f s)",
              mean, h.coverage.size(), d.dim(), d.sensors(), d.steps(), run.ds.size(), run.epochs, run.train_secs)};
}

Outcome informativeness(const GroundwaterRun& run, const HeldOut& h) {
  if (!run.ok) return {false, "training failed: " + run.error};
  const double med = median(h.rel_l2);
  return {med <= 0.7, fmt("median relative l2 error of the posterior mean %.3f vs prior-mean baseline 1.000 "
                          "(%.0f%% lower)", med, 100.0 * (1.0 - med))};
}

Outcome amortization(const GroundwaterRun& run) {
  if (!run.ok) return {false, "training failed: " + run.error};
  const train::PosteriorModel model = train::PosteriorModel::load(run.model_path.string());
  const train::Pairs test = run.ds.test();
  double worst = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    Rng rng(derive_seed(80, {i}));
    const auto t0 = Clock::now();
    const Tensor s = model.sample(test_obs(test, i, test.steps()), 2000, rng);
    worst = std::max(worst, seconds_since(t0));
    if (s.rows() != 2000) return {false, "wrong sample count"};
  }
  return {worst < 1.0, fmt("2000 posterior samples in %.0f ms after load (slowest of 5 observation sets)", 1e3 * worst)};
}

Outcome variable_length(const GroundwaterRun& run) {
  if (!run.ok) return {false, "training failed: " + run.error};
  const train::PosteriorModel model = train::PosteriorModel::load(run.model_path.string());
  const train::Pairs test = run.ds.test();
  std::vector<double> med;
  std::string seq;
  for (std::size_t k = 20; k <= 25; ++k) {
    med.push_back(median(held_out(model, test, k).rel_l2));
    seq += fmt("%sk=%zu:%.3f", seq.empty() ? "" : " ", k, med.back());
  }
  std::size_t inversions = 0;
  for (std::size_t i = 1; i < med.size(); ++i) inversions += med[i] > med[i - 1];
  return {inversions <= 1, "median relative l2 " + seq + fmt(" (%zu increases)", inversions)};
}

// ------------------------------------------------------------------ 10

Outcome simulator_physics() {
  using namespace simulate;
  GridSpec g;
  // Every boundary at the initial head and no stresses: the state must not move at all.
  ForwardConfig still;
  still.north = still.south = still.east = still.west = Edge::fixed(18.0);
  still.initial_head = 18.0;
  still.wells.clear();
  Rng rng(90);
  std::vector<double> theta(g.dim());
  for (double& t : theta) t = rng.normal();
  double steady = 0.0;
  const Tensor flat = GroundwaterSolver(g, still).solve_fields(theta);
  for (double v : flat.values()) steady = std::max(steady, std::abs(v - 18.0));

  // Closed aquifer from a rough initial state: stored volume is invariant.
  ForwardConfig closed = still;
  closed.north = closed.south = closed.east = closed.west = Edge::no_flux();
  closed.initial_heads.resize(g.dim());
  for (double& h : closed.initial_heads) h = 20.0 + 3.0 * rng.normal();
  const Tensor f = GroundwaterSolver(g, closed).solve_fields(theta);
  auto stored = [&](std::size_t s) {
    double v = 0.0;
    for (std::size_t i = 0; i < f.cols(); ++i) v += f(s, i);
    return v;
  };
  double drift = 0.0;
  for (std::size_t s = 1; s <= g.steps; ++s) drift = std::max(drift, std::abs(stored(s) - stored(0)) / stored(0));

  // Two cells between fixed heads, run to steady state. Each face carries the
  // same flux q; solve 2 k0 u0 (H1 - u0) = q = 2 k1 u1 (u1 - H2) together with the
  // harmonic-mean middle face by bisection on q.
  const double h1 = 20.0, h2 = 12.0, lk0 = 0.4, lk1 = -0.6, k0 = std::exp(lk0), k1 = std::exp(lk1);
  auto heads = [&](double q) {
    return std::pair{0.5 * (h1 + std::sqrt(h1 * h1 - 2.0 * q / k0)), 0.5 * (h2 + std::sqrt(h2 * h2 + 2.0 * q / k1))};
  };
  auto middle = [&](double q) {
    const auto [u0, u1] = heads(q);
    const double t0 = k0 * u0, t1 = k1 * u1;
    return 2.0 * t0 * t1 / (t0 + t1) * (u0 - u1) - q;
  };
  double lo = 0.0, hi = k0 * h1 * h1 / 2.0;
  for (int it = 0; it < 200; ++it) (middle(0.5 * (lo + hi)) > 0 ? lo : hi) = 0.5 * (lo + hi);
  const auto [e0, e1] = heads(0.5 * (lo + hi));
  GridSpec two;
  two.rows = 1;
  two.cols = 2;
  two.sensors = {0, 1};
  two.dt = 1e7;
  ForwardConfig fc;
  fc.west = Edge::fixed(h1);
  fc.east = Edge::fixed(h2);
  fc.north = fc.south = Edge::no_flux();
  fc.wells.clear();
  fc.initial_head = 16.0;
  const Tensor s = GroundwaterSolver(two, fc).solve_fields(std::vector<double>{lk0, lk1});
  const std::size_t last = two.steps;
  const double flux_err = std::max(std::abs(s(last, 0) - e0), std::abs(s(last, 1) - e1));

  const bool pass = steady == 0.0 && drift < 1e-8 && flux_err < 1e-7;
  return {pass, fmt("constant-head deviation %.1e, no-flux volume drift %.2e, two-cell head error %.2e", steady, drift,
                    flux_err)};
}

// ------------------------------------------------------------------ 11

Outcome density_normalization() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ParameterStore store;
    flow::FlowConfig c = random_flow(1, 8, 100 + seed);
    const flow::ConditionalFlow f(store, c);
    Rng rng(110 + seed);
    const Tensor u = normal({1, 8}, rng);
    const std::size_t n = 40001;
    const double lo = -20.0, hi = 20.0, h = (hi - lo) / static_cast<double>(n - 1);
    Tensor grid({n, 1});
    for (std::size_t i = 0; i < n; ++i) grid[i] = lo + h * static_cast<double>(i);
    Tape tape(Mode::eval, 0, false);
    const auto out = f.forward(store, tape.constant(grid), tape.constant(u));
    // Simpson's rule on the density exp(log N(z) + logdet).
    double integral = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = out.value.value()[i];
      const double p = std::exp(-0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi) + out.logdet.value()[i]);
      integral += (i == 0 || i + 1 == n ? 1.0 : (i % 2 ? 4.0 : 2.0)) * p;
    }
    integral *= h / 3.0;
    worst = std::max(worst, std::abs(integral - 1.0));
  }
  return {worst < 1e-3, fmt("max |integral - 1| = %.2e over 5 random N=1 flows on [-20, 20]", worst)};
}

// ------------------------------------------------------------------ 12

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

// History rows without the wall-clock column.
std::string history_without_time(const fs::path& p) {
  std::istringstream is(slurp(p));
  std::string out;
  for (std::string line; std::getline(is, line);) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

Outcome determinism(const fs::path& configs, const fs::path& work) {
  const std::string cfg = (configs / "smoke.cfg").string();
  std::ostringstream quiet;
  auto pipeline = [&](const std::string& tag, std::size_t workers) {
    const fs::path dir = work / ("determinism_" + tag);
    cli::CommonOptions o{.config = cfg, .workers = workers, .out = (dir / "gen").string()};
    cli::cmd_generate(o, quiet);
    o.out = (dir / "train").string();
    cli::cmd_train(o, {.data = (dir / "gen" / "dataset.lfi").string()}, quiet);
    o.out = (dir / "infer").string();
    (void)cli::cmd_infer(o, {.model = (dir / "train" / "model.nfck").string(),
                             .obs = {.data = (dir / "gen" / "dataset.lfi").string(), .index = 3}},
                         quiet);
    return dir;
  };
  const fs::path a = pipeline("a", 1), b = pipeline("b", 1), c = pipeline("c", 3);
  const std::vector<std::string> files = {"gen/dataset.lfi",   "gen/resolved.cfg",   "train/model.nfck",
                                          "train/resolved.cfg", "infer/samples.bin",  "infer/samples.csv",
                                          "infer/summary.csv",  "infer/resolved.cfg"};
  std::vector<std::string> differing;
  for (const auto& f : files) {
    const std::string ref = slurp(a / f);
    if (ref.empty() || ref != slurp(b / f) || ref != slurp(c / f)) differing.push_back(f);
  }
  const std::string h = history_without_time(a / "train/history.csv");
  if (h != history_without_time(b / "train/history.csv") || h != history_without_time(c / "train/history.csv")) {
    differing.push_back("train/history.csv (loss columns)");
  }
  std::string list;
  for (const auto& d : differing) list += " " + d;
  return {differing.empty(), differing.empty()
                                 ? fmt("%zu artifacts byte-identical across 2 runs with --workers 1 and 1 with --workers 3",
                                       files.size() + 1)
                                 : "differing:" + list};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<int> only;
  std::string configs = LFI_CONFIG_DIR, work = "acceptance_work";
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--configs", configs, "directory with groundwater.cfg, linear_gaussian.cfg and smoke.cfg");
  app.add_option("--work", work, "scratch directory for generated artifacts");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());
  auto want = [&](int n) { return selected.empty() || selected.contains(n); };
  fs::create_directories(work);

  const std::map<int, std::string> names = {
      {1, "invertibility"},          {2, "log-det exactness"},     {3, "gradient fidelity"},
      {4, "spline structure"},       {5, "conjugate posterior"},   {6, "calibration"},
      {7, "informativeness"},        {8, "amortization"},          {9, "variable-length reuse"},
      {10, "simulator physics"},     {11, "density normalization"}, {12, "determinism"}};
  int failures = 0;
  auto report = [&](int n, const std::function<Outcome()>& body) {
    if (!want(n)) return;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o = {false, std::string("raised: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s  %2d %-22s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", n, names.at(n).c_str(), o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  };

  report(1, invertibility);
  report(2, logdet_exactness);
  report(3, gradient_fidelity);
  report(4, spline_structure);
  report(10, simulator_physics);
  report(11, density_normalization);
  report(5, [&] { return conjugate_recovery(configs, work); });
  report(12, [&] { return determinism(configs, work); });

  if (want(6) || want(7) || want(8) || want(9)) {
    GroundwaterRun run = train_groundwater(configs, work);
    if (run.ok) {
      std::istringstream hist(slurp(fs::path(work) / "groundwater" / "history.csv"));
      for (std::string line; std::getline(hist, line);) run.epochs += !line.empty();
      run.epochs -= 1;
    }
    HeldOut full;
    if (run.ok && (want(6) || want(7))) {
      full = held_out(train::PosteriorModel::load(run.model_path.string()), run.ds.test(), run.ds.data.steps());
    }
    report(6, [&] { return calibration(run, full); });
    report(7, [&] { return informativeness(run, full); });
    report(8, [&] { return amortization(run); });
    report(9, [&] { return variable_length(run); });
  }

  std::printf("%d of %zu criteria failed\n", failures, selected.empty() ? names.size() : selected.size());
  return failures ? 1 : 0;
}
