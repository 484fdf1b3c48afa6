#include "run_config.hpp"

#include "vbamp/diagonalize.hpp"
#include "vbamp/experiments.hpp"
#include "vbamp/replica.hpp"
#include "vbamp/state_evolution.hpp"
#include "vbamp/vbamp.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

using namespace vbamp;
using vbamp::cli::RunConfig;

namespace {

RunConfig recover_defaults() {
  return RunConfig({
      {"mode", "mmv"},
      {"n", "1000"},
      {"m", "0"},  // 0: derived from rate
      {"rate", "0.25"},
      {"epsilon", "0.1"},
      {"sigma_x", "1,0;0,1"},
      {"sigma_w", "0.001,0;0,0.001"},
      {"matrix", "gaussian"},
      {"seed", "1"},
      {"t_max", "200"},
      {"tol", "1e-6"},
      {"em", "false"},
      {"em_start_epsilon", "0.5"},
      {"transform", "false"},
      {"input_a", ""},  // MMV: one CSV; DCS: one CSV per channel, comma separated
      {"input_y", ""},
      {"out_xhat", "xhat.csv"},
      {"out_trace", "trace.csv"},
      {"out_nmse", "nmse.csv"},
  });
}

RunConfig analyze_defaults() {
  return RunConfig({
      {"epsilon", "0.1"},
      {"rates", "0.25"},
      {"sigma_w2", "0.00031622776601683794"},  // one entry per channel
      {"grid_points", "0"},                    // 0: 200 for B <= 2, 64 beyond
      {"log10_lower", "-8"},
      {"integrator", "quadrature"},  // quadrature | tensor | montecarlo
      {"nodes", "16"},
      {"samples", "200000"},
      {"integrator_seed", "1"},
      {"t_max", "500"},
      {"tol", "1e-9"},
      {"arrows", "0"},  // B = 2: SE arrows on an arrows x arrows grid
      {"landscape", "true"},
      {"out_prefix", "analyze"},
  });
}

RunConfig singlepixel_defaults() {
  return RunConfig({
      {"m", "3330"},
      {"side", "100"},
      {"mask_seed", "11"},
      {"image_seed", "100"},
      {"noise_seed", "200"},
      {"input_ppm", ""},
      {"snr_db", "50.5"},
      {"noise_ratios", "8,8,1"},
      {"reference_channel", "2"},  // zero-based
      {"noiseless", "false"},
      {"epsilon", "0.04"},
      {"sigma_x", "4,3,2;3,4,3;2,3,4"},
      {"em_epsilon", "0.1"},  // start of the data-scaled EM prior for PPM input
      {"methods", "amp,bamp,mmv,mmv_em,group_lasso"},
      {"theta", "0"},            // <= 0: residual-optimal search per channel
      {"lambda_fraction", "0"},  // <= 0: sweep scored against the reference
      {"lambda_points", "32"},
      {"lambda_lo", "0.001"},
      {"lambda_hi", "0.5"},
      {"t_max", "200"},
      {"tol", "1e-6"},
      {"out_dir", "singlepixel_out"},
  });
}

std::string db_cell(double v) { return csv::fmt_db(v > 0 ? 10 * std::log10(v) : -std::numeric_limits<double>::infinity()); }

RunOptions run_options(const RunConfig& c) {
  RunOptions o;
  o.t_max = int(c.integer("t_max"));
  o.eps_tol = c.num("tol");
  o.validate();
  return o;
}

Matrix square_or_scalar(const RunConfig& c, const std::string& key, Index b) {
  const Matrix m = c.matrix(key);
  if (m.rows() == b) return m;
  if (m.rows() == 1) return m(0, 0) * Matrix::Identity(b, b);
  throw ConfigError(key + ": expected " + std::to_string(b) + "x" + std::to_string(b));
}

// ---------------------------------------------------------------------------

int cmd_recover(const RunConfig& c) {
  const std::string mode_s = c.str("mode");
  if (mode_s != "mmv" && mode_s != "dcs") throw ConfigError("mode must be mmv or dcs");
  const Mode mode = mode_s == "mmv" ? Mode::MMV : Mode::DCS;
  const Matrix sx = c.matrix("sigma_x");
  const Index b = sx.rows();
  const Matrix sw = square_or_scalar(c, "sigma_w", b);
  const BgPrior prior{c.num("epsilon"), sx};
  prior.validate();
  const RunOptions opts = run_options(c);
  if (c.flag("em") && c.flag("transform")) throw ConfigError("em and transform cannot be combined");

  ProblemInstance p;
  Matrix truth;
  if (!c.str("input_y").empty()) {
    if (c.str("input_a").empty()) throw ConfigError("input_y needs input_a");
    p.y = csv::read_matrix(c.str("input_y"));
    std::vector<Matrix> as;
    for (const auto& path : c.words("input_a")) as.push_back(csv::read_matrix(path));
    if (mode == Mode::MMV) {
      if (as.size() != 1) throw ConfigError("mmv takes one matrix file");
      p.ensemble = MeasurementEnsemble::shared(std::move(as.front()), p.y.cols());
    } else {
      p.ensemble = MeasurementEnsemble::distributed(std::move(as));
    }
    p.noise = NoiseModel{sw};
  } else {
    const Index n = c.integer("n");
    const Index m = c.integer("m") > 0 ? Index(c.integer("m")) : Index(std::lround(c.num("rate") * double(n)));
    if (n < 1 || m < 1) throw ConfigError("n and m must be positive");
    const std::string kind_s = c.str("matrix");
    if (kind_s != "gaussian" && kind_s != "rademacher") throw ConfigError("matrix must be gaussian or rademacher");
    const MatrixKind kind = kind_s == "gaussian" ? MatrixKind::Gaussian : MatrixKind::Rademacher;
    const std::uint64_t seed = c.seed("seed");
    truth = sample_signal(prior, n, seed).x;
    p.ensemble = make_ensemble(mode, m, n, b, kind, seed + 1);
    p.noise = NoiseModel{sw};
    p.y = measure(truth, p.ensemble, p.noise, seed + 2);
  }
  p.validate();

  Matrix xhat;
  RunTrace trace;
  if (c.flag("em")) {
    auto r = vbamp_em_run(p, BgPrior{c.num("em_start_epsilon"), sx}, opts);
    xhat = std::move(r.xhat);
    trace = std::move(r.trace);
  } else if (c.flag("transform")) {
    const Diagonalizer d = joint_diagonalizer(sx, sw, prior.epsilon);
    const auto [pt, prt] = transform_problem(p, prior, d);
    auto r = vbamp_run(pt, prt, opts);
    xhat = r.xhat * d.inverse().transpose();
    trace = std::move(r.trace);
  } else {
    auto r = vbamp_run(p, prior, opts);
    xhat = std::move(r.xhat);
    trace = std::move(r.trace);
  }

  cli::write_csv(c.str("out_xhat"), c, [&](std::ostream& os) { csv::write_matrix(os, xhat); });
  cli::write_csv(c.str("out_trace"), c, [&](std::ostream& os) { trace.write_csv(os); });
  if (truth.size()) {
    cli::write_csv(c.str("out_nmse"), c, [&](std::ostream& os) {
      std::vector<std::string> head, row;
      const Vector e = nmse_db(xhat, truth);
      for (Index k = 0; k < b; ++k) {
        head.push_back("nmse_" + std::to_string(k + 1) + "_dB");
        row.push_back(csv::fmt_db(e(k)));
      }
      head.push_back("iterations");
      row.push_back(std::to_string(trace.size()));
      head.push_back("converged");
      row.push_back(trace.converged ? "1" : "0");
      csv::write_row(os, head);
      csv::write_row(os, row);
    });
  }
  std::cerr << "recover: " << trace.size() << " iterations" << (trace.converged ? ", converged" : ", not converged")
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

IntegratorSpec integrator(const RunConfig& c) {
  const std::string k = c.str("integrator");
  const long nodes = c.integer("nodes");
  if (k == "quadrature") return IntegratorSpec::quadrature(int(nodes));
  if (k == "tensor") return IntegratorSpec::tensor_hermite(int(nodes));
  if (k == "montecarlo") return IntegratorSpec::montecarlo(c.integer("samples"), c.seed("integrator_seed"));
  throw ConfigError("integrator must be quadrature, tensor or montecarlo");
}

std::string rate_tag(double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", r);
  return buf;
}

int cmd_analyze(const RunConfig& c) {
  const auto rates = c.list("rates");
  if (rates.empty()) throw ConfigError("rates: empty grid");
  const Vector s2 = c.vector("sigma_w2");
  if (s2.size() < 1) throw ConfigError("sigma_w2: no channels");
  const long points = c.integer("grid_points");
  if (points < 0 || points == 1) throw ConfigError("grid_points: need 0 (default) or at least 2");
  const Index b = s2.size();
  const double eps = c.num("epsilon");
  const IntegratorSpec integ = integrator(c);
  const long arrows = c.integer("arrows");
  if (arrows < 0 || arrows == 1) throw ConfigError("arrows: need 0 or at least 2");
  if (arrows > 0 && b != 2) throw ConfigError("arrows are only drawn for two channels");
  const std::string prefix = c.str("out_prefix");
  const FreeEnergyGrid grid{int(points), c.num("log10_lower")};
  const BgPrior prior{eps, Matrix::Identity(b, b)};
  const NoiseModel noise{s2.asDiagonal()};

  std::vector<std::vector<std::string>> summary;
  for (double rate : rates) {
    FreeEnergySpec spec{rate, eps, s2, {}};
    spec.validate();
    const std::string base = prefix + "_R" + rate_tag(rate);
    const FreeEnergyLandscape land = free_energy_landscape(spec, grid);
    const auto pts = stationary_points(spec, land);
    const auto pred = predict_performance(pts);
    const SeTrajectory se = se_run(prior, noise, rate, Mode::MMV, integ, int(c.integer("t_max")), c.num("tol"));
    if (c.flag("landscape"))
      cli::write_csv(base + "_landscape.csv", c, [&](std::ostream& os) { land.write_csv(os); });
    cli::write_csv(base + "_stationary.csv", c, [&](std::ostream& os) { write_stationary_csv(os, pts); });
    cli::write_csv(base + "_se.csv", c, [&](std::ostream& os) { se.write_csv(os); });
    if (arrows > 0) {
      // SE map E -> R (se_step(Sigma_w + E/R) - Sigma_w) on a log grid
      cli::write_csv(base + "_arrows.csv", c, [&](std::ostream& os) {
        csv::write_row(os, {"E_1_dB", "E_2_dB", "next_E_1_dB", "next_E_2_dB"});
        for (long i = 0; i < arrows; ++i)
          for (long j = 0; j < arrows; ++j) {
            Vector e(2);
            for (Index k = 0; k < 2; ++k) {
              const double hi = std::log10(spec.upper(k));
              const double t = double(k == 0 ? i : j) / double(arrows - 1);
              e(k) = std::pow(10.0, grid.log10_lower + t * (hi - grid.log10_lower));
            }
            const Matrix sv = noise.sigma_w + Matrix(e.asDiagonal()) / rate;
            const Matrix next = rate * (se_step(sv, prior, noise, rate, Mode::MMV, integ) - noise.sigma_w);
            csv::write_row(os, {db_cell(e(0)), db_cell(e(1)), db_cell(next(0, 0)), db_cell(next(1, 1))});
          }
      });
    }
    int maxima = 0;
    for (const auto& pt : pts) maxima += pt.kind == FreeEnergyPoint::Kind::LocalMax;
    std::vector<std::string> row{csv::fmt(rate), std::to_string(maxima), pred.gap ? "1" : "0"};
    for (Index k = 0; k < b; ++k) row.push_back(db_cell(pred.mmse(k)));
    for (Index k = 0; k < b; ++k) row.push_back(db_cell(pred.bamp_mse(k)));
    for (Index k = 0; k < b; ++k) row.push_back(db_cell(se.final_mse()(k)));
    summary.push_back(std::move(row));
    std::cerr << "analyze: R=" << rate << " maxima=" << maxima << (pred.gap ? " gap" : "") << "\n";
  }
  cli::write_csv(prefix + "_summary.csv", c, [&](std::ostream& os) {
    std::vector<std::string> head{"rate", "local_maxima", "gap"};
    for (const char* what : {"mmse", "bamp_mse", "se_mse"})
      for (Index k = 0; k < b; ++k) head.push_back(std::string(what) + "_" + std::to_string(k + 1) + "_dB");
    csv::write_row(os, head);
    for (const auto& r : summary) csv::write_row(os, r);
  });
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_singlepixel(const RunConfig& c) {
  const Index side = c.integer("side");
  if (side < 2) throw ConfigError("side must be at least 2");
  const Index n = side * side;
  TableSetup setup;
  setup.m = c.integer("m");
  setup.snr_reference_db = c.num("snr_db");
  setup.noise_ratios = c.vector("noise_ratios");
  setup.reference_channel = c.integer("reference_channel");
  setup.epsilon = c.num("epsilon");
  setup.synth.side = side;
  setup.synth.sigma_x = c.matrix("sigma_x");
  setup.run = run_options(c);
  setup.lambda_points = int(c.integer("lambda_points"));
  setup.lambda_lo = c.num("lambda_lo");
  setup.lambda_hi = c.num("lambda_hi");
  const Index b = setup.synth.sigma_x.rows();
  if (setup.noise_ratios.size() != b) throw ConfigError("noise_ratios: one entry per channel");
  if (setup.reference_channel < 0 || setup.reference_channel >= b) throw ConfigError("reference_channel out of range");
  if (setup.m < 1 || setup.m > n) throw ConfigError("m must lie in [1, side^2]");
  if (setup.lambda_points < 1) throw ConfigError("lambda_points: empty grid");

  const std::vector<std::string> known{"amp", "bamp", "mmv", "mmv_em", "bamp_em", "group_lasso"};
  const auto methods = c.words("methods");
  if (methods.empty()) throw ConfigError("methods: nothing to run");
  for (const auto& m : methods)
    if (std::find(known.begin(), known.end(), m) == known.end()) throw ConfigError("unknown method: " + m);

  // reference image and its coefficients
  const bool user_image = !c.str("input_ppm").empty();
  const DctModel dct(n);
  Matrix coef;
  if (user_image) {
    const ColorImage img = read_ppm(c.str("input_ppm"));
    if (img.side != side) throw ConfigError("input_ppm is " + std::to_string(img.side) + " pixels wide, side is " + std::to_string(side));
    if (b != 3) throw ConfigError("PPM input has three channels; sigma_x must be 3x3");
    coef = image_to_coefficients(img, dct);
  } else {
    coef = synth_image(c.seed("image_seed"), setup.synth).coefficients;
  }

  std::cerr << "singlepixel: building " << setup.m << " x " << n << " measurement matrix\n";
  SinglePixelBench bench(generate_masks(setup.m, n, c.seed("mask_seed")), setup);
  const Matrix clean = bench.measure_clean(coef);
  Vector sigma = Vector::Zero(b);
  Matrix y = clean;
  if (!c.flag("noiseless")) {
    sigma = bench.noise_sigma(clean);
    y = add_channel_noise(clean, sigma, c.seed("noise_seed"));
  }
  bench.observe(y, sigma);

  const std::string dir = c.str("out_dir");
  std::filesystem::create_directories(dir);
  auto save_ppm = [&](const std::string& name, const Matrix& x) {
    write_ppm(coefficients_to_image(x, dct), dir + "/" + name + ".ppm");
  };
  if (b == 3) save_ppm("reference", coef);

  std::vector<MethodScore> rows;
  const BgPrior em0 = user_image ? bench.em_start(c.num("em_epsilon")) : BgPrior{0.5, Matrix::Identity(b, b)};
  for (const auto& m : methods) {
    std::cerr << "singlepixel: " << m << "\n";
    Matrix x;
    std::string detail;
    if (m == "mmv") {
      x = bench.recover_mmv(setup.synth.sigma_x);
    } else if (m == "bamp") {
      x = bench.recover_bamp(setup.synth.sigma_x);
    } else if (m == "mmv_em") {
      x = bench.recover_mmv_em(em0);
    } else if (m == "bamp_em") {
      x = bench.recover_bamp_em(em0);
    } else if (m == "amp") {
      Vector theta = Vector::Constant(b, c.num("theta"));
      x = bench.recover_amp(theta);
      for (Index k = 0; k < b; ++k) detail += (k ? ";" : "theta=") + csv::fmt(theta(k));
    } else {
      double f = c.num("lambda_fraction");
      if (f <= 0) f = select_lambda(bench.sweep_lambda(coef)).fraction;
      x = bench.recover_group_lasso(f);
      detail = "lambda_fraction=" + csv::fmt(f);
    }
    rows.push_back({m, nmse_db(x, coef), detail});
    if (b == 3) save_ppm(m, x);
  }

  cli::write_csv(dir + "/nmse.csv", c, [&](std::ostream& os) {
    std::vector<std::string> head{"method"};
    for (Index k = 0; k < b; ++k) head.push_back("nmse_" + std::to_string(k + 1) + "_dB");
    head.push_back("detail");
    csv::write_row(os, head);
    for (const auto& r : rows) {
      std::vector<std::string> row{r.method};
      for (Index k = 0; k < b; ++k) row.push_back(csv::fmt_db(r.nmse_db(k)));
      row.push_back(r.detail);
      csv::write_row(os, row);
    }
  });
  for (const auto& r : rows) {
    std::cerr << "  " << r.method;
    for (Index k = 0; k < b; ++k) std::cerr << " " << r.nmse_db(k);
    std::cerr << " dB\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint-sparse recovery with vector Bayesian AMP"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Upper bound on worker threads")->check(CLI::PositiveNumber);

  struct Command {
    CLI::App* sub;
    RunConfig (*defaults)();
    int (*run)(const RunConfig&);
    std::string config;
    std::vector<std::string> sets;
    bool dump = false;
  };
  std::vector<Command> cmds{
      {app.add_subcommand("recover", "Run VBAMP on synthetic or CSV data"), recover_defaults, cmd_recover, {}, {}, false},
      {app.add_subcommand("analyze", "Free-energy landscape, stationary points and state evolution"),
       analyze_defaults, cmd_analyze, {}, {}, false},
      {app.add_subcommand("singlepixel", "Single-pixel color imaging comparison"), singlepixel_defaults,
       cmd_singlepixel, {}, {}, false},
  };
  for (auto& cmd : cmds) {
    cmd.sub->add_option("-c,--config", cmd.config, "key=value config file");
    cmd.sub->add_option("--set", cmd.sets, "Override one key, key=value")->allow_extra_args(false);
    cmd.sub->add_flag("--dump-config", cmd.dump, "Print the resolved configuration and exit");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  Eigen::setNbThreads(threads);

  for (auto& cmd : cmds) {
    if (!*cmd.sub) continue;
    try {
      RunConfig cfg = cmd.defaults();
      if (!cmd.config.empty()) cfg.load(cmd.config);
      for (const auto& s : cmd.sets) cfg.assign(s);
      if (cmd.dump) {
        std::cout << "# config_hash=" << cfg.hash() << "\n";
        for (const auto& [k, v] : cfg.values()) std::cout << k << "=" << v << "\n";
        return 0;
      }
      return cmd.run(cfg);
    } catch (const ConfigError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    } catch (const IoError& e) {
      std::cerr << "i/o error: " << e.what() << "\n";
      return 2;
    } catch (const std::filesystem::filesystem_error& e) {
      std::cerr << "i/o error: " << e.what() << "\n";
      return 2;
    } catch (const SingularCovarianceError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    } catch (const DimensionError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    } catch (const DomainError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    } catch (const UnsupportedError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    } catch (const DivergenceError& e) {
      std::cerr << "diverged: " << e.what() << " after " << e.trace().size() << " iterations\n";
      return 1;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }
  return 2;
}
