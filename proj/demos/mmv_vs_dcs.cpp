// Same jointly sparse signal measured with one shared matrix (MMV) and with
// independent matrices (DCS); both runs against their SE prediction.
#include "vbamp/state_evolution.hpp"
#include "vbamp/vbamp.hpp"

#include <cmath>
#include <cstdio>

using namespace vbamp;

int main() {
  const Index n = 4000, b = 3;
  const double rate = 0.22;
  const Index m = Index(std::lround(rate * double(n)));
  const BgPrior prior{0.1, Matrix::Identity(b, b)};
  const NoiseModel noise{std::pow(10.0, -3.5) * Matrix::Identity(b, b)};
  const Matrix x = sample_signal(prior, n, 7).x;
  for (Mode mode : {Mode::MMV, Mode::DCS}) {
    auto ens = make_ensemble(mode, m, n, b, MatrixKind::Gaussian, 8);
    Matrix y = measure(x, ens, noise, 9);
    const ProblemInstance p{std::move(ens), std::move(y), noise};
    const auto r = vbamp_run(p, prior);
    const auto se = se_run(prior, noise, rate, mode, IntegratorSpec::quadrature());
    const double emp = 10 * std::log10((r.xhat - x).squaredNorm() / double(n * b));
    const double pred = 10 * std::log10(se.final_mse().mean());
    std::printf("%s: %zu iterations, MSE %.2f dB, SE %.2f dB\n", to_string(mode), r.trace.size(), emp, pred);
  }
}
