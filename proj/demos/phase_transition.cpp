// Scalar BG prior: local maxima of the free energy and the SE fixed point
// as the measurement rate grows.
#include "vbamp/replica.hpp"
#include "vbamp/state_evolution.hpp"

#include <cmath>
#include <cstdio>

using namespace vbamp;

int main() {
  const double s2 = std::pow(10.0, -3.5);
  const BgPrior prior{0.1, Matrix::Identity(1, 1)};
  std::printf("%6s %7s %4s %10s %10s %10s\n", "R", "maxima", "gap", "MMSE dB", "BAMP dB", "SE dB");
  for (double r = 0.14; r < 0.265; r += 0.01) {
    const FreeEnergySpec spec{r, 0.1, Vector::Constant(1, s2), {}};
    const auto pts = stationary_points(spec);
    int maxima = 0;
    for (const auto& p : pts) maxima += p.kind == FreeEnergyPoint::Kind::LocalMax;
    const auto pred = predict_performance(pts);
    const auto se = se_run(prior, NoiseModel{Matrix::Constant(1, 1, s2)}, r, Mode::MMV, IntegratorSpec::quadrature());
    std::printf("%6.2f %7d %4s %10.2f %10.2f %10.2f\n", r, maxima, pred.gap ? "yes" : "no",
                10 * std::log10(pred.mmse(0)), 10 * std::log10(pred.bamp_mse(0)),
                10 * std::log10(se.final_mse()(0)));
  }
}
