// Finite-difference verification of every differentiable op and of the two
// training losses.
//
// Each point draws fresh inputs and a random unit direction d over all
// differentiable leaves, then compares <grad f, d> with the central
// difference (f(x + h d) - f(x - h d)) / 2h. Points where the difference at
// h and h/2 disagree (a ReLU or floor kink inside the stencil) are redrawn
// and counted as rejected.

#ifndef MODNIC_GRADCHECK_H_
#define MODNIC_GRADCHECK_H_

#include <cstdint>
#include <string>
#include <vector>

namespace modnic {

struct GradCheckReport {
  std::string name;
  int points = 0;
  int rejected = 0;
  double max_relative_error = 0.0;
  double tolerance = 1e-4;

  bool passed() const { return points > 0 && max_relative_error <= tolerance; }
};

std::vector<std::string> gradcheck_cases();

// Runs `points` accepted points per case.
std::vector<GradCheckReport> run_gradcheck(int points, uint64_t seed,
                                           double tolerance = 1e-4);
GradCheckReport run_gradcheck_case(const std::string& name, int points,
                                   uint64_t seed, double tolerance = 1e-4);

}  // namespace modnic

#endif  // MODNIC_GRADCHECK_H_
