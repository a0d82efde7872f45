// Solves the Humboldt forest allocation under each formulation and prints
// one row per rule.

#include <cstdio>
#include <filesystem>
#include <limits>

#include "stratalloc/stratalloc.hpp"

using namespace stratalloc;

namespace {

void print(const char* label, const SurveyFrame& frame, const SolveReport& r) {
  std::printf("%-12s", label);
  if (!r.feasible) {
    std::printf(" %s\n", r.message.c_str());
    return;
  }
  for (auto n : r.allocation.n) std::printf(" %4lld", static_cast<long long>(n));
  const Matrix c = cov_hat_stratified(r.allocation, frame);
  std::printf("  Var %8.3f %10.3f  cost %7.1f\n", c(0, 0), c(1, 1), r.objective_cost);
}

}  // namespace

int main(int argc, char** argv) {
  const std::filesystem::path path = argc > 1 ? argv[1] : STRATALLOC_DATA_DIR "/humboldt.csv";
  const SurveyFrame frame = load_survey(path);
  const double inf = std::numeric_limits<double>::infinity();

  ProblemSpec ba;
  ba.v0 = {6.0, inf};
  ProblemSpec vol;
  vol.v0 = {inf, 5500.0};
  ProblemSpec tr;
  tr.formulation = Formulation::trace_deterministic;
  tr.tau = 6000.0;
  ProblemSpec pk;
  pk.formulation = Formulation::prekopa_chance;
  pk.v0 = {6.0, inf};
  pk.p0 = 0.5;
  ProblemSpec trc;
  trc.formulation = Formulation::trace_chance;
  trc.tau = 6000.0;
  trc.p0 = 0.5;

  print("BA", frame, solve(ba, frame));
  print("Vol", frame, solve(vol, frame));
  print("trace", frame, solve(tr, frame));
  print("prekopa", frame, solve(pk, frame));
  print("trace p=.5", frame, solve(trc, frame));
  return 0;
}
