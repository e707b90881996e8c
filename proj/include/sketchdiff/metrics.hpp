#pragma once

#include <cstddef>
#include <filesystem>
#include <string_view>
#include <vector>

#include "sketchdiff/synthdata/shape.hpp"

namespace sketchdiff::metrics {

using Points = std::vector<synth::Vec3>;

// Mean squared nearest-neighbour distance A->B plus B->A.
double chamfer(const Points& a, const Points& b);

// Minimum-cost perfect assignment for a row-major n x n cost matrix;
// result[i] is the column assigned to row i.
std::vector<std::size_t> hungarian(const std::vector<double>& cost, std::size_t n);

struct AuctionResult {
  std::vector<std::size_t> assignment;
  double cost = 0.0;         // total cost of the assignment
  double bound_gap = 0.0;    // total cost minus a certified lower bound on the optimum
};
// Forward auction with epsilon scaling. Phases continue until the certified
// relative gap is at most `rel_tol`; the result is within rel_tol of optimal.
AuctionResult auction(const std::vector<double>& cost, std::size_t n, double rel_tol = 0.01);

// Mean Euclidean distance under the optimal bijection. Exact (Hungarian) for
// n <= kExactEmdLimit, auction within 1% above.
inline constexpr std::size_t kExactEmdLimit = 512;
double emd(const Points& a, const Points& b);
double emd_exact(const Points& a, const Points& b);
double emd_auction(const Points& a, const Points& b, double rel_tol = 0.01);

enum class Distance { Chamfer, Emd };
std::string_view distance_name(Distance d);

// Row-major |gen| x |ref| distances.
std::vector<double> pairwise(const std::vector<Points>& gen, const std::vector<Points>& ref, Distance d,
                             std::size_t threads = 1);

// Mean over references of the distance to the closest generated cloud.
double mmd(const std::vector<Points>& gen, const std::vector<Points>& ref, Distance d, std::size_t threads = 1);
// Fraction of references that are the nearest reference of some generated
// cloud (ties go to the lowest reference index).
double cov(const std::vector<Points>& gen, const std::vector<Points>& ref, Distance d, std::size_t threads = 1);

double mmd_from_matrix(const std::vector<double>& dist, std::size_t n_gen, std::size_t n_ref);
double cov_from_matrix(const std::vector<double>& dist, std::size_t n_gen, std::size_t n_ref);

struct MetricReport {
  double mmd_cd = 0.0, mmd_emd = 0.0;
  double cov_cd = 0.0, cov_emd = 0.0;
  std::size_t n_gen = 0, n_ref = 0;

  void write_csv(const std::filesystem::path& path) const;
};
MetricReport evaluate(const std::vector<Points>& gen, const std::vector<Points>& ref, std::size_t threads = 1);

}  // namespace sketchdiff::metrics
