#include "sketchdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "sketchdiff/error.hpp"
#include "sketchdiff/parallel.hpp"

namespace sketchdiff::metrics {

namespace {

double sq_dist(const synth::Vec3& p, const synth::Vec3& q) {
  const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
  return dx * dx + dy * dy + dz * dz;
}

double mean_nearest(const Points& from, const Points& to) {
  double total = 0.0;
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) best = std::min(best, sq_dist(p, q));
    total += best;
  }
  return total / static_cast<double>(from.size());
}

std::vector<double> euclidean_cost(const Points& a, const Points& b) {
  if (a.empty() || b.empty()) throw DataError("emd: empty point set");
  if (a.size() != b.size()) {
    throw DataError("emd: point sets differ in size (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  }
  const std::size_t n = a.size();
  std::vector<double> c(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] = std::sqrt(sq_dist(a[i], b[j]));
  return c;
}

}  // namespace

double chamfer(const Points& a, const Points& b) {
  if (a.empty() || b.empty()) throw DataError("chamfer: empty point set");
  return mean_nearest(a, b) + mean_nearest(b, a);
}

std::vector<std::size_t> hungarian(const std::vector<double>& cost, std::size_t n) {
  if (cost.size() != n * n) throw ConfigError("hungarian: cost matrix must be n x n");
  // potentials u (rows), v (columns); p[j] is the row matched to column j, 1-based
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<std::size_t> assign(n);
  for (std::size_t j = 1; j <= n; ++j) assign[p[j] - 1] = j - 1;
  return assign;
}

AuctionResult auction(const std::vector<double>& cost, std::size_t n, double rel_tol) {
  if (cost.size() != n * n) throw ConfigError("auction: cost matrix must be n x n");
  if (!(rel_tol > 0.0)) throw ConfigError("auction: tolerance must be positive");
  AuctionResult res;
  if (n == 0) return res;
  const double cmax = *std::max_element(cost.begin(), cost.end());
  const std::size_t none = n;
  std::vector<double> price(n, 0.0);
  std::vector<std::size_t> owner(n, none), assigned(n, none);
  // never shrink epsilon below this; the gap it leaves is reported
  const double eps_floor = std::max(cmax, 1e-300) * 1e-12;
  double eps = std::max(cmax / 4.0, eps_floor);
  for (;;) {
    std::fill(owner.begin(), owner.end(), none);
    std::fill(assigned.begin(), assigned.end(), none);
    std::vector<std::size_t> queue(n);
    for (std::size_t i = 0; i < n; ++i) queue[i] = n - 1 - i;
    while (!queue.empty()) {
      const std::size_t i = queue.back();
      queue.pop_back();
      double best = -std::numeric_limits<double>::infinity(), second = best;
      std::size_t bj = 0;
      const double* row = cost.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double val = -row[j] - price[j];
        if (val > best) {
          second = best;
          best = val;
          bj = j;
        } else if (val > second) {
          second = val;
        }
      }
      const double incr = n == 1 ? eps : best - second + eps;
      price[bj] += incr;
      if (owner[bj] != none) {
        assigned[owner[bj]] = none;
        queue.push_back(owner[bj]);
      }
      owner[bj] = i;
      assigned[i] = bj;
    }
    // eps-complementary slackness: total cost <= optimum + n*eps
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += cost[i * n + assigned[i]];
    const double gap = static_cast<double>(n) * eps;
    const double lower = std::max(0.0, total - gap);
    if (gap <= rel_tol * lower || eps <= eps_floor) {
      res.assignment = assigned;
      res.cost = total;
      res.bound_gap = std::min(gap, total);
      return res;
    }
    eps = std::max(eps / 5.0, eps_floor);
  }
}

double emd_exact(const Points& a, const Points& b) {
  const auto c = euclidean_cost(a, b);
  const std::size_t n = a.size();
  const auto assign = hungarian(c, n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += c[i * n + assign[i]];
  return total / static_cast<double>(n);
}

double emd_auction(const Points& a, const Points& b, double rel_tol) {
  const auto c = euclidean_cost(a, b);
  return auction(c, a.size(), rel_tol).cost / static_cast<double>(a.size());
}

double emd(const Points& a, const Points& b) {
  return a.size() <= kExactEmdLimit ? emd_exact(a, b) : emd_auction(a, b, 0.01);
}

std::string_view distance_name(Distance d) { return d == Distance::Chamfer ? "cd" : "emd"; }

std::vector<double> pairwise(const std::vector<Points>& gen, const std::vector<Points>& ref, Distance d,
                             std::size_t threads) {
  if (gen.empty() || ref.empty()) throw DataError("metrics: generated and reference sets must be nonempty");
  const std::size_t ng = gen.size(), nr = ref.size();
  std::vector<double> out(ng * nr);
  parallel_for(ng * nr, threads, [&](std::size_t k) {
    const auto& g = gen[k / nr];
    const auto& r = ref[k % nr];
    out[k] = d == Distance::Chamfer ? chamfer(g, r) : emd(g, r);
  });
  return out;
}

double mmd_from_matrix(const std::vector<double>& dist, std::size_t n_gen, std::size_t n_ref) {
  if (n_gen == 0 || n_ref == 0 || dist.size() != n_gen * n_ref) throw DataError("mmd: bad distance matrix");
  double total = 0.0;
  for (std::size_t r = 0; r < n_ref; ++r) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < n_gen; ++g) best = std::min(best, dist[g * n_ref + r]);
    total += best;
  }
  return total / static_cast<double>(n_ref);
}

double cov_from_matrix(const std::vector<double>& dist, std::size_t n_gen, std::size_t n_ref) {
  if (n_gen == 0 || n_ref == 0 || dist.size() != n_gen * n_ref) throw DataError("cov: bad distance matrix");
  std::vector<char> covered(n_ref, 0);
  for (std::size_t g = 0; g < n_gen; ++g) {
    std::size_t best = 0;
    for (std::size_t r = 1; r < n_ref; ++r) {
      if (dist[g * n_ref + r] < dist[g * n_ref + best]) best = r;
    }
    covered[best] = 1;
  }
  return static_cast<double>(std::count(covered.begin(), covered.end(), 1)) / static_cast<double>(n_ref);
}

double mmd(const std::vector<Points>& gen, const std::vector<Points>& ref, Distance d, std::size_t threads) {
  return mmd_from_matrix(pairwise(gen, ref, d, threads), gen.size(), ref.size());
}

double cov(const std::vector<Points>& gen, const std::vector<Points>& ref, Distance d, std::size_t threads) {
  return cov_from_matrix(pairwise(gen, ref, d, threads), gen.size(), ref.size());
}

MetricReport evaluate(const std::vector<Points>& gen, const std::vector<Points>& ref, std::size_t threads) {
  MetricReport r;
  r.n_gen = gen.size();
  r.n_ref = ref.size();
  const auto cd = pairwise(gen, ref, Distance::Chamfer, threads);
  const auto em = pairwise(gen, ref, Distance::Emd, threads);
  r.mmd_cd = mmd_from_matrix(cd, gen.size(), ref.size());
  r.cov_cd = cov_from_matrix(cd, gen.size(), ref.size());
  r.mmd_emd = mmd_from_matrix(em, gen.size(), ref.size());
  r.cov_emd = cov_from_matrix(em, gen.size(), ref.size());
  return r;
}

void MetricReport::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write metric report '" + path.string() + "'");
  char buf[256];
  std::snprintf(buf, sizeof buf, "metric,value\nmmd_cd,%.9g\nmmd_emd,%.9g\ncov_cd,%.9g\ncov_emd,%.9g\nn_gen,%zu\nn_ref,%zu\n",
                mmd_cd, mmd_emd, cov_cd, cov_emd, n_gen, n_ref);
  out << buf;
}

}  // namespace sketchdiff::metrics
