#include "sketchdiff/evalx.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sketchdiff/diffusion/staged.hpp"
#include "sketchdiff/error.hpp"
#include "sketchdiff/rng.hpp"
#include "sketchdiff/synthdata/text.hpp"

namespace sketchdiff::evalx {

namespace {

double sq(const synth::Rgb& a, const synth::Rgb& b) {
  double s = 0.0;
  for (int c = 0; c < 3; ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
  return s;
}

std::size_t nearest(const synth::Rgb& x, const std::vector<synth::Rgb>& centers) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < centers.size(); ++j) {
    if (sq(x, centers[j]) < sq(x, centers[best])) best = j;
  }
  return best;
}

}  // namespace

KMeansResult kmeans_colors(const std::vector<synth::Rgb>& colors, std::size_t k, std::uint64_t seed,
                           std::size_t max_iter, double tol) {
  const std::size_t n = colors.size();
  if (k == 0) throw ConfigError("kmeans: K must be positive");
  if (n < k) throw DataError("kmeans: " + std::to_string(n) + " points cannot form " + std::to_string(k) + " clusters");
  Rng rng(seed);
  KMeansResult r;
  // k-means++: first center uniform, then proportional to squared distance
  r.centroids.push_back(colors[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(n) - 1))]);
  std::vector<double> d2(n);
  while (r.centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = sq(colors[i], r.centroids[nearest(colors[i], r.centroids)]);
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (pick = 0; pick + 1 < n; ++pick) {
        if (u < d2[pick]) break;
        u -= d2[pick];
      }
    } else {
      pick = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(n) - 1));
    }
    r.centroids.push_back(colors[pick]);
  }
  r.assignment.assign(n, 0);
  for (std::size_t it = 0; it < max_iter; ++it) {
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      r.assignment[i] = nearest(colors[i], r.centroids);
      objective += sq(colors[i], r.centroids[r.assignment[i]]);
    }
    r.objective_history.push_back(objective);
    ++r.iterations;
    std::vector<synth::Rgb> sums(k, synth::Rgb{0.0, 0.0, 0.0});
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) sums[r.assignment[i]][c] += colors[i][c];
      ++counts[r.assignment[i]];
    }
    double moved = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] == 0) continue;  // an empty cluster keeps its centroid
      synth::Rgb next;
      for (int c = 0; c < 3; ++c) next[c] = sums[j][c] / static_cast<double>(counts[j]);
      moved = std::max(moved, std::sqrt(sq(next, r.centroids[j])));
      r.centroids[j] = next;
    }
    if (moved < tol) break;
  }
  // final assignment against the final centroids
  double objective = 0.0;
  r.empty.assign(k, 1);
  for (std::size_t i = 0; i < n; ++i) {
    r.assignment[i] = nearest(colors[i], r.centroids);
    objective += sq(colors[i], r.centroids[r.assignment[i]]);
    r.empty[r.assignment[i]] = 0;
  }
  r.objective_history.push_back(objective);
  return r;
}

MiouResult miou(const std::vector<int>& pred, const std::vector<int>& gt, std::size_t k) {
  if (pred.size() != gt.size()) {
    throw DataError("miou: " + std::to_string(pred.size()) + " predictions for " + std::to_string(gt.size()) + " labels");
  }
  std::vector<std::size_t> inter(k, 0), uni(k, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || gt[i] < 0 || static_cast<std::size_t>(pred[i]) >= k || static_cast<std::size_t>(gt[i]) >= k) {
      throw DataError("miou: label outside [0, " + std::to_string(k) + ")");
    }
    const auto p = static_cast<std::size_t>(pred[i]), g = static_cast<std::size_t>(gt[i]);
    if (p == g) {
      ++inter[p];
      ++uni[p];
    } else {
      ++uni[p];
      ++uni[g];
    }
  }
  MiouResult r;
  r.per_class.assign(k, 0.0);
  r.present.assign(k, 0);
  std::size_t classes = 0;
  double total = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    if (uni[c] == 0) continue;
    r.present[c] = 1;
    r.per_class[c] = static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
    total += r.per_class[c];
    ++classes;
  }
  r.miou = classes ? total / static_cast<double>(classes) : 0.0;
  return r;
}

int ProbeModel::predict(const std::vector<double>& x) const {
  if (x.size() != dim) throw ConfigError("probe: embedding dimension mismatch");
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < classes; ++c) {
    double s = bias[c];
    for (std::size_t d = 0; d < dim; ++d) s += weight[c * dim + d] * (x[d] - mean[d]) / scale[d];
    if (s > best_score) {
      best_score = s;
      best = static_cast<int>(c);
    }
  }
  return best;
}

ProbeResult linear_probe(const std::vector<std::vector<double>>& embeddings, const std::vector<int>& labels,
                         std::uint64_t seed, const ProbeConfig& cfg) {
  if (embeddings.size() != labels.size() || embeddings.empty()) throw DataError("probe: need one label per embedding");
  const std::size_t dim = embeddings[0].size();
  for (const auto& e : embeddings) {
    if (e.size() != dim) throw DataError("probe: embeddings differ in dimension");
  }
  int max_label = -1;
  for (int l : labels) {
    if (l < 0) throw DataError("probe: negative label");
    max_label = std::max(max_label, l);
  }
  const auto classes = static_cast<std::size_t>(max_label + 1);
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  std::size_t nonempty = 0;
  for (const auto& c : by_class) nonempty += c.empty() ? 0 : 1;
  if (nonempty < 2) throw DataError("probe: at least two classes are required");

  Rng rng(seed);
  std::vector<std::size_t> train, test;
  for (auto& members : by_class) {
    rng.shuffle(members);
    const auto n_test = static_cast<std::size_t>(std::lround(cfg.test_fraction * static_cast<double>(members.size())));
    for (std::size_t k = 0; k < members.size(); ++k) (k < n_test ? test : train).push_back(members[k]);
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  if (train.empty() || test.empty()) throw DataError("probe: split left an empty train or test set");

  ProbeResult res;
  ProbeModel& m = res.model;
  m.classes = classes;
  m.dim = dim;
  m.mean.assign(dim, 0.0);
  m.scale.assign(dim, 0.0);
  for (auto i : train)
    for (std::size_t d = 0; d < dim; ++d) m.mean[d] += embeddings[i][d];
  for (auto& v : m.mean) v /= static_cast<double>(train.size());
  for (auto i : train)
    for (std::size_t d = 0; d < dim; ++d) m.scale[d] += std::pow(embeddings[i][d] - m.mean[d], 2);
  for (auto& v : m.scale) {
    v = std::sqrt(v / static_cast<double>(train.size()));
    if (!(v > 1e-12)) v = 1.0;
  }
  std::vector<std::vector<double>> x(train.size(), std::vector<double>(dim));
  for (std::size_t r = 0; r < train.size(); ++r)
    for (std::size_t d = 0; d < dim; ++d) x[r][d] = (embeddings[train[r]][d] - m.mean[d]) / m.scale[d];

  m.weight.assign(classes * dim, 0.0);
  m.bias.assign(classes, 0.0);
  std::vector<double> gw(classes * dim), gb(classes), score(classes);
  const double inv_n = 1.0 / static_cast<double>(train.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t k = 0; k < gw.size(); ++k) gw[k] = cfg.l2 * m.weight[k];
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t r = 0; r < train.size(); ++r) {
      const auto y = static_cast<std::size_t>(labels[train[r]]);
      for (std::size_t c = 0; c < classes; ++c) {
        score[c] = m.bias[c];
        for (std::size_t d = 0; d < dim; ++d) score[c] += m.weight[c * dim + d] * x[r][d];
      }
      std::size_t rival = y == 0 ? 1 : 0;
      for (std::size_t c = 0; c < classes; ++c) {
        if (c != y && score[c] > score[rival]) rival = c;
      }
      if (1.0 + score[rival] - score[y] <= 0.0) continue;
      for (std::size_t d = 0; d < dim; ++d) {
        gw[rival * dim + d] += inv_n * x[r][d];
        gw[y * dim + d] -= inv_n * x[r][d];
      }
      gb[rival] += inv_n;
      gb[y] -= inv_n;
    }
    for (std::size_t k = 0; k < gw.size(); ++k) m.weight[k] -= cfg.lr * gw[k];
    for (std::size_t c = 0; c < classes; ++c) m.bias[c] -= cfg.lr * gb[c];
  }
  std::size_t correct = 0;
  for (auto i : test) correct += m.predict(embeddings[i]) == labels[i] ? 1 : 0;
  res.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  res.train_size = train.size();
  res.test_size = test.size();
  return res;
}

SegmentationResult segment_colors(const std::vector<synth::Rgb>& colors, synth::Category category, std::uint64_t seed) {
  const auto words = synth::canonical_color_words(category);
  std::vector<synth::Rgb> canon;
  for (const auto& w : words) canon.push_back(synth::color_rgb(w));
  SegmentationResult r;
  r.k = canon.size();
  r.raw_colors = colors;
  // cluster in lexicographic color order so the result ignores point order
  std::vector<std::size_t> order(colors.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return colors[a] < colors[b]; });
  std::vector<synth::Rgb> sorted;
  sorted.reserve(colors.size());
  for (auto i : order) sorted.push_back(colors[i]);
  const auto km = kmeans_colors(sorted, r.k, seed);
  r.empty_clusters = km.empty;
  std::vector<int> cluster_label(r.k);
  for (std::size_t j = 0; j < r.k; ++j) cluster_label[j] = static_cast<int>(nearest(km.centroids[j], canon));
  r.labels.resize(colors.size());
  for (std::size_t k = 0; k < order.size(); ++k) r.labels[order[k]] = cluster_label[km.assignment[k]];
  return r;
}

SegmentationResult segment_parts(const std::vector<synth::Vec3>& g0, synth::Category category,
                                 const diffusion::AppearanceModel& model, std::uint64_t seed) {
  const auto colors = diffusion::sample_colors_from_text(model, g0, synth::canonical_prompt(category), seed);
  return segment_colors(colors, category, derive_seed(seed, 2));
}

}  // namespace sketchdiff::evalx
