#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sketchdiff/synthdata/shape.hpp"

namespace sketchdiff::diffusion {
class AppearanceModel;
}

namespace sketchdiff::evalx {

struct KMeansResult {
  std::vector<std::size_t> assignment;
  std::vector<synth::Rgb> centroids;
  // within-cluster sum of squares after every assignment step
  std::vector<double> objective_history;
  std::vector<char> empty;  // clusters left without points
  std::size_t iterations = 0;
};

// k-means++ seeding, then Lloyd iterations until the largest centroid
// movement is below `tol` or `max_iter` is reached.
KMeansResult kmeans_colors(const std::vector<synth::Rgb>& colors, std::size_t k, std::uint64_t seed,
                           std::size_t max_iter = 100, double tol = 1e-6);

struct MiouResult {
  double miou = 0.0;
  std::vector<double> per_class;  // IoU per class; 0 where the class is absent
  std::vector<char> present;      // nonempty union
};
MiouResult miou(const std::vector<int>& pred, const std::vector<int>& gt, std::size_t k);

struct ProbeConfig {
  double test_fraction = 0.25;  // held out per class
  double l2 = 1e-3;
  double lr = 0.05;
  std::size_t epochs = 400;
};

struct ProbeModel {
  std::size_t classes = 0, dim = 0;
  std::vector<double> weight;  // classes x dim, on standardized features
  std::vector<double> bias;    // classes
  std::vector<double> mean, scale;  // feature standardization from the training split

  int predict(const std::vector<double>& x) const;
};

struct ProbeResult {
  ProbeModel model;
  double accuracy = 0.0;  // held-out
  std::size_t train_size = 0, test_size = 0;
};

// Multiclass hinge loss (Crammer-Singer) with L2, full-batch subgradient
// descent on standardized features; per-class seeded split.
ProbeResult linear_probe(const std::vector<std::vector<double>>& embeddings, const std::vector<int>& labels,
                         std::uint64_t seed, const ProbeConfig& config = {});

struct SegmentationResult {
  std::vector<int> labels;
  std::vector<synth::Rgb> raw_colors;
  std::size_t k = 0;
  std::vector<char> empty_clusters;
};

// Clusters colors into K = part count groups and labels each cluster with
// the part whose canonical color is nearest its centroid.
SegmentationResult segment_colors(const std::vector<synth::Rgb>& colors, synth::Category category, std::uint64_t seed);

// Colors g0 with the category's canonical prompt through a text-conditioned
// appearance model, then segment_colors().
SegmentationResult segment_parts(const std::vector<synth::Vec3>& g0, synth::Category category,
                                 const diffusion::AppearanceModel& model, std::uint64_t seed);

}  // namespace sketchdiff::evalx
