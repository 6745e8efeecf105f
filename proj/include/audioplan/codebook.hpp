#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "audioplan/embedding.hpp"
#include "audioplan/manifest.hpp"

namespace audioplan {

struct KMeansResult {
  std::uint32_t k = 0;
  std::uint32_t dim = 0;
  std::vector<double> centroids;  // k x dim row-major
  std::uint32_t iterations = 0;
  double inertia = 0.0;  // within-cluster sum of squared distances

  std::span<const double> centroid(std::uint32_t c) const {
    return {centroids.data() + static_cast<std::size_t>(c) * dim, dim};
  }
};

// Lloyd's algorithm with k-means++ seeding. Stops when the largest relative
// centroid shift drops below tol or after max_iters. Empty clusters are
// re-seeded to the point farthest from its current centroid. Deterministic
// given (vectors, k, seed).
KMeansResult kmeans(const std::vector<PooledVector>& vectors, std::uint32_t k,
                    std::uint64_t seed, std::uint32_t max_iters = 100,
                    double tol = 1e-4);

// Index of the nearest centroid by squared Euclidean distance; ties go to
// the lowest cluster index.
std::uint32_t nearest_centroid(const KMeansResult& fit,
                               std::span<const float> h);

struct Codebook {
  std::uint32_t k = 0;
  std::uint32_t dim = 0;
  std::vector<float> centroids;  // k x dim row-major, f32 as serialized
  std::map<std::string, std::uint32_t> assignment;  // sample id -> cluster
  std::uint64_t seed = 0;
  std::uint32_t iterations = 0;
  // Provenance kept in memory for reporting; not part of the file format.
  double inertia = 0.0;
  std::size_t fit_subset_size = 0;

  std::span<const float> centroid(std::uint32_t c) const {
    return {centroids.data() + static_cast<std::size_t>(c) * dim, dim};
  }
  std::uint32_t assign(std::span<const float> h) const;
};

// Fits centroids on the pooled stratified subset (fraction of the manifest),
// then assigns every manifest sample. Deterministic given seed.
Codebook build_codebook(const Manifest& manifest, const EmbeddingStore& store,
                        std::uint32_t k = 500, double subset_fraction = 0.03,
                        std::uint64_t seed = 0);

// File format: one text header line "K d seed iterations", then K*d f32
// little-endian centroid values, then one "id<TAB>cluster" line per sample.
void save_codebook(const Codebook& cb, const std::string& path);
Codebook load_codebook(const std::string& path);

}  // namespace audioplan
