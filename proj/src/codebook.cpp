#include "audioplan/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "audioplan/rng.hpp"

namespace audioplan {

namespace {

double sq_dist(std::span<const double> a, const PooledVector& b) {
  double d = 0.0;
  for (std::size_t j = 0; j < b.size(); ++j) {
    const double diff = a[j] - static_cast<double>(b[j]);
    d += diff * diff;
  }
  return d;
}

struct AssignPass {
  std::vector<std::uint32_t> labels;
  std::vector<double> dist2;  // to the assigned centroid
  double inertia = 0.0;
};

AssignPass assign_all(const std::vector<PooledVector>& vectors,
                      const KMeansResult& fit) {
  AssignPass pass;
  pass.labels.resize(vectors.size());
  pass.dist2.resize(vectors.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_k = 0;
    for (std::uint32_t c = 0; c < fit.k; ++c) {
      const double d = sq_dist(fit.centroid(c), vectors[i]);
      if (d < best) {
        best = d;
        best_k = c;
      }
    }
    pass.labels[i] = best_k;
    pass.dist2[i] = best;
    pass.inertia += best;
  }
  return pass;
}

void validate_vectors(const std::vector<PooledVector>& vectors,
                      std::uint32_t k) {
  if (k == 0) throw ValidationError("kmeans: K must be >= 1");
  if (vectors.size() < k)
    throw ValidationError("kmeans: " + std::to_string(vectors.size()) +
                          " vectors for K=" + std::to_string(k) +
                          " clusters; need at least K");
  const std::size_t dim = vectors.front().size();
  if (dim == 0) throw ValidationError("kmeans: zero-dimensional vectors");
  for (const auto& v : vectors) {
    if (v.size() != dim)
      throw ValidationError("kmeans: vector dimension mismatch (" +
                            std::to_string(v.size()) + " vs " +
                            std::to_string(dim) + ")");
    for (float x : v)
      if (!std::isfinite(x))
        throw ValidationError("kmeans: non-finite input entry");
  }
}

void seed_plus_plus(const std::vector<PooledVector>& vectors,
                    KMeansResult& fit, Rng& rng) {
  const std::size_t n = vectors.size();
  const std::size_t dim = fit.dim;
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::size_t first = static_cast<std::size_t>(rng.below(n));
  for (std::uint32_t c = 0; c < fit.k; ++c) {
    std::size_t chosen = first;
    if (c > 0) {
      double total = 0.0;
      for (double d : min_d2) total += d;
      if (total > 0.0) {
        const double target = rng.unit() * total;
        double acc = 0.0;
        chosen = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          acc += min_d2[i];
          if (acc > target) {
            chosen = i;
            break;
          }
        }
      } else {
        chosen = static_cast<std::size_t>(rng.below(n));
      }
    }
    double* row = fit.centroids.data() + static_cast<std::size_t>(c) * dim;
    for (std::size_t j = 0; j < dim; ++j)
      row[j] = static_cast<double>(vectors[chosen][j]);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = sq_dist(fit.centroid(c), vectors[i]);
      if (d < min_d2[i]) min_d2[i] = d;
    }
  }
}

}  // namespace

KMeansResult kmeans(const std::vector<PooledVector>& vectors, std::uint32_t k,
                    std::uint64_t seed, std::uint32_t max_iters, double tol) {
  validate_vectors(vectors, k);
  const std::size_t n = vectors.size();
  const std::uint32_t dim = static_cast<std::uint32_t>(vectors.front().size());

  KMeansResult fit;
  fit.k = k;
  fit.dim = dim;
  fit.centroids.assign(static_cast<std::size_t>(k) * dim, 0.0);

  Rng rng(derive_seed(seed, kDomainKmeans));
  seed_plus_plus(vectors, fit, rng);

  double prev_inertia = std::numeric_limits<double>::infinity();
  for (std::uint32_t iter = 0; iter < max_iters; ++iter) {
    AssignPass pass = assign_all(vectors, fit);

    // Lloyd guarantees monotone inertia; tolerate only float noise.
    if (pass.inertia > prev_inertia * (1.0 + 1e-9) + 1e-12)
      throw std::logic_error("kmeans: inertia increased across iterations");
    prev_inertia = pass.inertia;

    std::vector<double> next(fit.centroids.size(), 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      double* row = next.data() +
                    static_cast<std::size_t>(pass.labels[i]) * dim;
      for (std::uint32_t j = 0; j < dim; ++j)
        row[j] += static_cast<double>(vectors[i][j]);
      ++counts[pass.labels[i]];
    }
    for (std::uint32_t c = 0; c < k; ++c) {
      double* row = next.data() + static_cast<std::size_t>(c) * dim;
      if (counts[c] > 0) {
        for (std::uint32_t j = 0; j < dim; ++j)
          row[j] /= static_cast<double>(counts[c]);
      }
    }

    // Re-seed empty clusters with the point currently farthest from its
    // centroid; each repaired cluster takes a distinct point.
    std::vector<bool> taken(n, false);
    for (std::uint32_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (taken[i]) continue;
        if (pass.dist2[i] > far_d) {
          far_d = pass.dist2[i];
          far = i;
        }
      }
      taken[far] = true;
      double* row = next.data() + static_cast<std::size_t>(c) * dim;
      for (std::uint32_t j = 0; j < dim; ++j)
        row[j] = static_cast<double>(vectors[far][j]);
    }

    double max_shift = 0.0;
    for (std::uint32_t c = 0; c < k; ++c) {
      const double* old_row =
          fit.centroids.data() + static_cast<std::size_t>(c) * dim;
      const double* new_row = next.data() + static_cast<std::size_t>(c) * dim;
      double delta2 = 0.0, norm2 = 0.0;
      for (std::uint32_t j = 0; j < dim; ++j) {
        const double d = new_row[j] - old_row[j];
        delta2 += d * d;
        norm2 += old_row[j] * old_row[j];
      }
      const double shift =
          std::sqrt(delta2) / std::max(std::sqrt(norm2), 1e-12);
      max_shift = std::max(max_shift, shift);
    }

    fit.centroids = std::move(next);
    fit.iterations = iter + 1;
    if (max_shift < tol) break;
  }

  fit.inertia = assign_all(vectors, fit).inertia;
  return fit;
}

namespace {

std::uint32_t nearest_row(const float* centroids, std::uint32_t k,
                          std::uint32_t dim, std::span<const float> h) {
  double best = std::numeric_limits<double>::infinity();
  std::uint32_t best_k = 0;
  for (std::uint32_t c = 0; c < k; ++c) {
    const float* row = centroids + static_cast<std::size_t>(c) * dim;
    double d = 0.0;
    for (std::uint32_t j = 0; j < dim; ++j) {
      const double diff =
          static_cast<double>(row[j]) - static_cast<double>(h[j]);
      d += diff * diff;
    }
    if (d < best) {
      best = d;
      best_k = c;
    }
  }
  return best_k;
}

}  // namespace

std::uint32_t nearest_centroid(const KMeansResult& fit,
                               std::span<const float> h) {
  if (h.size() != fit.dim)
    throw ValidationError("nearest_centroid: dimension mismatch");
  double best = std::numeric_limits<double>::infinity();
  std::uint32_t best_k = 0;
  for (std::uint32_t c = 0; c < fit.k; ++c) {
    const auto row = fit.centroid(c);
    double d = 0.0;
    for (std::uint32_t j = 0; j < fit.dim; ++j) {
      const double diff = row[j] - static_cast<double>(h[j]);
      d += diff * diff;
    }
    if (d < best) {
      best = d;
      best_k = c;
    }
  }
  return best_k;
}

std::uint32_t Codebook::assign(std::span<const float> h) const {
  if (h.size() != dim)
    throw ValidationError("Codebook::assign: dimension mismatch (" +
                          std::to_string(h.size()) + " vs " +
                          std::to_string(dim) + ")");
  return nearest_row(centroids.data(), k, dim, h);
}

Codebook build_codebook(const Manifest& manifest, const EmbeddingStore& store,
                        std::uint32_t k, double subset_fraction,
                        std::uint64_t seed) {
  const Manifest subset = stratified_subset(manifest, subset_fraction, seed);
  if (subset.size() < k) {
    std::ostringstream os;
    os << "build_codebook: stratified subset holds " << subset.size()
       << " samples but K=" << k
       << "; lower --k or raise --subset-fraction";
    throw ValidationError(os.str());
  }

  std::vector<PooledVector> pooled;
  pooled.reserve(subset.size());
  for (const auto& r : subset.samples)
    pooled.push_back(pool_max(store.load(r.embedding_ref)));

  const KMeansResult fit = kmeans(pooled, k, seed);

  Codebook cb;
  cb.k = fit.k;
  cb.dim = fit.dim;
  cb.seed = seed;
  cb.iterations = fit.iterations;
  cb.inertia = fit.inertia;
  cb.fit_subset_size = subset.size();
  cb.centroids.resize(fit.centroids.size());
  for (std::size_t i = 0; i < fit.centroids.size(); ++i)
    cb.centroids[i] = static_cast<float>(fit.centroids[i]);

  for (const auto& r : manifest.samples) {
    const PooledVector h = pool_max(store.load(r.embedding_ref));
    cb.assignment[r.id] = cb.assign(h);
  }
  return cb;
}

namespace {

void f32_to_le_bytes(float f, unsigned char* b) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  b[0] = static_cast<unsigned char>(u & 0xff);
  b[1] = static_cast<unsigned char>((u >> 8) & 0xff);
  b[2] = static_cast<unsigned char>((u >> 16) & 0xff);
  b[3] = static_cast<unsigned char>((u >> 24) & 0xff);
}

float f32_from_le_bytes(const unsigned char* b) {
  const std::uint32_t u = static_cast<std::uint32_t>(b[0]) |
                          (static_cast<std::uint32_t>(b[1]) << 8) |
                          (static_cast<std::uint32_t>(b[2]) << 16) |
                          (static_cast<std::uint32_t>(b[3]) << 24);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

}  // namespace

void save_codebook(const Codebook& cb, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write codebook file: " + path);
  out << cb.k << " " << cb.dim << " " << cb.seed << " " << cb.iterations
      << "\n";
  std::vector<unsigned char> raw(cb.centroids.size() * 4);
  for (std::size_t i = 0; i < cb.centroids.size(); ++i)
    f32_to_le_bytes(cb.centroids[i], &raw[i * 4]);
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
  for (const auto& [id, cluster] : cb.assignment)
    out << id << "\t" << cluster << "\n";
}

Codebook load_codebook(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open codebook file: " + path);
  Codebook cb;
  std::string header;
  if (!std::getline(in, header))
    throw ValidationError(path + ": missing codebook header");
  {
    std::istringstream hs(header);
    if (!(hs >> cb.k >> cb.dim >> cb.seed >> cb.iterations))
      throw ValidationError(path + ": malformed codebook header '" + header +
                            "'");
  }
  if (cb.k == 0 || cb.dim == 0)
    throw ValidationError(path + ": codebook header has zero K or d");
  const std::size_t count = static_cast<std::size_t>(cb.k) * cb.dim;
  std::vector<unsigned char> raw(count * 4);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw ValidationError(path + ": truncated centroid block");
  cb.centroids.resize(count);
  for (std::size_t i = 0; i < count; ++i)
    cb.centroids[i] = f32_from_le_bytes(&raw[i * 4]);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ValidationError(path + ": malformed assignment line '" + line +
                            "'");
    const std::string id = line.substr(0, tab);
    const std::uint32_t cluster =
        static_cast<std::uint32_t>(std::stoul(line.substr(tab + 1)));
    if (cluster >= cb.k)
      throw ValidationError(path + ": assignment for '" + id +
                            "' names cluster " + std::to_string(cluster) +
                            " >= K");
    if (!cb.assignment.emplace(id, cluster).second)
      throw ValidationError(path + ": duplicate assignment for '" + id + "'");
  }
  return cb;
}

}  // namespace audioplan
