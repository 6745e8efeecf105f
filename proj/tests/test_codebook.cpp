#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include <doctest.h>

#include "audioplan/codebook.hpp"
#include "test_helpers.hpp"

using namespace audioplan;
using namespace testutil;

namespace {

FrameEmbeddings frames_from(std::vector<std::vector<float>> rows) {
  FrameEmbeddings e;
  e.frames = static_cast<std::uint32_t>(rows.size());
  e.dim = static_cast<std::uint32_t>(rows.front().size());
  for (const auto& row : rows)
    e.data.insert(e.data.end(), row.begin(), row.end());
  return e;
}

// ---- independent oracles -------------------------------------------------

double oracle_sq_dist(const PooledVector& a, const PooledVector& b) {
  double d = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double diff = static_cast<double>(a[j]) - static_cast<double>(b[j]);
    d += diff * diff;
  }
  return d;
}

struct OracleFit {
  std::vector<PooledVector> centroids;
  std::vector<std::size_t> labels;
  double inertia = 0.0;
};

// Plain Lloyd from a random-point init, run to a fixed point; used with many
// restarts as the brute-force reference.
OracleFit oracle_lloyd_once(const std::vector<PooledVector>& pts,
                            std::size_t k, Rng& rng) {
  OracleFit fit;
  std::set<std::size_t> chosen;
  while (chosen.size() < k) chosen.insert(rng.below(pts.size()));
  for (std::size_t idx : chosen) fit.centroids.push_back(pts[idx]);
  fit.labels.assign(pts.size(), 0);
  for (int iter = 0; iter < 200; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = oracle_sq_dist(fit.centroids[c], pts[i]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (fit.labels[i] != best) changed = true;
      fit.labels[i] = best;
    }
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> mean(pts.front().size(), 0.0);
      std::size_t count = 0;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        if (fit.labels[i] != c) continue;
        for (std::size_t j = 0; j < mean.size(); ++j)
          mean[j] += static_cast<double>(pts[i][j]);
        ++count;
      }
      if (count == 0) continue;
      for (std::size_t j = 0; j < mean.size(); ++j)
        fit.centroids[c][j] = static_cast<float>(mean[j] / count);
    }
    if (!changed) break;
  }
  fit.inertia = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    fit.inertia += oracle_sq_dist(fit.centroids[fit.labels[i]], pts[i]);
  return fit;
}

OracleFit oracle_lloyd_best(const std::vector<PooledVector>& pts,
                            std::size_t k, int restarts, std::uint64_t seed) {
  Rng rng(seed);
  OracleFit best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    OracleFit fit = oracle_lloyd_once(pts, k, rng);
    if (fit.inertia < best.inertia) best = fit;
  }
  return best;
}

bool same_partition(const std::vector<std::size_t>& a,
                    const std::vector<std::size_t>& b) {
  if (a.size() != b.size()) return false;
  std::map<std::size_t, std::size_t> fwd, bwd;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto f = fwd.emplace(a[i], b[i]);
    if (!f.second && f.first->second != b[i]) return false;
    const auto g = bwd.emplace(b[i], a[i]);
    if (!g.second && g.first->second != a[i]) return false;
  }
  return true;
}

std::vector<PooledVector> blob_points(
    const std::vector<std::pair<double, double>>& centers,
    std::size_t per_blob, double sigma, std::uint64_t seed,
    std::vector<std::size_t>* truth = nullptr) {
  Rng rng(seed);
  std::vector<PooledVector> pts;
  for (std::size_t b = 0; b < centers.size(); ++b) {
    for (std::size_t i = 0; i < per_blob; ++i) {
      pts.push_back({static_cast<float>(centers[b].first + sigma * gauss(rng)),
                     static_cast<float>(centers[b].second +
                                        sigma * gauss(rng))});
      if (truth) truth->push_back(b);
    }
  }
  return pts;
}

}  // namespace

TEST_CASE("pool_max: single frame is the identity") {
  const auto e = frames_from({{1.0f, -2.0f, 0.5f}});
  CHECK(pool_max(e) == PooledVector{1.0f, -2.0f, 0.5f});
}

TEST_CASE("pool_max: coordinate-wise maximum") {
  const auto e = frames_from({{1.0f, 5.0f}, {3.0f, 2.0f}});
  CHECK(pool_max(e) == PooledVector{3.0f, 5.0f});
}

TEST_CASE("pool_max matches a per-column scan oracle on random input") {
  Rng rng(11);
  FrameEmbeddings e;
  e.frames = 50;
  e.dim = 8;
  for (std::size_t i = 0; i < 50u * 8u; ++i)
    e.data.push_back(static_cast<float>(gauss(rng)));
  const auto pooled = pool_max(e);
  for (std::uint32_t j = 0; j < e.dim; ++j) {
    float best = e.at(0, j);
    for (std::uint32_t t = 1; t < e.frames; ++t) best = std::max(best, e.at(t, j));
    CHECK(pooled[j] == best);
  }
}

TEST_CASE("pool_max is monotone in its inputs") {
  Rng rng(12);
  FrameEmbeddings e;
  e.frames = 10;
  e.dim = 4;
  for (std::size_t i = 0; i < 40; ++i)
    e.data.push_back(static_cast<float>(gauss(rng)));
  const auto before = pool_max(e);
  for (int trial = 0; trial < 20; ++trial) {
    FrameEmbeddings bumped = e;
    bumped.data[rng.below(bumped.data.size())] += 1.0f;
    const auto after = pool_max(bumped);
    for (std::uint32_t j = 0; j < e.dim; ++j) CHECK(after[j] >= before[j]);
  }
}

TEST_CASE("pool_max rejects non-finite entries") {
  auto e = frames_from({{1.0f, 2.0f}});
  e.data[1] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(pool_max(e), ValidationError);
}

TEST_CASE("kmeans: K equal to the point count gives zero inertia") {
  std::vector<PooledVector> pts = {{0, 0}, {1, 0}, {0, 1}, {5, 5}};
  const auto fit = kmeans(pts, 4, 3);
  CHECK(fit.inertia == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("kmeans: K=1 recovers the coordinate-wise mean") {
  Rng rng(5);
  std::vector<PooledVector> pts;
  for (int i = 0; i < 25; ++i)
    pts.push_back({static_cast<float>(gauss(rng)),
                   static_cast<float>(gauss(rng)),
                   static_cast<float>(gauss(rng))});
  const auto fit = kmeans(pts, 1, 3);
  for (std::size_t j = 0; j < 3; ++j) {
    double mean = 0.0;
    for (const auto& p : pts) mean += p[j];
    mean /= static_cast<double>(pts.size());
    CHECK(fit.centroids[j] == doctest::Approx(mean).epsilon(1e-9));
  }
}

TEST_CASE("kmeans recovers well-separated blobs like the restart oracle") {
  std::vector<std::size_t> truth;
  const auto pts =
      blob_points({{0, 0}, {8, 0}, {0, 8}}, 10, 0.5, 21, &truth);
  const auto fit = kmeans(pts, 3, 77);

  std::vector<std::size_t> labels;
  for (const auto& p : pts)
    labels.push_back(nearest_centroid(fit, PooledVector(p)));

  const auto oracle = oracle_lloyd_best(pts, 3, 100, 99);
  CHECK(same_partition(labels, oracle.labels));
  CHECK(same_partition(labels, truth));
  CHECK(fit.inertia ==
        doctest::Approx(oracle.inertia).epsilon(1e-9));
}

TEST_CASE("kmeans input validation") {
  std::vector<PooledVector> pts = {{0, 0}, {1, 1}};
  CHECK_THROWS_AS(kmeans(pts, 3, 0), ValidationError);
  pts.push_back({1, 2, 3});
  CHECK_THROWS_AS(kmeans(pts, 2, 0), ValidationError);
}

TEST_CASE("kmeans is deterministic given the seed") {
  const auto pts = blob_points({{0, 0}, {4, 4}}, 20, 1.0, 31);
  const auto a = kmeans(pts, 5, 123);
  const auto b = kmeans(pts, 5, 123);
  CHECK(a.centroids == b.centroids);
  CHECK(a.iterations == b.iterations);
  CHECK(a.inertia == b.inertia);
  const auto c = kmeans(pts, 5, 124);
  CHECK(a.centroids != c.centroids);
}

TEST_CASE("assign: exact centroid hit and tie-break to the lower index") {
  Codebook cb;
  cb.k = 8;
  cb.dim = 2;
  cb.centroids.assign(16, 50.0f);
  const auto set = [&](std::uint32_t c, float x, float y) {
    cb.centroids[c * 2] = x;
    cb.centroids[c * 2 + 1] = y;
  };
  set(7, 3.0f, 4.0f);
  CHECK(cb.assign(PooledVector{3.0f, 4.0f}) == 7);

  set(2, 1.0f, 0.0f);
  set(5, -1.0f, 0.0f);
  CHECK(cb.assign(PooledVector{0.0f, 0.0f}) == 2);  // equidistant from 2 and 5
  CHECK_THROWS_AS(cb.assign(PooledVector{1.0f}), ValidationError);
}

TEST_CASE("assign matches a brute-force distance table") {
  Rng rng(17);
  Codebook cb;
  cb.k = 10;
  cb.dim = 6;
  for (std::size_t i = 0; i < 60; ++i)
    cb.centroids.push_back(static_cast<float>(gauss(rng)));
  for (int trial = 0; trial < 200; ++trial) {
    PooledVector h;
    for (int j = 0; j < 6; ++j) h.push_back(static_cast<float>(gauss(rng)));
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_k = 0;
    for (std::uint32_t c = 0; c < cb.k; ++c) {
      double d = 0.0;
      for (std::uint32_t j = 0; j < cb.dim; ++j) {
        const double diff = static_cast<double>(cb.centroids[c * 6 + j]) -
                            static_cast<double>(h[j]);
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        best_k = c;
      }
    }
    CHECK(cb.assign(h) == best_k);
  }
}

TEST_CASE("every centroid is a fixed point of assignment") {
  const auto pts = blob_points({{0, 0}, {6, 1}, {-3, 5}}, 12, 0.8, 41);
  const auto fit = kmeans(pts, 3, 5);
  Codebook cb;
  cb.k = fit.k;
  cb.dim = fit.dim;
  for (double v : fit.centroids) cb.centroids.push_back(static_cast<float>(v));
  for (std::uint32_t c = 0; c < cb.k; ++c) {
    PooledVector h(cb.centroid(c).begin(), cb.centroid(c).end());
    CHECK(cb.assign(h) == c);
  }
}

namespace {

// Manifest + in-memory store over 2-D blob embeddings, one blob per task
// batch so the planted structure is known.
struct BlobWorld {
  Manifest manifest;
  MemoryEmbeddingStore store;
  std::map<std::string, std::size_t> truth;  // id -> blob
};

BlobWorld blob_world(std::size_t blobs, std::size_t per_blob,
                     std::uint64_t seed) {
  BlobWorld w;
  w.manifest.source_path = "<blobs>";
  Rng rng(seed);
  for (std::size_t b = 0; b < blobs; ++b) {
    const double cx = 20.0 * static_cast<double>(b % 2);
    const double cy = 20.0 * static_cast<double>(b / 2);
    for (std::size_t i = 0; i < per_blob; ++i) {
      const std::string id =
          "s" + std::to_string(b) + "_" + std::to_string(i);
      auto r = rec(id, Task::Asr, std::nullopt, Lang::Ar, 2.0, id);
      w.manifest.samples.push_back(r);
      w.truth[id] = b;
      FrameEmbeddings e;
      e.frames = 3;
      e.dim = 2;
      // max-pool of these frames stays inside the blob.
      for (int t = 0; t < 3; ++t) {
        e.data.push_back(static_cast<float>(cx + 0.3 * gauss(rng)));
        e.data.push_back(static_cast<float>(cy + 0.3 * gauss(rng)));
      }
      w.store.put(id, e);
    }
  }
  return w;
}

}  // namespace

TEST_CASE("build_codebook recovers planted blobs at full fraction") {
  auto w = blob_world(4, 15, 13);
  const auto cb = build_codebook(w.manifest, w.store, 4, 1.0, 7);
  CHECK(cb.fit_subset_size == w.manifest.size());

  std::vector<std::size_t> got, want;
  for (const auto& r : w.manifest.samples) {
    got.push_back(cb.assignment.at(r.id));
    want.push_back(w.truth.at(r.id));
  }
  CHECK(same_partition(got, want));
}

TEST_CASE("build_codebook records the stratified fit size") {
  SynthSpec spec;
  spec.asr = 10000;
  auto m = synth_manifest(spec);
  MemoryEmbeddingStore store;
  Rng rng(3);
  for (const auto& r : m.samples) {
    FrameEmbeddings e;
    e.frames = 1;
    e.dim = 2;
    e.data = {static_cast<float>(gauss(rng)), static_cast<float>(gauss(rng))};
    store.put(r.embedding_ref, e);
  }
  const auto cb = build_codebook(m, store, 16, 0.03, 1);
  CHECK(cb.fit_subset_size == 300);
  CHECK(cb.assignment.size() == m.size());
}

TEST_CASE("build_codebook: identical seeds give byte-identical files") {
  auto w = blob_world(3, 12, 29);
  TempDir dir;
  const auto a = build_codebook(w.manifest, w.store, 3, 1.0, 11);
  const auto b = build_codebook(w.manifest, w.store, 3, 1.0, 11);
  save_codebook(a, dir.file("a.cb"));
  save_codebook(b, dir.file("b.cb"));
  CHECK(read_file(dir.file("a.cb")) == read_file(dir.file("b.cb")));
}

TEST_CASE("build_codebook assignment covers exactly the manifest ids") {
  auto w = blob_world(2, 9, 59);
  const auto cb = build_codebook(w.manifest, w.store, 2, 1.0, 3);
  std::set<std::string> assigned;
  for (const auto& [id, cluster] : cb.assignment) {
    CHECK(cluster < cb.k);
    assigned.insert(id);
  }
  std::set<std::string> expected;
  for (const auto& r : w.manifest.samples) expected.insert(r.id);
  CHECK(assigned == expected);
}

TEST_CASE("build_codebook errors: missing embedding, subset smaller than K") {
  auto w = blob_world(2, 6, 61);
  MemoryEmbeddingStore empty;
  CHECK_THROWS_AS(build_codebook(w.manifest, empty, 2, 1.0, 1),
                  std::runtime_error);
  CHECK_THROWS_WITH_AS(build_codebook(w.manifest, w.store, 64, 1.0, 1),
                       doctest::Contains("subset"), ValidationError);
}

TEST_CASE("codebook save/load round-trip") {
  auto w = blob_world(3, 8, 83);
  const auto cb = build_codebook(w.manifest, w.store, 3, 1.0, 17);
  TempDir dir;
  const auto path = dir.file("cb.bin");
  save_codebook(cb, path);
  const auto loaded = load_codebook(path);
  CHECK(loaded.k == cb.k);
  CHECK(loaded.dim == cb.dim);
  CHECK(loaded.seed == cb.seed);
  CHECK(loaded.iterations == cb.iterations);
  CHECK(loaded.centroids == cb.centroids);
  CHECK(loaded.assignment == cb.assignment);
}

TEST_CASE("embedding file round-trip and truncation error") {
  TempDir dir;
  FrameEmbeddings e;
  e.frames = 2;
  e.dim = 3;
  e.data = {1.5f, -2.25f, 0.0f, 3.0f, 4.0f, -5.5f};
  const auto path = dir.file("x.bin");
  write_embedding_file(path, e);
  const auto back = read_embedding_file(path);
  CHECK(back.frames == e.frames);
  CHECK(back.dim == e.dim);
  CHECK(back.data == e.data);

  write_file(dir.file("trunc.bin"), read_file(path).substr(0, 10));
  CHECK_THROWS_AS(read_embedding_file(dir.file("trunc.bin")), ValidationError);
}
