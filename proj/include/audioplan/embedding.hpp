#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace audioplan {

// Aligner hidden states for one sample: a frames x dim matrix, row-major.
struct FrameEmbeddings {
  std::uint32_t frames = 0;  // T >= 1
  std::uint32_t dim = 0;     // d >= 1
  std::vector<float> data;

  float at(std::uint32_t t, std::uint32_t j) const {
    return data[static_cast<std::size_t>(t) * dim + j];
  }
};

using PooledVector = std::vector<float>;

// Coordinate-wise max over the temporal dimension. Throws ValidationError on
// a non-finite entry.
PooledVector pool_max(const FrameEmbeddings& frames);

// Binary format: two little-endian u32 (T, d) followed by T*d little-endian
// IEEE-754 f32, row-major.
FrameEmbeddings read_embedding_file(const std::string& path);
void write_embedding_file(const std::string& path, const FrameEmbeddings& e);

// Resolves a manifest embedding_ref to its frame matrix.
class EmbeddingStore {
 public:
  virtual ~EmbeddingStore() = default;
  virtual FrameEmbeddings load(const std::string& ref) const = 0;
};

// embedding_ref is a path relative to a root directory.
class DirEmbeddingStore : public EmbeddingStore {
 public:
  explicit DirEmbeddingStore(std::string root) : root_(std::move(root)) {}
  FrameEmbeddings load(const std::string& ref) const override;

 private:
  std::string root_;
};

// In-memory store for tests and synthetic pipelines.
class MemoryEmbeddingStore : public EmbeddingStore {
 public:
  void put(const std::string& ref, FrameEmbeddings e) {
    store_[ref] = std::move(e);
  }
  FrameEmbeddings load(const std::string& ref) const override;

 private:
  std::map<std::string, FrameEmbeddings> store_;
};

}  // namespace audioplan
