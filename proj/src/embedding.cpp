#include "audioplan/embedding.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "audioplan/manifest.hpp"

namespace audioplan {

PooledVector pool_max(const FrameEmbeddings& frames) {
  if (frames.frames == 0 || frames.dim == 0)
    throw ValidationError("pool_max: empty frame matrix");
  if (frames.data.size() !=
      static_cast<std::size_t>(frames.frames) * frames.dim)
    throw ValidationError("pool_max: data size does not match T*d");
  PooledVector h(frames.dim);
  for (std::uint32_t j = 0; j < frames.dim; ++j) h[j] = frames.at(0, j);
  for (std::uint32_t t = 0; t < frames.frames; ++t) {
    for (std::uint32_t j = 0; j < frames.dim; ++j) {
      const float v = frames.at(t, j);
      if (!std::isfinite(v))
        throw ValidationError("pool_max: non-finite entry at frame " +
                              std::to_string(t) + ", column " +
                              std::to_string(j));
      if (v > h[j]) h[j] = v;
    }
  }
  return h;
}

namespace {

std::uint32_t read_u32_le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_u32_le(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {
      static_cast<unsigned char>(v & 0xff),
      static_cast<unsigned char>((v >> 8) & 0xff),
      static_cast<unsigned char>((v >> 16) & 0xff),
      static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

float f32_from_le(const unsigned char* b) {
  const std::uint32_t u = static_cast<std::uint32_t>(b[0]) |
                          (static_cast<std::uint32_t>(b[1]) << 8) |
                          (static_cast<std::uint32_t>(b[2]) << 16) |
                          (static_cast<std::uint32_t>(b[3]) << 24);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

void f32_to_le(float f, unsigned char* b) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  b[0] = static_cast<unsigned char>(u & 0xff);
  b[1] = static_cast<unsigned char>((u >> 8) & 0xff);
  b[2] = static_cast<unsigned char>((u >> 16) & 0xff);
  b[3] = static_cast<unsigned char>((u >> 24) & 0xff);
}

}  // namespace

FrameEmbeddings read_embedding_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open embedding file: " + path);
  FrameEmbeddings e;
  e.frames = read_u32_le(in);
  e.dim = read_u32_le(in);
  if (!in) throw ValidationError(path + ": truncated embedding header");
  if (e.frames == 0 || e.dim == 0)
    throw ValidationError(path + ": embedding header has zero T or d");
  const std::size_t count = static_cast<std::size_t>(e.frames) * e.dim;
  std::vector<unsigned char> raw(count * 4);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw ValidationError(path + ": truncated embedding payload");
  e.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) e.data[i] = f32_from_le(&raw[i * 4]);
  return e;
}

void write_embedding_file(const std::string& path, const FrameEmbeddings& e) {
  if (e.data.size() != static_cast<std::size_t>(e.frames) * e.dim)
    throw ValidationError("write_embedding_file: data size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write embedding file: " + path);
  write_u32_le(out, e.frames);
  write_u32_le(out, e.dim);
  std::vector<unsigned char> raw(e.data.size() * 4);
  for (std::size_t i = 0; i < e.data.size(); ++i)
    f32_to_le(e.data[i], &raw[i * 4]);
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
}

FrameEmbeddings DirEmbeddingStore::load(const std::string& ref) const {
  const auto path = std::filesystem::path(root_) / ref;
  return read_embedding_file(path.string());
}

FrameEmbeddings MemoryEmbeddingStore::load(const std::string& ref) const {
  auto it = store_.find(ref);
  if (it == store_.end())
    throw std::runtime_error("missing embedding for ref '" + ref + "'");
  return it->second;
}

}  // namespace audioplan
