#include "fmtx/checkpoint.hpp"

#include <cstring>
#include <stdexcept>

#include "fmtx/config.hpp"

namespace fmtx::ckpt {

namespace {

void put_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t get_u32(const std::string& s, size_t& pos) {
  if (pos + 4 > s.size()) throw std::runtime_error("checkpoint: truncated u32");
  uint32_t v = static_cast<uint8_t>(s[pos]) |
               (static_cast<uint32_t>(static_cast<uint8_t>(s[pos + 1])) << 8) |
               (static_cast<uint32_t>(static_cast<uint8_t>(s[pos + 2])) << 16) |
               (static_cast<uint32_t>(static_cast<uint8_t>(s[pos + 3])) << 24);
  pos += 4;
  return v;
}

void put_f32(std::string& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

float get_f32(const std::string& s, size_t& pos) {
  uint32_t bits = get_u32(s, pos);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace

std::string to_bytes(const Blobs& blobs) {
  std::string out = "FMTX";
  put_u32(out, kFormatVersion);
  for (const auto& [name, blob] : blobs) {
    long n = 1;
    for (long d : blob.shape) n *= d;
    if (n != static_cast<long>(blob.data.size()))
      throw std::invalid_argument("checkpoint: blob " + name + " shape/data mismatch");
    put_u32(out, static_cast<uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<uint32_t>(blob.shape.size()));
    for (long d : blob.shape) put_u32(out, static_cast<uint32_t>(d));
    for (float f : blob.data) put_f32(out, f);
  }
  return out;
}

Blobs from_bytes(const std::string& bytes) {
  if (bytes.size() < 8 || bytes.compare(0, 4, "FMTX") != 0)
    throw std::runtime_error("checkpoint: bad magic");
  size_t pos = 4;
  uint32_t version = get_u32(bytes, pos);
  if (version != kFormatVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  Blobs blobs;
  while (pos < bytes.size()) {
    uint32_t name_len = get_u32(bytes, pos);
    if (pos + name_len > bytes.size()) throw std::runtime_error("checkpoint: truncated name");
    std::string name = bytes.substr(pos, name_len);
    pos += name_len;
    uint32_t rank = get_u32(bytes, pos);
    TensorBlob blob;
    long n = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      long d = static_cast<long>(get_u32(bytes, pos));
      blob.shape.push_back(d);
      n *= d;
    }
    blob.data.reserve(n);
    for (long i = 0; i < n; ++i) blob.data.push_back(get_f32(bytes, pos));
    if (!blobs.emplace(std::move(name), std::move(blob)).second)
      throw std::runtime_error("checkpoint: duplicate tensor name");
  }
  return blobs;
}

void save(const std::string& path, const Blobs& blobs) {
  cfg::atomic_write_file(path, to_bytes(blobs));
}

Blobs load(const std::string& path) { return from_bytes(cfg::read_file(path)); }

TensorBlob string_blob(const std::string& s) {
  TensorBlob b;
  b.shape = {static_cast<long>(s.empty() ? 1 : s.size())};
  if (s.empty())
    b.data.push_back(0.0f);
  else
    for (unsigned char c : s) b.data.push_back(static_cast<float>(c));
  return b;
}

std::string blob_string(const TensorBlob& b) {
  std::string s;
  for (float f : b.data) {
    int c = static_cast<int>(f);
    if (c > 0) s.push_back(static_cast<char>(c));
  }
  return s;
}

}  // namespace fmtx::ckpt
