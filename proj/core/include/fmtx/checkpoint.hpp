#pragma once

#include <map>
#include <string>
#include <vector>

namespace fmtx::ckpt {

// Versioned binary container: magic "FMTX", u32 format version, then named
// tensors as (u32 name length, name bytes, u32 rank, u32 dims, 32-bit
// little-endian floats) until end of file. Entries are written sorted by
// name, so identical contents serialize byte-identically.
inline constexpr uint32_t kFormatVersion = 1;

struct TensorBlob {
  std::vector<long> shape;
  std::vector<float> data;
};

using Blobs = std::map<std::string, TensorBlob>;

std::string to_bytes(const Blobs& blobs);
Blobs from_bytes(const std::string& bytes);

void save(const std::string& path, const Blobs& blobs);  // atomic (tmp+rename)
Blobs load(const std::string& path);

// Strings ride inside the container as codepoint arrays, used for
// provenance tags like the detector's training ISA.
TensorBlob string_blob(const std::string& s);
std::string blob_string(const TensorBlob& b);

}  // namespace fmtx::ckpt
