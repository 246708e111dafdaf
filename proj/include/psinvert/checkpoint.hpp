#pragma once

// Parameter container: 8-byte magic "PSICKPT1", a little-endian uint64 header
// length, a UTF-8 JSON index
//   {"arrays": [{"name", "offset", "shape"}, ...], "meta": {...}}
// and then the payload of little-endian float64 values. Offsets are in bytes
// from the start of the payload.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace psinvert {

struct NamedArray {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<double> data;
};

struct Checkpoint {
  std::vector<NamedArray> arrays;
  std::string meta_json = "{}";

  /// Throws FileFormat if no array has this name.
  const NamedArray& get(const std::string& name) const;
};

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace psinvert
