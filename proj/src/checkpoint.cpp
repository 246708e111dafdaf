#include "psinvert/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "psinvert/error.hpp"

namespace psinvert {

namespace {

constexpr char kMagic[8] = {'P', 'S', 'I', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

std::int64_t element_count(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

}  // namespace

const NamedArray& Checkpoint::get(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw Error(ErrorKind::FileFormat, "checkpoint has no array named '" + name + "'");
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json index;
  index["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : ckpt.arrays) {
    if (element_count(a.shape) != static_cast<std::int64_t>(a.data.size())) {
      throw Error(ErrorKind::ShapeMismatch, "array '" + a.name + "' does not match its shape");
    }
    index["arrays"].push_back({{"name", a.name}, {"offset", offset}, {"shape", a.shape}});
    offset += a.data.size() * sizeof(double);
  }
  index["meta"] = nlohmann::json::parse(ckpt.meta_json);
  const std::string header = index.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t header_len = header.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& a : ckpt.arrays) {
    out.write(reinterpret_cast<const char*>(a.data.data()),
              static_cast<std::streamsize>(a.data.size() * sizeof(double)));
  }
  if (!out) throw Error(ErrorKind::FileFormat, "failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());
  char magic[8];
  std::uint64_t header_len = 0;
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorKind::FileFormat, path.string() + " is not a checkpoint");
  }
  if (!in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len)) || header_len > (1u << 30)) {
    throw Error(ErrorKind::FileFormat, "bad checkpoint header length");
  }
  std::string header(header_len, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(header_len))) {
    throw Error(ErrorKind::FileFormat, "truncated checkpoint header");
  }
  const std::streampos payload = in.tellg();

  Checkpoint ckpt;
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(header);
    ckpt.meta_json = index.value("meta", nlohmann::json::object()).dump();
    for (const auto& entry : index.at("arrays")) {
      NamedArray a;
      a.name = entry.at("name").get<std::string>();
      a.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const std::int64_t count = element_count(a.shape);
      if (count < 0) throw Error(ErrorKind::FileFormat, "negative array shape");
      a.data.resize(static_cast<std::size_t>(count));
      in.seekg(payload + static_cast<std::streamoff>(offset));
      if (!in.read(reinterpret_cast<char*>(a.data.data()),
                   static_cast<std::streamsize>(a.data.size() * sizeof(double)))) {
        throw Error(ErrorKind::FileFormat, "truncated checkpoint payload for '" + a.name + "'");
      }
      ckpt.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FileFormat, std::string("bad checkpoint index: ") + e.what());
  }
  return ckpt;
}

}  // namespace psinvert
