#include "dtr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "dtr/errors.hpp"

namespace dtr {
namespace {

constexpr char kMagic[4] = {'D', 'T', 'R', 'T'};

template <typename T>
T ToLittle(T value) {
  if constexpr (std::endian::native == std::endian::little) {
    return value;
  } else {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) {
      std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }
}

template <typename T>
void Put(std::ostream& out, T value) {
  value = ToLittle(value);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

class Reader {
 public:
  Reader(std::istream& in, const std::filesystem::path& path) : in_(in), path_(path) {}

  template <typename T>
  T Get(const char* what) {
    T value;
    in_.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (in_.gcount() != static_cast<std::streamsize>(sizeof(T))) Fail(what);
    return ToLittle(value);
  }

  void Bytes(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n)) Fail(what);
  }

  bool AtEnd() { return in_.peek() == std::char_traits<char>::eof(); }

  [[noreturn]] void Fail(const char* what) {
    throw ParseError("checkpoint " + path_.string() + ": truncated while reading " + what,
                     0);
  }

 private:
  std::istream& in_;
  const std::filesystem::path& path_;
};

}  // namespace

void SaveCheckpoint(const std::filesystem::path& path, const ParameterList& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArtifactError("cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof(kMagic));
  Put<std::uint32_t>(out, kCheckpointVersion);
  for (const auto& p : params) {
    Put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    Put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t extent : p.tensor.shape()) Put<std::uint64_t>(out, extent);
    for (double v : p.tensor.data()) Put<double>(out, v);
  }
  if (!out) throw ArtifactError("failed writing " + path.string());
}

std::vector<CheckpointRecord> ReadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open checkpoint " + path.string());
  Reader reader(in, path);
  char magic[4];
  reader.Bytes(magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError("checkpoint " + path.string() + ": bad magic bytes", 0);
  }
  auto version = reader.Get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw ParseError("checkpoint " + path.string() + ": unsupported version " +
                         std::to_string(version),
                     0);
  }
  std::vector<CheckpointRecord> records;
  while (!reader.AtEnd()) {
    CheckpointRecord record;
    auto name_length = reader.Get<std::uint32_t>("name length");
    record.name.resize(name_length);
    reader.Bytes(record.name.data(), name_length, "name");
    auto rank = reader.Get<std::uint32_t>("rank");
    for (std::uint32_t i = 0; i < rank; ++i) {
      record.shape.push_back(static_cast<std::size_t>(reader.Get<std::uint64_t>("extent")));
    }
    record.values.resize(NumElements(record.shape));
    for (double& v : record.values) v = reader.Get<double>("payload");
    records.push_back(std::move(record));
  }
  return records;
}

void LoadCheckpoint(const std::filesystem::path& path, ParameterList& params) {
  std::map<std::string, CheckpointRecord> by_name;
  for (auto& record : ReadCheckpoint(path)) {
    std::string name = record.name;
    by_name.emplace(std::move(name), std::move(record));
  }
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      throw ArtifactError("checkpoint " + path.string() + " has no parameter " + p.name);
    }
    if (it->second.shape != p.tensor.shape()) {
      throw ShapeError("checkpoint parameter " + p.name + " has shape " +
                       ShapeToString(it->second.shape) + ", expected " +
                       ShapeToString(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    std::copy(it->second.values.begin(), it->second.values.end(), dst.begin());
  }
}

}  // namespace dtr
