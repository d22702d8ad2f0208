#include "vmfnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace vmfnet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'V', 'M', 'F', 'N', 'E', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void write_pod(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U read_pod(std::istream& is, const std::filesystem::path& path) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U)))
    throw IoError("checkpoint truncated: " + path.string());
  return v;
}

}  // namespace

const TensorRecord* CheckpointData::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  // write to a temp file then rename so readers never observe a partial file
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + tmp.string());
    os.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(os, kVersion);
    write_pod<std::uint64_t>(os, data.metadata.size());
    os.write(data.metadata.data(), static_cast<std::streamsize>(data.metadata.size()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(data.tensors.size()));
    for (const auto& t : data.tensors) {
      write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
      os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
      write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(t.dtype));
      write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(t.shape.size()));
      for (int d : t.shape) write_pod<std::int32_t>(os, d);
      write_pod<std::uint64_t>(os, t.raw.size());
      os.write(reinterpret_cast<const char*>(t.raw.data()), static_cast<std::streamsize>(t.raw.size()));
    }
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("not a checkpoint file: " + path.string());
  CheckpointData data;
  data.version = read_pod<std::uint32_t>(is, path);
  if (data.version != kVersion)
    throw FormatVersionError("unsupported checkpoint version " + std::to_string(data.version) +
                             " in " + path.string());
  const auto meta_len = read_pod<std::uint64_t>(is, path);
  data.metadata.resize(meta_len);
  if (!is.read(data.metadata.data(), static_cast<std::streamsize>(meta_len)))
    throw IoError("checkpoint truncated: " + path.string());
  const auto count = read_pod<std::uint32_t>(is, path);
  data.tensors.resize(count);
  for (auto& t : data.tensors) {
    const auto name_len = read_pod<std::uint32_t>(is, path);
    t.name.resize(name_len);
    if (!is.read(t.name.data(), name_len)) throw IoError("checkpoint truncated: " + path.string());
    t.dtype = static_cast<char>(read_pod<std::uint8_t>(is, path));
    const auto ndim = read_pod<std::uint8_t>(is, path);
    t.shape.resize(ndim);
    for (auto& d : t.shape) d = read_pod<std::int32_t>(is, path);
    const auto bytes = read_pod<std::uint64_t>(is, path);
    t.raw.resize(bytes);
    if (!is.read(reinterpret_cast<char*>(t.raw.data()), static_cast<std::streamsize>(bytes)))
      throw IoError("checkpoint truncated: " + path.string());
  }
  return data;
}

template <typename T>
TensorRecord to_record(const std::string& name, const Tensor<T>& t) {
  TensorRecord rec;
  rec.name = name;
  rec.dtype = sizeof(T) == 4 ? 'f' : 'd';
  rec.shape = t.shape;
  rec.raw.resize(t.numel() * sizeof(T));
  std::memcpy(rec.raw.data(), t.ptr(), rec.raw.size());
  return rec;
}

template <typename T>
Tensor<T> from_record(const TensorRecord& rec) {
  const char want = sizeof(T) == 4 ? 'f' : 'd';
  if (rec.dtype != want)
    throw IoError("tensor '" + rec.name + "' has dtype '" + std::string(1, rec.dtype) +
                  "', expected '" + std::string(1, want) + "'");
  Tensor<T> t(rec.shape);
  if (rec.raw.size() != t.numel() * sizeof(T))
    throw IoError("tensor '" + rec.name + "' payload size mismatch");
  std::memcpy(t.ptr(), rec.raw.data(), rec.raw.size());
  return t;
}

template TensorRecord to_record<float>(const std::string&, const Tensor<float>&);
template TensorRecord to_record<double>(const std::string&, const Tensor<double>&);
template Tensor<float> from_record<float>(const TensorRecord&);
template Tensor<double> from_record<double>(const TensorRecord&);

}  // namespace vmfnet
