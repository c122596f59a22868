#include "irep/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "irep/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "record container assumes a little-endian host");

namespace irep {

namespace {

constexpr char kMagic[4] = {'I', 'R', 'E', 'P'};

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("truncated record file: " + path);
  return v;
}

}  // namespace

long long Record::numel() const {
  long long n = 1;
  for (std::uint32_t d : dims) n *= d;
  return n;
}

void write_record_file(const std::string& path, const std::vector<Record>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kRecordFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  for (const Record& r : records) {
    if (r.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw DataError("record name too long: " + r.name);
    }
    if (r.dims.size() > 255) throw DataError("record rank too large: " + r.name);
    if (r.numel() != static_cast<long long>(r.values.size())) {
      throw DataError("record " + r.name + ": dims do not match value count");
    }
    put<std::uint16_t>(out, static_cast<std::uint16_t>(r.name.size()));
    out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put<std::uint8_t>(out, r.as_f32 ? 1 : 0);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(r.dims.size()));
    for (std::uint32_t d : r.dims) put<std::uint32_t>(out, d);
    if (r.as_f32) {
      for (double v : r.values) put<float>(out, static_cast<float>(v));
    } else {
      out.write(reinterpret_cast<const char*>(r.values.data()),
                static_cast<std::streamsize>(r.values.size() * sizeof(double)));
    }
  }
  if (!out) throw DataError("short write to file: " + path);
}

std::vector<Record> read_record_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("not an IREP record file: " + path);
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kRecordFormatVersion) {
    throw DataError("unsupported format version " + std::to_string(version) + " in " + path);
  }
  const auto count = get<std::uint32_t>(in, path);
  std::vector<Record> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Record r;
    const auto name_len = get<std::uint16_t>(in, path);
    r.name.resize(name_len);
    in.read(r.name.data(), name_len);
    if (!in) throw DataError("truncated record file: " + path);
    const auto dtype = get<std::uint8_t>(in, path);
    if (dtype > 1) throw DataError("record " + r.name + ": unknown dtype");
    r.as_f32 = dtype == 1;
    const auto ndim = get<std::uint8_t>(in, path);
    r.dims.resize(ndim);
    for (auto& d : r.dims) d = get<std::uint32_t>(in, path);
    const long long n = r.numel();
    if (n < 0 || n > (1LL << 32)) throw DataError("record " + r.name + ": absurd size");
    r.values.resize(static_cast<std::size_t>(n));
    if (r.as_f32) {
      for (auto& v : r.values) v = get<float>(in, path);
    } else {
      in.read(reinterpret_cast<char*>(r.values.data()),
              static_cast<std::streamsize>(r.values.size() * sizeof(double)));
      if (!in) throw DataError("truncated record file: " + path);
    }
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace irep
