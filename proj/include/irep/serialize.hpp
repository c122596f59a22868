#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace irep {

// One named tensor in the container: name, dims, values. Values are held as
// doubles in memory; records flagged as_f32 are stored (lossily) as floats.
struct Record {
  std::string name;
  std::vector<std::uint32_t> dims;
  bool as_f32 = false;
  std::vector<double> values;

  long long numel() const;
};

// Container layout (little-endian):
//   magic "IREP" | u32 format_version | u32 tensor_count
//   per record: u16 name_len | name bytes | u8 dtype (0=f64, 1=f32)
//               u8 ndim | u32 dims[ndim] | raw values
void write_record_file(const std::string& path, const std::vector<Record>& records);
std::vector<Record> read_record_file(const std::string& path);

constexpr std::uint32_t kRecordFormatVersion = 1;

}  // namespace irep
