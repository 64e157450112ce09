#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "efc/common.hpp"

namespace efc {

// Dense matrix file: "EFCM" magic, u32 version, i64 rows, i64 cols, then
// row-major little-endian f64 payload. Raises DataError naming the byte
// offset of the first malformed field.
void write_matrix(const std::string& path, const Mat& m);
Mat read_matrix(const std::string& path);

// Minimal CSV writer for timeline outputs.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header);
  void row(const std::vector<double>& values);

 private:
  std::ofstream out_;
  std::size_t width_;
};

}  // namespace efc
