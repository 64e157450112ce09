#include "efc/serialize.hpp"

#include <bit>
#include <cstdint>
#include <iomanip>

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

namespace efc {

namespace {
constexpr char kMatrixMagic[4] = {'E', 'F', 'C', 'M'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path, const char* field) {
  T v{};
  std::streampos at = in.tellg();
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in)
    throw DataError(path + ": truncated while reading " + field + " at byte offset " +
                    std::to_string(static_cast<long long>(at)));
  return v;
}
}  // namespace

void write_matrix(const std::string& path, const Mat& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.write(kMatrixMagic, 4);
  put(out, kVersion);
  put(out, static_cast<std::int64_t>(m.rows()));
  put(out, static_cast<std::int64_t>(m.cols()));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) put(out, m(r, c));
  if (!out) throw DataError("short write to " + path);
}

Mat read_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != std::string(kMatrixMagic, 4))
    throw DataError(path + ": bad magic at byte offset 0, expected EFCM");
  auto version = get<std::uint32_t>(in, path, "version");
  if (version != kVersion)
    throw DataError(path + ": unsupported version " + std::to_string(version) +
                    " at byte offset 4");
  auto rows = get<std::int64_t>(in, path, "rows");
  auto cols = get<std::int64_t>(in, path, "cols");
  if (rows < 0 || cols < 0)
    throw DataError(path + ": negative dimensions at byte offset 8");
  Mat m(rows, cols);
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = get<double>(in, path, "payload");
  return m;
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : out_(path), width_(header.size()) {
  if (!out_) throw DataError("cannot open " + path + " for writing");
  for (std::size_t i = 0; i < header.size(); ++i)
    out_ << header[i] << (i + 1 == header.size() ? "\n" : ",");
  out_ << std::setprecision(17);
}

void CsvWriter::row(const std::vector<double>& values) {
  require(values.size() == width_, "csv row width mismatch");
  for (std::size_t i = 0; i < values.size(); ++i)
    out_ << values[i] << (i + 1 == values.size() ? "\n" : ",");
}

}  // namespace efc
