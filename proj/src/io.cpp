#include "seqtomo/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace seqtomo::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts need byte swapping");

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  return in;
}

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("unexpected end of binary file");
  return v;
}

struct Header {
  std::array<char, 4> magic;
  std::uint32_t version;
  std::uint64_t rows, cols, nnz;
};

void put_header(std::ostream& out, const char* magic, std::uint64_t rows, std::uint64_t cols,
                std::uint64_t nnz) {
  out.write(magic, 4);
  put<std::uint32_t>(out, kFormatVersion);
  put(out, rows);
  put(out, cols);
  put(out, nnz);
}

Header get_header(std::istream& in, const char* expected) {
  Header h{};
  in.read(h.magic.data(), 4);
  if (!in || std::memcmp(h.magic.data(), expected, 4) != 0)
    throw std::runtime_error(std::string("bad magic, expected ") + expected);
  h.version = get<std::uint32_t>(in);
  if (h.version != kFormatVersion)
    throw std::runtime_error("unsupported format version " + std::to_string(h.version));
  h.rows = get<std::uint64_t>(in);
  h.cols = get<std::uint64_t>(in);
  h.nnz = get<std::uint64_t>(in);
  return h;
}

template <class Out, class In>
void write_raw(const std::filesystem::path& path, const In& columns) {
  auto out = open_out(path);
  std::vector<Out> buf(columns.rows());
  for (Eigen::Index c = 0; c < columns.cols(); ++c) {
    for (Eigen::Index r = 0; r < columns.rows(); ++r) buf[r] = static_cast<Out>(columns(r, c));
    out.write(reinterpret_cast<const char*>(buf.data()), sizeof(Out) * buf.size());
  }
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

template <class Stored, class Result>
Result read_raw(const std::filesystem::path& path, long rows, long cols) {
  auto in = open_in(path);
  const auto expected = static_cast<std::uintmax_t>(rows) * cols * sizeof(Stored);
  if (std::filesystem::file_size(path) != expected)
    throw std::runtime_error("'" + path.string() + "' has size " +
                             std::to_string(std::filesystem::file_size(path)) + ", expected " +
                             std::to_string(expected));
  Result m(rows, cols);
  std::vector<Stored> buf(rows);
  for (long c = 0; c < cols; ++c) {
    in.read(reinterpret_cast<char*>(buf.data()), sizeof(Stored) * rows);
    for (long r = 0; r < rows; ++r) m(r, c) = static_cast<typename Result::Scalar>(buf[r]);
  }
  return m;
}

}  // namespace

void write_sparse(const std::filesystem::path& path, const SparseRowMatrix& m) {
  if (!m.isCompressed()) throw std::invalid_argument("write_sparse: matrix must be compressed");
  auto out = open_out(path);
  put_header(out, "STSP", m.rows(), m.cols(), m.nonZeros());
  for (Eigen::Index r = 0; r <= m.rows(); ++r) put<std::int64_t>(out, m.outerIndexPtr()[r]);
  for (Eigen::Index i = 0; i < m.nonZeros(); ++i) put<std::int64_t>(out, m.innerIndexPtr()[i]);
  for (Eigen::Index i = 0; i < m.nonZeros(); ++i) put<double>(out, m.valuePtr()[i]);
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

SparseRowMatrix read_sparse(const std::filesystem::path& path) {
  auto in = open_in(path);
  const Header h = get_header(in, "STSP");
  std::vector<std::int64_t> ptr(h.rows + 1), col(h.nnz);
  std::vector<double> val(h.nnz);
  in.read(reinterpret_cast<char*>(ptr.data()), sizeof(std::int64_t) * ptr.size());
  in.read(reinterpret_cast<char*>(col.data()), sizeof(std::int64_t) * col.size());
  in.read(reinterpret_cast<char*>(val.data()), sizeof(double) * val.size());
  if (!in) throw std::runtime_error("truncated sparse matrix file '" + path.string() + "'");
  if (ptr.front() != 0 || static_cast<std::uint64_t>(ptr.back()) != h.nnz)
    throw std::runtime_error("corrupt row pointer in '" + path.string() + "'");

  SparseRowMatrix m(static_cast<Eigen::Index>(h.rows), static_cast<Eigen::Index>(h.cols));
  Eigen::VectorXi sizes(h.rows);
  for (std::uint64_t r = 0; r < h.rows; ++r) sizes[r] = static_cast<int>(ptr[r + 1] - ptr[r]);
  m.reserve(sizes);
  for (std::uint64_t r = 0; r < h.rows; ++r)
    for (std::int64_t i = ptr[r]; i < ptr[r + 1]; ++i) {
      if (col[i] < 0 || static_cast<std::uint64_t>(col[i]) >= h.cols)
        throw std::runtime_error("column index out of range in '" + path.string() + "'");
      m.insert(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col[i])) = val[i];
    }
  m.makeCompressed();
  return m;
}

void write_dense(std::ostream& out, const Eigen::MatrixXd& m) {
  put_header(out, "STDM", m.rows(), m.cols(), static_cast<std::uint64_t>(m.size()));
  out.write(reinterpret_cast<const char*>(m.data()), sizeof(double) * m.size());
  if (!out) throw std::runtime_error("write_dense failed");
}

Eigen::MatrixXd read_dense(std::istream& in) {
  const Header h = get_header(in, "STDM");
  if (h.nnz != h.rows * h.cols) throw std::runtime_error("dense block: nnz != rows * cols");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(h.rows), static_cast<Eigen::Index>(h.cols));
  in.read(reinterpret_cast<char*>(m.data()), sizeof(double) * m.size());
  if (!in) throw std::runtime_error("truncated dense block");
  return m;
}

void write_raw_f32(const std::filesystem::path& path, const Eigen::MatrixXd& columns) {
  write_raw<float>(path, columns);
}

Eigen::MatrixXd read_raw_f32(const std::filesystem::path& path, long rows, long cols) {
  return read_raw<float, Eigen::MatrixXd>(path, rows, cols);
}

void write_raw_f64(const std::filesystem::path& path, const Eigen::MatrixXd& columns) {
  write_raw<double>(path, columns);
}

Eigen::MatrixXd read_raw_f64(const std::filesystem::path& path, long rows, long cols) {
  return read_raw<double, Eigen::MatrixXd>(path, rows, cols);
}

void write_raw_u8(const std::filesystem::path& path,
                  const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>& columns) {
  write_raw<std::uint8_t>(path, columns);
}

Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> read_raw_u8(
    const std::filesystem::path& path, long rows, long cols) {
  return read_raw<std::uint8_t, Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>>(
      path, rows, cols);
}

std::filesystem::path sidecar_path(const std::filesystem::path& data) {
  return std::filesystem::path(data.string() + ".meta");
}

void write_sidecar(const std::filesystem::path& data, const Metadata& meta) {
  std::ofstream out(sidecar_path(data));
  if (!out) throw std::runtime_error("cannot write sidecar for '" + data.string() + "'");
  for (const auto& [k, v] : meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw std::invalid_argument("sidecar: key/value '" + k + "' contains a separator");
    out << k << " = " << v << '\n';
  }
}

Metadata read_sidecar(const std::filesystem::path& data) {
  std::ifstream in(sidecar_path(data));
  if (!in) throw std::runtime_error("missing sidecar '" + sidecar_path(data).string() + "'");
  Metadata meta;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    meta[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return meta;
}

void write_pgm(const std::filesystem::path& path, const Eigen::Ref<const Eigen::VectorXd>& image,
               int n, double lo, double hi) {
  if (image.size() != static_cast<Eigen::Index>(n) * n)
    throw std::invalid_argument("write_pgm: image size does not match n * n");
  auto out = open_out(path);
  out << "P5\n" << n << ' ' << n << "\n255\n";
  const double span = hi > lo ? hi - lo : 1.0;
  std::vector<unsigned char> px(image.size());
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    const double v = std::clamp((image[i] - lo) / span, 0.0, 1.0);
    px[i] = static_cast<unsigned char>(std::lround(255.0 * v));
  }
  out.write(reinterpret_cast<const char*>(px.data()), px.size());
}

}  // namespace seqtomo::io
