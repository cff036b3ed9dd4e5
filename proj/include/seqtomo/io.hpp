#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace seqtomo::io {

// Binary matrix files share one little-endian header:
//   char magic[4]; uint32 version; uint64 rows; uint64 cols; uint64 nnz;
// Sparse ("STSP"): int64 row_ptr[rows + 1], int64 col[nnz], float64 value[nnz].
// Dense  ("STDM"): float64 value[rows * cols], column-major; nnz == rows * cols.
// Several dense blocks may follow each other in one file.
inline constexpr std::uint32_t kFormatVersion = 1;

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;

void write_sparse(const std::filesystem::path& path, const SparseRowMatrix& m);
SparseRowMatrix read_sparse(const std::filesystem::path& path);

void write_dense(std::ostream& out, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_dense(std::istream& in);

// Raw volumes: values in slice-major, then row-major pixel order, no header.
void write_raw_f32(const std::filesystem::path& path, const Eigen::MatrixXd& columns);
Eigen::MatrixXd read_raw_f32(const std::filesystem::path& path, long rows, long cols);
void write_raw_f64(const std::filesystem::path& path, const Eigen::MatrixXd& columns);
Eigen::MatrixXd read_raw_f64(const std::filesystem::path& path, long rows, long cols);
void write_raw_u8(const std::filesystem::path& path,
                  const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>& columns);
Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> read_raw_u8(
    const std::filesystem::path& path, long rows, long cols);

// Sidecar metadata: one "key = value" per line, written next to a data file as <file>.meta.
using Metadata = std::map<std::string, std::string>;
std::filesystem::path sidecar_path(const std::filesystem::path& data);
void write_sidecar(const std::filesystem::path& data, const Metadata& meta);
Metadata read_sidecar(const std::filesystem::path& data);

// 8-bit binary PGM of an n x n image, values mapped linearly from [lo, hi].
void write_pgm(const std::filesystem::path& path, const Eigen::Ref<const Eigen::VectorXd>& image,
               int n, double lo, double hi);

}  // namespace seqtomo::io
