#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

/// Binary n-d array files.
///
/// Layout (little-endian):
///   "L96A" | u32 version | u32 element type (1 = f64) | u32 rank |
///   u64 dims[rank] | f64 payload in row-major order
namespace l96uq::io {

inline constexpr std::uint32_t kArrayVersion = 1;
inline constexpr std::uint32_t kTypeF64 = 1;

class ArrayFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Array {
  std::vector<std::uint64_t> dims;
  std::vector<double> data;

  std::uint64_t element_count() const;
};

std::string encode_array(const Array& a);
Array decode_array(const std::string& bytes, const std::string& origin = "<memory>");

void write_array(const std::filesystem::path& path, const Array& a);
Array read_array(const std::filesystem::path& path);

/// Column-per-sample matrix (dim x n) as a [n, dim] array and back.
Array from_columns(const Eigen::MatrixXd& m);
Eigen::MatrixXd to_columns(const Array& a);
Array from_vector(const Eigen::VectorXd& v);
Eigen::VectorXd to_vector(const Array& a);
Array from_indices(const std::vector<std::int64_t>& v);
std::vector<std::int64_t> to_indices(const Array& a);

void write_columns(const std::filesystem::path& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_columns(const std::filesystem::path& path);

/// Git blob id: SHA-1 of "blob <size>\0" followed by the content.
std::string git_blob_sha1(const std::string& content);
std::string git_blob_sha1_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);

}  // namespace l96uq::io
