#include "l96uq/array_file.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace l96uq::io {

namespace {

static_assert(std::endian::native == std::endian::little,
              "array files are written with the host byte order, which must be little-endian");

constexpr char kMagic[4] = {'L', '9', '6', 'A'};

template <class T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T get(const std::string& in, std::size_t& pos, const std::string& origin, const char* field) {
  if (in.size() - pos < sizeof(T)) {
    throw ArrayFileError(origin + ": truncated header while reading " + field);
  }
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

std::uint64_t Array::element_count() const {
  std::uint64_t n = 1;
  for (std::uint64_t d : dims) n *= d;
  return n;
}

std::string encode_array(const Array& a) {
  if (a.element_count() != a.data.size()) {
    throw ArrayFileError("encode_array: payload size does not match dims");
  }
  std::string out;
  out.reserve(16 + 8 * a.dims.size() + 8 * a.data.size());
  out.append(kMagic, 4);
  put<std::uint32_t>(out, kArrayVersion);
  put<std::uint32_t>(out, kTypeF64);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(a.dims.size()));
  for (std::uint64_t d : a.dims) put<std::uint64_t>(out, d);
  const std::size_t offset = out.size();
  out.resize(offset + 8 * a.data.size());
  if (!a.data.empty()) std::memcpy(out.data() + offset, a.data.data(), 8 * a.data.size());
  return out;
}

Array decode_array(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ArrayFileError(origin + ": bad magic (expected \"L96A\")");
  }
  std::size_t pos = 4;
  const auto version = get<std::uint32_t>(bytes, pos, origin, "version");
  if (version != kArrayVersion) {
    throw ArrayFileError(origin + ": unsupported format version " + std::to_string(version));
  }
  const auto type = get<std::uint32_t>(bytes, pos, origin, "element type");
  if (type != kTypeF64) {
    throw ArrayFileError(origin + ": unsupported element type tag " + std::to_string(type));
  }
  const auto rank = get<std::uint32_t>(bytes, pos, origin, "rank");
  if (rank > 32) throw ArrayFileError(origin + ": implausible rank " + std::to_string(rank));
  Array a;
  a.dims.resize(rank);
  std::uint64_t count = 1;
  for (std::uint32_t r = 0; r < rank; ++r) {
    a.dims[r] = get<std::uint64_t>(bytes, pos, origin, "dims");
    if (a.dims[r] != 0 && count > (std::uint64_t{1} << 60) / a.dims[r]) {
      throw ArrayFileError(origin + ": dims overflow");
    }
    count *= a.dims[r];
  }
  const std::size_t payload = bytes.size() - pos;
  if (payload != 8 * count) {
    throw ArrayFileError(origin + ": payload is " + std::to_string(payload) +
                         " bytes but dims require " + std::to_string(8 * count));
  }
  a.data.resize(count);
  if (count > 0) std::memcpy(a.data.data(), bytes.data() + pos, payload);
  return a;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArrayFileError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArrayFileError("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw ArrayFileError("write failed for " + path.string());
}

void write_array(const std::filesystem::path& path, const Array& a) {
  write_file(path, encode_array(a));
}

Array read_array(const std::filesystem::path& path) {
  return decode_array(read_file(path), path.string());
}

Array from_columns(const Eigen::MatrixXd& m) {
  Array a;
  a.dims = {static_cast<std::uint64_t>(m.cols()), static_cast<std::uint64_t>(m.rows())};
  a.data.assign(m.data(), m.data() + m.size());
  return a;
}

Eigen::MatrixXd to_columns(const Array& a) {
  if (a.dims.size() != 2) throw ArrayFileError("expected a rank-2 array");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(a.dims[1]), static_cast<Eigen::Index>(a.dims[0]));
  std::copy(a.data.begin(), a.data.end(), m.data());
  return m;
}

Array from_vector(const Eigen::VectorXd& v) {
  Array a;
  a.dims = {static_cast<std::uint64_t>(v.size())};
  a.data.assign(v.data(), v.data() + v.size());
  return a;
}

Eigen::VectorXd to_vector(const Array& a) {
  if (a.dims.size() != 1) throw ArrayFileError("expected a rank-1 array");
  return Eigen::Map<const Eigen::VectorXd>(a.data.data(), static_cast<Eigen::Index>(a.data.size()));
}

Array from_indices(const std::vector<std::int64_t>& v) {
  Array a;
  a.dims = {v.size()};
  a.data.reserve(v.size());
  for (std::int64_t x : v) a.data.push_back(static_cast<double>(x));
  return a;
}

std::vector<std::int64_t> to_indices(const Array& a) {
  if (a.dims.size() != 1) throw ArrayFileError("expected a rank-1 array");
  std::vector<std::int64_t> v;
  v.reserve(a.data.size());
  for (double x : a.data) {
    if (x != std::floor(x)) throw ArrayFileError("index array holds a non-integer value");
    v.push_back(static_cast<std::int64_t>(x));
  }
  return v;
}

void write_columns(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
  write_array(path, from_columns(m));
}

Eigen::MatrixXd read_columns(const std::filesystem::path& path) {
  return to_columns(read_array(path));
}

std::string git_blob_sha1(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                              &EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), content.data(), content.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw std::runtime_error("SHA-1 computation failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

std::string git_blob_sha1_file(const std::filesystem::path& path) {
  return git_blob_sha1(read_file(path));
}

}  // namespace l96uq::io
