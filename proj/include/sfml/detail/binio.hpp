#pragma once

#include <Eigen/Core>

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "sfml/common.hpp"

// Little-endian binary primitives shared by the dataset, checkpoint and
// ensemble formats. Readers throw FormatError with the byte offset at which
// the stream failed.

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

namespace sfml::detail {

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

inline void write_bytes(std::ostream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

inline void write_f64_array(std::ostream& out, const double* data, std::size_t n) {
  write_bytes(out, data, n * sizeof(double));
}

inline void write_vec(std::ostream& out, const Eigen::VectorXd& v) {
  write_f64_array(out, v.data(), static_cast<std::size_t>(v.size()));
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  write_bytes(out, s.data(), s.size());
}

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  template <typename T>
  T pod(const char* what) {
    T value{};
    read(&value, sizeof(T), what);
    return value;
  }

  void read(void* data, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError(path_ + ": truncated while reading " + what +
                        " at byte offset " + std::to_string(offset_));
    }
    offset_ += n;
  }

  Eigen::VectorXd vec(std::size_t n, const char* what) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    read(v.data(), n * sizeof(double), what);
    return v;
  }

  std::string str(const char* what) {
    const auto n = pod<std::uint32_t>(what);
    if (n > (1u << 20)) {
      throw FormatError(path_ + ": implausible string length for " +
                        std::string(what) + " at byte offset " +
                        std::to_string(offset_));
    }
    std::string s(n, '\0');
    if (n > 0) read(s.data(), n, what);
    return s;
  }

  std::uint64_t offset() const { return offset_; }
  const std::string& path() const { return path_; }

  [[noreturn]] void fail(const std::string& message) const {
    throw FormatError(path_ + ": " + message + " at byte offset " +
                      std::to_string(offset_));
  }

 private:
  std::istream& in_;
  std::string path_;
  std::uint64_t offset_ = 0;
};

void write_box(std::ostream& out, const Box& box);
Box read_box(Reader& r, const char* what);

}  // namespace sfml::detail
