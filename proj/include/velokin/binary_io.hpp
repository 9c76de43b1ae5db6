#pragma once

// Little helpers for the raw binary files (checkpoints, draw files). Values
// are written in host byte order; files are not meant to move between
// architectures.

#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

namespace velokin::binary {

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  template <typename T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }

  void put_string(const std::string& s) {
    put<std::uint64_t>(s.size());
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  template <typename T>
  void put_vector(const std::vector<T>& v) {
    put<std::uint64_t>(v.size());
    if (!v.empty()) {
      os_.write(reinterpret_cast<const char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(T)));
    }
  }

  template <typename Derived>
  void put_matrix(const Eigen::PlainObjectBase<Derived>& m) {
    put<std::int64_t>(m.rows());
    put<std::int64_t>(m.cols());
    if (m.size() > 0) {
      os_.write(reinterpret_cast<const char*>(m.data()),
                static_cast<std::streamsize>(m.size() * sizeof(typename Derived::Scalar)));
    }
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    T v;
    read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
  }

  std::string get_string() {
    const auto n = get<std::uint64_t>();
    check_size(n);
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

  template <typename T>
  std::vector<T> get_vector() {
    const auto n = get<std::uint64_t>();
    check_size(n * sizeof(T));
    std::vector<T> v(n);
    if (n > 0) read(reinterpret_cast<char*>(v.data()), n * sizeof(T));
    return v;
  }

  template <typename M>
  M get_matrix() {
    const auto rows = get<std::int64_t>();
    const auto cols = get<std::int64_t>();
    if (rows < 0 || cols < 0) throw std::runtime_error("corrupt binary file: negative shape");
    check_size(static_cast<std::uint64_t>(rows * cols) * sizeof(typename M::Scalar));
    M m(rows, cols);
    if (m.size() > 0) {
      read(reinterpret_cast<char*>(m.data()), m.size() * sizeof(typename M::Scalar));
    }
    return m;
  }

 private:
  void read(char* dst, std::uint64_t n) {
    is_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::uint64_t>(is_.gcount()) != n) {
      throw std::runtime_error("corrupt binary file: unexpected end of data");
    }
  }
  static void check_size(std::uint64_t n) {
    if (n > (std::uint64_t{1} << 40)) throw std::runtime_error("corrupt binary file: size field");
  }

  std::istream& is_;
};

}  // namespace velokin::binary
