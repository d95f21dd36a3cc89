#pragma once

#include "otcf/otcf.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

namespace otcf::test_util {

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("otcf_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  return p.string();
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Matrix random_normal(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& eng, double mean = 0.0,
                            double sd = 1.0) {
  std::normal_distribution<double> n(mean, sd);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(eng);
  return m;
}

/// B B^T with B of size k x (k + 2): a Wishart draw, almost surely SPD.
inline Eigen::MatrixXd random_spd(int k, std::mt19937_64& eng) {
  const Matrix b = random_normal(k, k + 2, eng);
  Eigen::MatrixXd m = b * b.transpose();
  return 0.5 * (m + m.transpose());
}

}  // namespace otcf::test_util

namespace tu = otcf::test_util;
