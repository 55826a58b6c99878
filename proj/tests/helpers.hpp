#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "eigmeta/matrix.hpp"

namespace testing {

inline eigmeta::Matrix gaussian_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    eigmeta::Matrix m(rows, cols);
    for (double& v : m.values()) v = normal(rng);
    return m;
}

inline eigmeta::Matrix random_symmetric(std::size_t n, std::mt19937_64& rng) {
    return eigmeta::symmetrize(gaussian_matrix(n, n, rng));
}

inline eigmeta::Matrix random_spd(std::size_t n, std::mt19937_64& rng) {
    const eigmeta::Matrix x = gaussian_matrix(n, n, rng);
    eigmeta::Matrix a = eigmeta::matmul_nt(x, x);
    for (std::size_t i = 0; i < n; ++i) a(i, i) += static_cast<double>(n);
    return eigmeta::symmetrize(a);
}

inline eigmeta::Matrix random_psd(std::size_t n, std::size_t rank, std::mt19937_64& rng) {
    const eigmeta::Matrix x = gaussian_matrix(n, rank, rng);
    return eigmeta::symmetrize(eigmeta::matmul_nt(x, x));
}

inline std::vector<double> random_unit(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) x = normal(rng);
    const double norm = eigmeta::norm2(v);
    for (double& x : v) x /= norm;
    return v;
}

// Fresh scratch directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("eigmeta_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline double max_abs_diff(const eigmeta::Matrix& a, const eigmeta::Matrix& b) {
    double out = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) out = std::max(out, std::abs(a[i] - b[i]));
    return out;
}

}  // namespace testing
