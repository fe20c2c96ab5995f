#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string_view>
#include <vector>

namespace dgsd {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Flat storage that Eigen maps into. 64-byte alignment makes the vectorised
/// reductions over every slice take the same path in every run.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

using MatrixXd = Mat<double>;
using VectorXd = Vec<double>;

/// Attended side. Encoded as Left=0, Right=1 in every file and tensor.
enum class Label : std::uint8_t { Left = 0, Right = 1 };

constexpr int label_index(Label l) { return static_cast<int>(l); }
constexpr Label label_from_index(int i) { return i == 0 ? Label::Left : Label::Right; }

constexpr std::string_view to_string(Label l) {
  return l == Label::Left ? "Left" : "Right";
}

}  // namespace dgsd
