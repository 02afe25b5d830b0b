#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace ctlm {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

/// Flat float storage aligned for Eigen's vectorized kernels.
using FloatBuffer = std::vector<float, Eigen::aligned_allocator<float>>;

using TokenId = int;

/// Right-padded matrix of token ids with a per-position validity mask.
struct SequenceBatch {
  int batch = 0;
  int width = 0;
  std::vector<TokenId> tokens;       // batch * width, row-major
  std::vector<std::uint8_t> mask;    // 1 = real token, 0 = padding

  static SequenceBatch from_sequences(const std::vector<std::vector<TokenId>>& rows, TokenId pad);

  std::span<const TokenId> row(int b) const {
    return {tokens.data() + static_cast<std::ptrdiff_t>(b) * width, static_cast<std::size_t>(width)};
  }
  std::span<const std::uint8_t> mask_row(int b) const {
    return {mask.data() + static_cast<std::ptrdiff_t>(b) * width, static_cast<std::size_t>(width)};
  }
  /// The model inputs x_0..x_{T-2} of every row (drops the final column).
  SequenceBatch inputs() const;
};

}  // namespace ctlm
