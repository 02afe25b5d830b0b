#include "ctlm/tensor.hpp"

#include <algorithm>

#include "ctlm/error.hpp"

namespace ctlm {

SequenceBatch SequenceBatch::from_sequences(const std::vector<std::vector<TokenId>>& rows, TokenId pad) {
  if (rows.empty()) throw ContractError("cannot build a batch from zero sequences");
  SequenceBatch b;
  b.batch = static_cast<int>(rows.size());
  for (const auto& r : rows) b.width = std::max(b.width, static_cast<int>(r.size()));
  if (b.width == 0) throw ContractError("cannot build a batch from empty sequences");
  b.tokens.assign(static_cast<std::size_t>(b.batch) * b.width, pad);
  b.mask.assign(b.tokens.size(), 0);
  for (int i = 0; i < b.batch; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    const auto base = static_cast<std::size_t>(i) * b.width;
    std::copy(r.begin(), r.end(), b.tokens.begin() + static_cast<std::ptrdiff_t>(base));
    std::fill_n(b.mask.begin() + static_cast<std::ptrdiff_t>(base), r.size(), 1);
  }
  return b;
}

SequenceBatch SequenceBatch::inputs() const {
  if (width < 2) throw ContractError("batch rows need at least two tokens to form inputs and labels");
  SequenceBatch in;
  in.batch = batch;
  in.width = width - 1;
  in.tokens.reserve(static_cast<std::size_t>(batch) * in.width);
  in.mask.reserve(in.tokens.capacity());
  for (int b = 0; b < batch; ++b) {
    auto r = row(b);
    auto m = mask_row(b);
    in.tokens.insert(in.tokens.end(), r.begin(), r.end() - 1);
    in.mask.insert(in.mask.end(), m.begin(), m.end() - 1);
  }
  return in;
}

}  // namespace ctlm
