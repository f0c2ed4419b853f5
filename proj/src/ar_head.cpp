#include "dsvla/ar_head.hpp"

#include <cmath>

#include "dsvla/error.hpp"

namespace dsvla {

void ActionVocab::validate() const {
  if (bins < 2) throw ConfigError(cat("vocab: bins must be >= 2, got ", bins));
  if (vocab_size < bins + 3)
    throw ConfigError(cat("vocab: vocab_size ", vocab_size,
                          " too small for ", bins, " bins + 3 specials"));
}

std::vector<int> discretize(const ActionVocab& vocab,
                            const std::vector<double>& chunk) {
  std::vector<int> ids;
  ids.reserve(chunk.size());
  for (double v : chunk) {
    if (!std::isfinite(v) || v < -1.0 || v > 1.0)
      throw NumericError(cat("discretize: value ", v, " outside [-1, 1]"));
    int id = static_cast<int>(std::floor((v + 1.0) / 2.0 * vocab.bins));
    if (id >= vocab.bins) id = vocab.bins - 1;  // v == 1 maps to the top bin
    ids.push_back(id);
  }
  return ids;
}

std::vector<double> detokenize(const ActionVocab& vocab,
                               const std::vector<int>& ids) {
  std::vector<double> values;
  values.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= vocab.bins)
      throw NumericError(cat("detokenize: id ", id, " is not an action bin"));
    values.push_back(-1.0 + (2.0 * id + 1.0) / vocab.bins);
  }
  return values;
}

Tensor slow_loss(const Tensor& ar_logits, const std::vector<int>& logit_rows,
                 const std::vector<int>& targets) {
  if (logit_rows.empty())
    throw ShapeError("slow_loss: no action-token positions");
  if (logit_rows.size() != targets.size())
    throw ShapeError(cat("slow_loss: ", logit_rows.size(), " rows vs ",
                         targets.size(), " targets"));
  return ops::cross_entropy_rows(ar_logits, logit_rows, targets);
}

}  // namespace dsvla
