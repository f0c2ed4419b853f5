#pragma once

// Discrete-action tokenization and the autoregressive (slow-system) loss.
//
// Vocabulary layout, also written into run manifests for checkpoint
// compatibility:
//   [0, bins)            uniform action bins over [-1, 1]
//   bins + 0             begin-of-action (BOA)
//   bins + 1             end-of-action (EOA, reserved)
//   bins + 2             pad (reserved)
//   [bins + 3, vocab)    instruction word ids

#include <vector>

#include "dsvla/tensor.hpp"

namespace dsvla {

struct ActionVocab {
  int bins = 256;
  int vocab_size = 300;

  int boa() const { return bins; }
  int eoa() const { return bins + 1; }
  int pad() const { return bins + 2; }
  int first_word() const { return bins + 3; }
  int word_slots() const { return vocab_size - first_word(); }
  double bin_width() const { return 2.0 / bins; }

  void validate() const;
};

// Per coordinate: id = floor((v + 1) / 2 * bins), with v = 1 clamped into
// the top bin. Rows are flattened row-major over (step, dim); the result
// length is H * action_dim.
std::vector<int> discretize(const ActionVocab& vocab,
                            const std::vector<double>& chunk);

// Inverse map to bin centers; rejects non-bin ids (specials included).
std::vector<double> detokenize(const ActionVocab& vocab,
                               const std::vector<int>& ids);

// Mean cross-entropy over exactly the action-token positions.
// `logit_rows[i]` is the logits row whose next-token target is `targets[i]`
// (teacher forcing, shift by one); prompt positions are never touched.
Tensor slow_loss(const Tensor& ar_logits, const std::vector<int>& logit_rows,
                 const std::vector<int>& targets);

}  // namespace dsvla
