#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "nawr/tensor.hpp"

namespace nawr {

// Target needs more frames than the table provides; a corpus or config bug
// at this scale, so it is an error rather than an infinite loss.
class CtcInfeasibleError : public Error {
 public:
  explicit CtcInfeasibleError(const std::string& msg) : Error(msg) {}
};

// Weighting of the classification term. In trainable mode alpha is
// softplus(rho) so it stays positive throughout training.
struct LossWeight {
  enum class Mode { fixed, trainable };
  Mode mode = Mode::fixed;
  double fixed_value = 0.01;
  Parameter rho;  // trainable mode only

  static LossWeight fixed(double alpha);
  static LossWeight trainable(double alpha_init);
  double alpha_value() const;
};

double softplus_inverse(double y);

struct LossBreakdown {
  Tensor l_ctc;
  std::optional<Tensor> l_ce;
  Tensor l_total;
  double alpha = 0.0;

  double ctc() const { return l_ctc.item(); }
  double ce() const { return l_ce ? l_ce->item() : 0.0; }
  double total() const { return l_total.item(); }
};

// -log P(target | log_probs) via the blank-interleaved forward recursion in
// log space. Built from tape primitives so gradients flow to log_probs.
// Empty targets reduce to the all-blank path.
Tensor ctc_loss(Tape& tape, const Tensor& log_probs, const std::vector<int>& target,
                int blank_id = 0);

// Fewest frames that admit any alignment: |target| plus one per adjacent repeat.
int64_t ctc_min_frames(const std::vector<int>& target);

// -log probs[label]; probabilities below 1e-12 are clamped and counted.
Tensor cross_entropy(Tape& tape, const Tensor& probs, int label);
uint64_t cross_entropy_clamp_count();
void reset_cross_entropy_clamp_count();

// l_total = l_ctc + alpha * l_ce. rho_leaf must be the tape-bound rho when
// the weight is trainable and a CE term is present.
LossBreakdown joint_loss(Tape& tape, const Tensor& l_ctc, const std::optional<Tensor>& l_ce,
                         const LossWeight& weight, const Tensor* rho_leaf = nullptr);

}  // namespace nawr
