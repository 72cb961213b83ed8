#include "nawr/loss.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

namespace nawr {

namespace {

std::atomic<uint64_t> g_ce_clamp_count{0};

constexpr double kProbFloor = 1e-12;

}  // namespace

LossWeight LossWeight::fixed(double alpha) {
  if (alpha <= 0.0) throw Error("loss weight: alpha must be positive");
  LossWeight w;
  w.mode = Mode::fixed;
  w.fixed_value = alpha;
  return w;
}

LossWeight LossWeight::trainable(double alpha_init) {
  if (alpha_init <= 0.0) throw Error("loss weight: alpha must be positive");
  LossWeight w;
  w.mode = Mode::trainable;
  w.rho.name = "loss.rho";
  w.rho.value = Tensor::scalar(softplus_inverse(alpha_init));
  return w;
}

double LossWeight::alpha_value() const {
  if (mode == Mode::fixed) return fixed_value;
  const double r = rho.value.item();
  return r > 0 ? r + std::log1p(std::exp(-r)) : std::log1p(std::exp(r));
}

double softplus_inverse(double y) {
  if (y <= 0.0) throw Error("softplus_inverse: argument must be positive");
  // ln(e^y - 1), stable for small y
  return y > 20.0 ? y : std::log(std::expm1(y));
}

int64_t ctc_min_frames(const std::vector<int>& target) {
  int64_t repeats = 0;
  for (size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++repeats;
  return static_cast<int64_t>(target.size()) + repeats;
}

Tensor ctc_loss(Tape& tape, const Tensor& log_probs, const std::vector<int>& target,
                int blank_id) {
  if (log_probs.rank() != 2)
    throw ShapeError("ctc_loss: expected [frames, vocab] log probabilities, got " +
                     shape_str(log_probs.shape));
  const int64_t frames = log_probs.shape[0];
  const int64_t vocab = log_probs.shape[1];
  for (int id : target) {
    if (id == blank_id) throw Error("ctc_loss: blank id in target");
    if (id < 0 || id >= vocab)
      throw Error("ctc_loss: target id " + std::to_string(id) + " outside vocab of " +
                  std::to_string(vocab));
  }
  const int64_t need = ctc_min_frames(target);
  if (frames < need)
    throw CtcInfeasibleError("ctc_loss: target of length " + std::to_string(target.size()) +
                             " needs " + std::to_string(need) + " frames, table has " +
                             std::to_string(frames));

  // blank-interleaved targets: blank, u1, blank, u2, ..., blank
  const auto u = static_cast<int64_t>(target.size());
  const int64_t ext = 2 * u + 1;
  auto ext_label = [&](int64_t s) {
    return s % 2 == 0 ? blank_id : target[static_cast<size_t>(s / 2)];
  };

  // per-frame rows sliced once; cells picked per extended state
  std::vector<Tensor> rows;
  rows.reserve(static_cast<size_t>(frames));
  for (int64_t t = 0; t < frames; ++t) rows.push_back(tape.slice_rows(log_probs, t, 1));
  auto emit = [&](int64_t t, int64_t s) {
    return tape.reshape(tape.slice_cols(rows[static_cast<size_t>(t)], ext_label(s), 1), {1});
  };

  // alpha cells outside the reachable band stay disengaged; all engaged
  // cells are finite so the tape never sees -inf
  std::vector<std::optional<Tensor>> prev(static_cast<size_t>(ext));
  std::vector<std::optional<Tensor>> cur(static_cast<size_t>(ext));
  prev[0] = emit(0, 0);
  if (ext > 1) prev[1] = emit(0, 1);

  for (int64_t t = 1; t < frames; ++t) {
    const int64_t lo = std::max<int64_t>(0, ext - 2 * (frames - t));
    const int64_t hi = std::min(2 * t + 1, ext - 1);
    std::fill(cur.begin(), cur.end(), std::nullopt);
    for (int64_t s = lo; s <= hi; ++s) {
      std::optional<Tensor> acc = prev[static_cast<size_t>(s)];
      if (s >= 1 && prev[static_cast<size_t>(s - 1)]) {
        const Tensor& p = *prev[static_cast<size_t>(s - 1)];
        acc = acc ? tape.logaddexp(*acc, p) : p;
      }
      if (s >= 2 && ext_label(s) != blank_id && ext_label(s) != ext_label(s - 2) &&
          prev[static_cast<size_t>(s - 2)]) {
        const Tensor& p = *prev[static_cast<size_t>(s - 2)];
        acc = acc ? tape.logaddexp(*acc, p) : p;
      }
      if (acc) cur[static_cast<size_t>(s)] = tape.add(*acc, emit(t, s));
    }
    std::swap(prev, cur);
  }

  std::optional<Tensor> total = prev[static_cast<size_t>(ext - 1)];
  if (ext > 1 && prev[static_cast<size_t>(ext - 2)]) {
    const Tensor& p = *prev[static_cast<size_t>(ext - 2)];
    total = total ? tape.logaddexp(*total, p) : p;
  }
  if (!total) throw CtcInfeasibleError("ctc_loss: no alignment reached the final state");
  return tape.scale(*total, -1.0);
}

Tensor cross_entropy(Tape& tape, const Tensor& probs, int label) {
  if (probs.numel() != 2)
    throw ShapeError("cross_entropy: expected 2 class probabilities, got " +
                     shape_str(probs.shape));
  if (label != 0 && label != 1) throw Error("cross_entropy: label must be 0 or 1");
  for (int64_t i = 0; i < 2; ++i) {
    if (!(probs.at(i) >= 0.0))
      throw Error("cross_entropy: negative or non-finite probability");
  }
  if (std::abs(probs.at(0) + probs.at(1) - 1.0) > 1e-6)
    throw Error("cross_entropy: probabilities do not sum to 1");
  if (probs.at(label) < kProbFloor) g_ce_clamp_count.fetch_add(1, std::memory_order_relaxed);

  Tensor flat = probs.rank() == 1 ? tape.reshape(probs, {1, 2}) : probs;
  if (flat.shape != Shape{1, 2})
    throw ShapeError("cross_entropy: expected shape [2] or [1,2], got " + shape_str(probs.shape));
  Tensor picked = tape.reshape(tape.slice_cols(flat, label, 1), {1});
  return tape.scale(tape.log(tape.clamp_min(picked, kProbFloor)), -1.0);
}

uint64_t cross_entropy_clamp_count() { return g_ce_clamp_count.load(); }
void reset_cross_entropy_clamp_count() { g_ce_clamp_count.store(0); }

LossBreakdown joint_loss(Tape& tape, const Tensor& l_ctc, const std::optional<Tensor>& l_ce,
                         const LossWeight& weight, const Tensor* rho_leaf) {
  if (!l_ctc.all_finite()) throw Error("joint_loss: non-finite transcription loss");
  if (l_ce && !l_ce->all_finite()) throw Error("joint_loss: non-finite classification loss");

  LossBreakdown out;
  out.l_ctc = l_ctc;
  out.l_ce = l_ce;
  out.alpha = weight.alpha_value();
  if (!l_ce) {
    out.l_total = l_ctc;
    return out;
  }
  if (weight.mode == LossWeight::Mode::fixed) {
    out.l_total = tape.add(l_ctc, tape.scale(*l_ce, weight.fixed_value));
  } else {
    if (rho_leaf == nullptr)
      throw Error("joint_loss: trainable weighting requires the bound rho");
    Tensor alpha = tape.softplus(*rho_leaf);
    out.l_total = tape.add(l_ctc, tape.mul(alpha, *l_ce));
  }
  return out;
}

}  // namespace nawr
