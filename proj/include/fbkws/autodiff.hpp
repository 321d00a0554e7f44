#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace fbkws::ad {

// Dense real tensor, double precision throughout. Gradients live beside
// the values and are filled in by Tape::backward.
struct TensorData {
  std::vector<int> shape;
  std::vector<double> val;
  std::vector<double> grad;  // empty until needed; same size as val after
  bool requires_grad = false;
  std::string name;

  size_t numel() const {
    size_t n = 1;
    for (int d : shape) n *= size_t(d);
    return n;
  }
  void ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
  }
  void zero_grad() { grad.assign(val.size(), 0.0); }
  bool has_nan() const;
};

using Var = std::shared_ptr<TensorData>;

Var make_param(std::vector<int> shape, std::vector<double> vals,
               std::string name);
Var make_const(std::vector<int> shape, std::vector<double> vals);
Var make_scalar(double v, bool requires_grad = false,
                std::string name = {});

void zero_grads(const std::vector<Var>& params);

// Reverse-mode tape. One tape per forward pass, confined to one thread.
// backward() may be called once per forward; a second call without fresh
// recording throws.
class Tape {
 public:
  void record(std::function<void()> back) { back_.push_back(std::move(back)); }
  // Seeds d(loss)/d(loss)=1 and runs all recorded closures in reverse.
  // Gradients accumulate into each tensor's grad (callers zero beforehand).
  void backward(const Var& loss);
  size_t size() const { return back_.size(); }

 private:
  std::vector<std::function<void()>> back_;
  size_t consumed_ = 0;  // nodes already swept by a backward call
};

// --- elementwise / scalar ---
Var add(Tape& t, const Var& a, const Var& b);   // same shape or scalar operand
Var sub(Tape& t, const Var& a, const Var& b);
Var mul(Tape& t, const Var& a, const Var& b);   // same shape or scalar operand
Var neg(Tape& t, const Var& a);
Var add_scalar(Tape& t, const Var& a, double c);
Var mul_scalar(Tape& t, const Var& a, double c);
Var div_by(Tape& t, const Var& a, const Var& s);  // s scalar, elementwise a/s
Var relu(Tape& t, const Var& a);                  // d/dx at 0 is 0
Var clamp_min(Tape& t, const Var& a, double s);   // max(x, s); tie grad -> 1
Var vlog(Tape& t, const Var& a);
Var vexp(Tape& t, const Var& a);
Var vcos(Tape& t, const Var& a);
Var square(Tape& t, const Var& a);
// base^n with trainable scalar exponent n; base entries must be positive.
Var pow_vs(Tape& t, const Var& base, const Var& n);

// --- shape / reduction ---
Var slice1d(Tape& t, const Var& a, int start, int len);
Var concat1d(Tape& t, const std::vector<Var>& parts);
Var select(Tape& t, const Var& a, int index);  // scalar view of one element
Var sum_all(Tape& t, const Var& a);
Var mean_all(Tape& t, const Var& a);
Var reduce_max_abs(Tape& t, const Var& a);  // max_i |a_i|; grad to argmax
Var reshape(Tape& t, const Var& a, std::vector<int> shape);

// --- linear algebra / convolution ---
Var matmul(Tape& t, const Var& a, const Var& b);         // (m,k)x(k,n)
Var add_rowvec(Tape& t, const Var& m, const Var& v);     // (r,c) + (c,)
enum class ConvMode { kValid, kSame };
Var conv1d(Tape& t, const Var& x, const Var& k, ConvMode mode);
// X (B,L) constant or var, kernels: K vars of length Lk -> (B,K,L), "same"
// centered alignment.
Var conv1d_bank(Tape& t, const Var& x, const std::vector<Var>& kernels);
// x (B,C,H,W), w (OC,C,kh,kw), zero-padded "same" output, optional dilation.
Var conv2d(Tape& t, const Var& x, const Var& w, int dilation = 1);
Var mean_hw(Tape& t, const Var& x);  // (B,C,H,W) -> (B,C)
Var stack_maps(Tape& t, const std::vector<Var>& maps);  // n x (B,T,K) -> (B,n,T,K)

// --- normalization / loss ---
struct BatchNormState {
  int channels = 0;
  std::vector<double> running_mean, running_var;
  double momentum = 0.99;
  double eps = 1e-5;
  bool initialized = false;  // eval before any train step throws

  // Exact-statistics recalibration: with heavy momentum and only a handful
  // of updates per run, the running stats can lag the trained weights by
  // far more than the eval tolerance. begin_recalibration() arms
  // accumulation; every train-mode batchnorm call then also adds the raw
  // per-channel sums, and finalize_recalibration() replaces the running
  // stats with the exact statistics of everything seen in between.
  void begin_recalibration();
  void finalize_recalibration();
  bool accumulating = false;
  std::vector<double> acc_sum, acc_sumsq;
  double acc_count = 0.0;
};

enum class BNLayout { kChannelsLast, kNCHW };

// gamma/beta are (C,) parameters. Train mode normalizes by batch statistics
// and updates running stats; eval mode uses running stats.
Var batchnorm(Tape& t, const Var& x, const Var& gamma, const Var& beta,
              BatchNormState& state, BNLayout layout, bool train);

// Mean cross-entropy over the batch; logits (B,C), labels size B.
Var softmax_crossentropy(Tape& t, const Var& logits,
                         const std::vector<int>& labels);

// Frame-wise cochleagram energy: per (b,k), frames of M
// samples with the given hop; rect/hann modes compute M * sum_m w_m^2 x^2,
// maxpool takes M * (max_m |x|)^2. x is (B,K,L), result (B,T,K).
enum class CochleaMode { kParsevalRect, kParsevalHann, kMaxPool };
Var cochlea_energy(Tape& t, const Var& x, int frame_length, int hop,
                   CochleaMode mode);

// --- checkpoints ---
// Flat binary: magic "FBKW", u32 version, u32 count, then per tensor
// (u32 name_len, name, u32 rank, u32 dims..., float64 LE payload).
void save_checkpoint(const std::string& path, const std::vector<Var>& params);
// Loads by name into existing tensors; throws on missing name or shape
// mismatch.
void load_checkpoint(const std::string& path, const std::vector<Var>& params);

// --- gradient checking ---
struct GradCheckEntry {
  std::string param;
  int index = 0;
  double analytic = 0.0, numeric = 0.0, rel_err = 0.0;
  bool unreliable = false;  // non-smooth point detected; not a failure
  bool pass = false;
};
struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool passed = true;
};

// build_loss must rebuild the graph from the current parameter values and
// return a scalar. Central differences with the given step; entries whose
// two-step estimates disagree badly (kink at the sample point) are flagged
// unreliable and excused.
GradCheckReport grad_check(const std::function<Var(Tape&)>& build_loss,
                           const std::vector<Var>& params, double step,
                           double tolerance);

}  // namespace fbkws::ad
