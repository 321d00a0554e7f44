#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "fbkws/autodiff.hpp"
#include "fbkws/data.hpp"
#include "fbkws/dsp.hpp"

namespace fbkws {

constexpr double kLogFloor = -50.0;  // log(eta), eta = e^-50

// Common interface for the two learnable front-ends: a batch of clips in,
// a (B,T,K) batch-normalized feature map out.
class Frontend {
 public:
  virtual ~Frontend() = default;
  virtual ad::Var forward(ad::Tape& tape,
                          const std::vector<const AudioClip*>& batch,
                          bool train) = 0;
  virtual std::vector<ad::Var> params() = 0;          // trainable tensors
  virtual int num_channels() const = 0;               // K
  virtual void set_trainable(bool trainable) = 0;
  virtual void export_csv(const std::string& dir,
                          const std::string& prefix) const = 0;
  // Normalization states, so the trainer can recalibrate running statistics.
  virtual std::vector<ad::BatchNormState*> bn_states() = 0;
};

// ------------------------------------------------------------- fbmatrix

// Power-spectral filterbank matrix front-end: log(max(X * relu(W), eta))
// followed by per-channel batch normalization.
class FilterbankMatrixFrontend : public Frontend {
 public:
  FilterbankMatrixFrontend(const ReferenceFilterbank& init, FramingConfig cfg);

  ad::Var forward(ad::Tape& tape, const std::vector<const AudioClip*>& batch,
                  bool train) override;
  // Same pipeline on precomputed spectrograms; exposed for oracle tests.
  ad::Var forward_spec(ad::Tape& tape,
                       const std::vector<const PowerSpectrogram*>& specs,
                       bool train);
  // Pre-batchnorm features, log(max(X relu(W), eta)).
  ad::Var forward_raw(ad::Tape& tape,
                      const std::vector<const PowerSpectrogram*>& specs);

  std::vector<ad::Var> params() override;
  int num_channels() const override { return K_; }
  void set_trainable(bool trainable) override;
  void export_csv(const std::string& dir,
                  const std::string& prefix) const override;

  ad::Var weights() { return W_; }
  void zero_channels(int first, int last);  // zero columns [first,last], 1-based
  const std::vector<double>& center_freqs() const { return center_freqs_; }
  const PowerSpectrogram& spectrogram(const AudioClip& clip);  // cached

  ad::BatchNormState& bn_state() { return bn_state_; }
  std::vector<ad::BatchNormState*> bn_states() override { return {&bn_state_}; }
  std::vector<ad::Var> all_tensors();  // params + bn affine, for checkpoints

 private:
  FramingConfig cfg_;
  int K_;
  ad::Var W_, bn_gamma_, bn_beta_;
  ad::BatchNormState bn_state_;
  std::vector<double> center_freqs_;
  std::map<const AudioClip*, PowerSpectrogram> spec_cache_;
};

// ------------------------------------------------------------ gammachirp

struct GammachirpParams {
  // Raw (trainable) storage; effective values go through the constraint
  // activations: a_k = relu(a), b = relu(b_raw), n = max(n_raw, 1),
  // f_k = relu(f_norm_k) * f_s/2, ERB_k = relu(erb_norm_k) * f_s/2.
  ad::Var gains;      // (K,)
  ad::Var n_raw;      // scalar
  ad::Var b_raw;      // scalar
  ad::Var c;          // scalar chirp, unconstrained; 0 recovers the gammatone
  ad::Var f_norm;     // (K,) center frequencies normalized by f_s/2
  ad::Var erb_norm;   // (K,) ERBs normalized by f_s/2
  int kernel_length = 2048;
  bool c_trainable = true;       // GT regimes pin c = 0
  bool normalize_kernels = true; // per-forward max-abs normalization

  std::vector<double> effective_centers(int sample_rate) const;
  std::vector<double> effective_erbs(int sample_rate) const;
  double effective_n() const;
  double effective_b() const;
};

enum class ParamInit { kConstant, kRandom };

// Constant init: n=4, b=1.019, c=-1, a_k=1; random init draws
// n~U(3,5), b~U(0.8,1.2), c~U(-2,0). Center frequencies on the chosen
// scale over (0, f_s/2); ERBs from erb(f_k). Both normalized by f_s/2.
GammachirpParams init_gammachirp(FilterScale scale, ParamInit init, int K,
                                 int sample_rate, std::mt19937_64& rng);

// One channel's impulse response g_c(t,k), sampled at t=(i+1)/f_s,
// max-abs normalized (when enabled) and scaled by relu(a_k).
ad::Var gammachirp_impulse(ad::Tape& tape, const GammachirpParams& p, int k,
                           int sample_rate);

class GammachirpFrontend : public Frontend {
 public:
  GammachirpFrontend(GammachirpParams params, FramingConfig cfg,
                     ad::CochleaMode mode = ad::CochleaMode::kParsevalRect);

  ad::Var forward(ad::Tape& tape, const std::vector<const AudioClip*>& batch,
                  bool train) override;
  // Pre-batchnorm cochleagram features for a raw signal batch (B rows).
  ad::Var forward_raw(ad::Tape& tape, const std::vector<const double*>& signals,
                      int length);

  std::vector<ad::Var> params() override;
  int num_channels() const override { return K_; }
  void set_trainable(bool trainable) override;
  void export_csv(const std::string& dir,
                  const std::string& prefix) const override;

  GammachirpParams& gc_params() { return params_; }
  ad::BatchNormState& bn_state() { return bn_state_; }
  std::vector<ad::BatchNormState*> bn_states() override { return {&bn_state_}; }
  std::vector<ad::Var> all_tensors();

 private:
  GammachirpParams params_;
  FramingConfig cfg_;
  ad::CochleaMode mode_;
  int K_;
  ad::Var bn_gamma_, bn_beta_;
  ad::BatchNormState bn_state_;
};

// Two front-ends stacked as input channels for the back-end stem.
class FusionFrontend : public Frontend {
 public:
  FusionFrontend(std::shared_ptr<Frontend> a, std::shared_ptr<Frontend> b)
      : a_(std::move(a)), b_(std::move(b)) {}
  ad::Var forward(ad::Tape& tape, const std::vector<const AudioClip*>& batch,
                  bool train) override;  // (B,2,T,K)
  std::vector<ad::Var> params() override;
  int num_channels() const override { return a_->num_channels(); }
  void set_trainable(bool trainable) override {
    a_->set_trainable(trainable);
    b_->set_trainable(trainable);
  }
  void export_csv(const std::string& dir,
                  const std::string& prefix) const override;
  std::vector<ad::BatchNormState*> bn_states() override {
    auto states = a_->bn_states();
    for (auto* s : b_->bn_states()) states.push_back(s);
    return states;
  }
  Frontend& first() { return *a_; }
  Frontend& second() { return *b_; }

 private:
  std::shared_ptr<Frontend> a_, b_;
};

// K center frequencies equally spaced on the given scale over (0, f_s/2),
// shared by filterbank construction and gammachirp initialization.
std::vector<double> spaced_center_freqs(FilterScale scale, int K,
                                        int sample_rate);

}  // namespace fbkws
