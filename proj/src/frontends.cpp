#include "fbkws/frontends.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace fbkws {

namespace {
constexpr double kPi = std::numbers::pi;
constexpr double kEta = 1.928749847963918e-22;  // e^-50
}  // namespace

std::vector<double> spaced_center_freqs(FilterScale scale, int K,
                                        int sample_rate) {
  const double f_max = sample_rate / 2.0;
  std::vector<double> out(K);
  if (scale == FilterScale::kMel) {
    const double hi = hz_to_mel(f_max);
    for (int k = 0; k < K; ++k)
      out[k] = mel_to_hz(hi * (k + 1) / (K + 1));
  } else {
    for (int k = 0; k < K; ++k) out[k] = f_max * (k + 1) / (K + 1);
  }
  return out;
}

// ------------------------------------------------------------- fbmatrix

FilterbankMatrixFrontend::FilterbankMatrixFrontend(
    const ReferenceFilterbank& init, FramingConfig cfg)
    : cfg_(cfg), K_(init.K), center_freqs_(init.center_freqs) {
  if (init.F != cfg.num_bins())
    throw std::invalid_argument("filterbank F does not match framing config");
  W_ = ad::make_param({init.F, init.K}, init.weights, "frontend.W");
  bn_gamma_ = ad::make_param(std::vector<int>{K_},
                             std::vector<double>(K_, 1.0), "frontend.bn_gamma");
  bn_beta_ = ad::make_param(std::vector<int>{K_},
                            std::vector<double>(K_, 0.0), "frontend.bn_beta");
  bn_state_.channels = K_;
}

const PowerSpectrogram& FilterbankMatrixFrontend::spectrogram(
    const AudioClip& clip) {
  // Augmented (temporary) clips carry an empty rel_path and bypass the cache.
  if (clip.rel_path.empty()) {
    static thread_local PowerSpectrogram scratch;
    scratch = power_spectrogram(clip.samples, cfg_);
    return scratch;
  }
  auto it = spec_cache_.find(&clip);
  if (it == spec_cache_.end())
    it = spec_cache_.emplace(&clip, power_spectrogram(clip.samples, cfg_)).first;
  return it->second;
}

ad::Var FilterbankMatrixFrontend::forward_raw(
    ad::Tape& tape, const std::vector<const PowerSpectrogram*>& specs) {
  const int B = int(specs.size());
  if (B == 0) throw std::invalid_argument("empty batch");
  const int T = specs[0]->T, F = specs[0]->F;
  if (F != W_->shape[0])
    throw std::invalid_argument("spectrogram has " + std::to_string(F) +
                                " bins, filterbank expects " +
                                std::to_string(W_->shape[0]));
  std::vector<double> flat(size_t(B) * T * F);
  for (int b = 0; b < B; ++b) {
    if (specs[b]->T != T || specs[b]->F != F)
      throw std::invalid_argument("ragged spectrogram batch");
    std::copy(specs[b]->values.begin(), specs[b]->values.end(),
              flat.begin() + size_t(b) * T * F);
  }
  ad::Var X = ad::make_const({B * T, F}, std::move(flat));
  ad::Var prod = ad::matmul(tape, X, ad::relu(tape, W_));
  ad::Var logged = ad::vlog(tape, ad::clamp_min(tape, prod, kEta));
  return ad::reshape(tape, logged, {B, T, K_});
}

ad::Var FilterbankMatrixFrontend::forward_spec(
    ad::Tape& tape, const std::vector<const PowerSpectrogram*>& specs,
    bool train) {
  ad::Var pre = forward_raw(tape, specs);
  return ad::batchnorm(tape, pre, bn_gamma_, bn_beta_, bn_state_,
                       ad::BNLayout::kChannelsLast, train);
}

ad::Var FilterbankMatrixFrontend::forward(
    ad::Tape& tape, const std::vector<const AudioClip*>& batch, bool train) {
  std::vector<PowerSpectrogram> scratch;
  std::vector<const PowerSpectrogram*> specs;
  scratch.reserve(batch.size());
  specs.reserve(batch.size());
  for (const AudioClip* c : batch) {
    if (c->rel_path.empty()) {
      scratch.push_back(power_spectrogram(c->samples, cfg_));
      specs.push_back(&scratch.back());
    } else {
      specs.push_back(&spectrogram(*c));
    }
  }
  return forward_spec(tape, specs, train);
}

std::vector<ad::Var> FilterbankMatrixFrontend::params() {
  return {W_, bn_gamma_, bn_beta_};
}

std::vector<ad::Var> FilterbankMatrixFrontend::all_tensors() {
  return {W_, bn_gamma_, bn_beta_};
}

void FilterbankMatrixFrontend::set_trainable(bool trainable) {
  W_->requires_grad = trainable;
  bn_gamma_->requires_grad = trainable;
  bn_beta_->requires_grad = trainable;
}

void FilterbankMatrixFrontend::zero_channels(int first, int last) {
  if (first < 1 || last > K_ || first > last)
    throw std::out_of_range("channel interval [" + std::to_string(first) + "," +
                            std::to_string(last) + "] outside [1," +
                            std::to_string(K_) + "]");
  const int F = W_->shape[0];
  for (int f = 0; f < F; ++f)
    for (int k = first - 1; k < last; ++k) W_->val[size_t(f) * K_ + k] = 0.0;
}

void FilterbankMatrixFrontend::export_csv(const std::string& dir,
                                          const std::string& prefix) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_matrix_csv((fs::path(dir) / (prefix + "_W.csv")).string(), W_->val,
                   W_->shape[0], W_->shape[1]);
  std::ofstream cf((fs::path(dir) / (prefix + "_centers.csv")).string());
  cf.precision(17);
  cf << "k,center_hz\n";
  for (int k = 0; k < K_; ++k) cf << k + 1 << ',' << center_freqs_[k] << '\n';
}

// ------------------------------------------------------------ gammachirp

GammachirpParams init_gammachirp(FilterScale scale, ParamInit init, int K,
                                 int sample_rate, std::mt19937_64& rng) {
  GammachirpParams p;
  double n0 = 4.0, b0 = 1.019, c0 = -1.0;
  if (init == ParamInit::kRandom) {
    std::uniform_real_distribution<double> nd(3.0, 5.0), bd(0.8, 1.2),
        cd(-2.0, 0.0);
    n0 = nd(rng);
    b0 = bd(rng);
    c0 = cd(rng);
  }
  const double nyquist = sample_rate / 2.0;
  auto centers = spaced_center_freqs(scale, K, sample_rate);
  std::vector<double> f_norm(K), erb_norm(K);
  for (int k = 0; k < K; ++k) {
    f_norm[k] = centers[k] / nyquist;
    erb_norm[k] = erb(centers[k]) / nyquist;
  }
  p.gains = ad::make_param(std::vector<int>{K}, std::vector<double>(K, 1.0),
                           "gc.gains");
  p.n_raw = ad::make_scalar(n0, true, "gc.n");
  p.b_raw = ad::make_scalar(b0, true, "gc.b");
  p.c = ad::make_scalar(c0, true, "gc.c");
  p.f_norm = ad::make_param(std::vector<int>{K}, std::move(f_norm), "gc.f_norm");
  p.erb_norm =
      ad::make_param(std::vector<int>{K}, std::move(erb_norm), "gc.erb_norm");
  return p;
}

std::vector<double> GammachirpParams::effective_centers(int sample_rate) const {
  std::vector<double> out(f_norm->numel());
  for (size_t k = 0; k < out.size(); ++k)
    out[k] = std::max(0.0, f_norm->val[k]) * sample_rate / 2.0;
  return out;
}

std::vector<double> GammachirpParams::effective_erbs(int sample_rate) const {
  std::vector<double> out(erb_norm->numel());
  for (size_t k = 0; k < out.size(); ++k)
    out[k] = std::max(0.0, erb_norm->val[k]) * sample_rate / 2.0;
  return out;
}

double GammachirpParams::effective_n() const {
  return std::max(1.0, n_raw->val[0]);
}
double GammachirpParams::effective_b() const {
  return std::max(0.0, b_raw->val[0]);
}

ad::Var gammachirp_impulse(ad::Tape& tape, const GammachirpParams& p, int k,
                           int sample_rate) {
  const int Lk = p.kernel_length;
  if (Lk < 1) throw std::invalid_argument("kernel_length must be >= 1");
  if (k < 0 || size_t(k) >= p.gains->numel())
    throw std::out_of_range("channel index out of range");
  std::vector<double> tv(Lk), ltv(Lk);
  for (int i = 0; i < Lk; ++i) {
    tv[i] = double(i + 1) / sample_rate;  // t > 0 keeps c*log(t) finite
    ltv[i] = std::log(tv[i]);
  }
  ad::Var t_const = ad::make_const({Lk}, std::move(tv));
  ad::Var logt_const = ad::make_const({Lk}, std::move(ltv));

  ad::Var n_eff = ad::clamp_min(tape, p.n_raw, 1.0);
  ad::Var b_eff = ad::relu(tape, p.b_raw);
  ad::Var f_k = ad::mul_scalar(
      tape, ad::relu(tape, ad::select(tape, p.f_norm, k)), sample_rate / 2.0);
  ad::Var erb_k = ad::mul_scalar(
      tape, ad::relu(tape, ad::select(tape, p.erb_norm, k)), sample_rate / 2.0);

  // envelope t^{n-1} e^{-2 pi b ERB t}
  ad::Var n_minus_1 = ad::add_scalar(tape, n_eff, -1.0);
  ad::Var env_pow = ad::pow_vs(tape, t_const, n_minus_1);
  ad::Var decay_rate =
      ad::mul_scalar(tape, ad::mul(tape, b_eff, erb_k), -2.0 * kPi);
  ad::Var env = ad::mul(tape, env_pow,
                        ad::vexp(tape, ad::mul(tape, t_const, decay_rate)));

  // carrier cos(2 pi f_k t + c log t), phi = 0
  ad::Var phase =
      ad::add(tape, ad::mul(tape, t_const, ad::mul_scalar(tape, f_k, 2.0 * kPi)),
              ad::mul(tape, logt_const, p.c));
  ad::Var raw = ad::mul(tape, env, ad::vcos(tape, phase));

  ad::Var shaped = raw;
  if (p.normalize_kernels)
    shaped = ad::div_by(tape, raw, ad::reduce_max_abs(tape, raw));
  ad::Var gain = ad::relu(tape, ad::select(tape, p.gains, k));
  return ad::mul(tape, shaped, gain);
}

GammachirpFrontend::GammachirpFrontend(GammachirpParams params,
                                       FramingConfig cfg, ad::CochleaMode mode)
    : params_(std::move(params)),
      cfg_(cfg),
      mode_(mode),
      K_(int(params_.gains->numel())) {
  bn_gamma_ = ad::make_param(std::vector<int>{K_},
                             std::vector<double>(K_, 1.0), "gc.bn_gamma");
  bn_beta_ = ad::make_param(std::vector<int>{K_},
                            std::vector<double>(K_, 0.0), "gc.bn_beta");
  bn_state_.channels = K_;
  if (!params_.c_trainable) params_.c->requires_grad = false;
}

ad::Var GammachirpFrontend::forward_raw(ad::Tape& tape,
                                        const std::vector<const double*>& signals,
                                        int length) {
  const int B = int(signals.size());
  if (B == 0) throw std::invalid_argument("empty batch");
  std::vector<double> flat(size_t(B) * length);
  for (int b = 0; b < B; ++b)
    std::copy(signals[b], signals[b] + length, flat.begin() + size_t(b) * length);
  ad::Var x = ad::make_const({B, length}, std::move(flat));

  std::vector<ad::Var> kernels;
  kernels.reserve(K_);
  for (int k = 0; k < K_; ++k)
    kernels.push_back(gammachirp_impulse(tape, params_, k, cfg_.sample_rate));

  ad::Var filtered = ad::conv1d_bank(tape, x, kernels);
  ad::Var energy =
      ad::cochlea_energy(tape, filtered, cfg_.frame_length, cfg_.hop, mode_);
  return ad::vlog(tape, ad::clamp_min(tape, energy, kEta));
}

ad::Var GammachirpFrontend::forward(ad::Tape& tape,
                                    const std::vector<const AudioClip*>& batch,
                                    bool train) {
  std::vector<const double*> sigs;
  sigs.reserve(batch.size());
  int len = batch.empty() ? 0 : int(batch[0]->samples.size());
  for (const AudioClip* c : batch) {
    if (int(c->samples.size()) != len)
      throw std::invalid_argument("batch clips must share length");
    sigs.push_back(c->samples.data());
  }
  ad::Var pre = forward_raw(tape, sigs, len);
  return ad::batchnorm(tape, pre, bn_gamma_, bn_beta_, bn_state_,
                       ad::BNLayout::kChannelsLast, train);
}

std::vector<ad::Var> GammachirpFrontend::params() {
  return {params_.gains, params_.n_raw, params_.b_raw, params_.c,
          params_.f_norm, params_.erb_norm, bn_gamma_, bn_beta_};
}

std::vector<ad::Var> GammachirpFrontend::all_tensors() { return params(); }

void GammachirpFrontend::set_trainable(bool trainable) {
  params_.gains->requires_grad = trainable;
  params_.n_raw->requires_grad = trainable;
  params_.b_raw->requires_grad = trainable;
  params_.c->requires_grad = trainable && params_.c_trainable;
  params_.f_norm->requires_grad = trainable;
  params_.erb_norm->requires_grad = trainable;
  bn_gamma_->requires_grad = trainable;
  bn_beta_->requires_grad = trainable;
}

void GammachirpFrontend::export_csv(const std::string& dir,
                                    const std::string& prefix) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream pf((fs::path(dir) / (prefix + "_params.csv")).string());
  pf.precision(17);
  pf << "k,gain,center_hz,erb_hz\n";
  auto centers = params_.effective_centers(cfg_.sample_rate);
  auto erbs = params_.effective_erbs(cfg_.sample_rate);
  for (int k = 0; k < K_; ++k)
    pf << k + 1 << ',' << std::max(0.0, params_.gains->val[k]) << ','
       << centers[k] << ',' << erbs[k] << '\n';
  std::ofstream sf((fs::path(dir) / (prefix + "_scalars.csv")).string());
  sf.precision(17);
  sf << "n,b,c\n"
     << params_.effective_n() << ',' << params_.effective_b() << ','
     << params_.c->val[0] << '\n';

  // per-channel impulse responses for inspection
  ad::Tape tape;
  std::vector<double> dump(size_t(params_.kernel_length) * K_);
  for (int k = 0; k < K_; ++k) {
    ad::Var g = gammachirp_impulse(tape, params_, k, cfg_.sample_rate);
    for (int i = 0; i < params_.kernel_length; ++i)
      dump[size_t(i) * K_ + k] = g->val[i];
  }
  write_matrix_csv((fs::path(dir) / (prefix + "_kernels.csv")).string(), dump,
                   params_.kernel_length, K_);
}

// ---------------------------------------------------------------- fusion

ad::Var FusionFrontend::forward(ad::Tape& tape,
                                const std::vector<const AudioClip*>& batch,
                                bool train) {
  ad::Var fa = a_->forward(tape, batch, train);
  ad::Var fb = b_->forward(tape, batch, train);
  if (fa->shape != fb->shape)
    throw std::invalid_argument("fusion inputs disagree on feature shape");
  return ad::stack_maps(tape, {fa, fb});
}

std::vector<ad::Var> FusionFrontend::params() {
  auto out = a_->params();
  auto bp = b_->params();
  out.insert(out.end(), bp.begin(), bp.end());
  return out;
}

void FusionFrontend::export_csv(const std::string& dir,
                                const std::string& prefix) const {
  a_->export_csv(dir, prefix + "_a");
  b_->export_csv(dir, prefix + "_b");
}

}  // namespace fbkws
