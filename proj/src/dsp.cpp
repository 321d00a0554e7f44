#include "fbkws/dsp.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace fbkws {

namespace {
constexpr double kPi = std::numbers::pi;
}

void fft(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  if (n <= 1) return;
  size_t p = 2;
  while (n % p != 0) ++p;  // smallest prime factor
  const size_t m = n / p;

  std::vector<std::vector<std::complex<double>>> sub(p);
  for (size_t r = 0; r < p; ++r) sub[r].resize(m);
  for (size_t i = 0; i < n; ++i) sub[i % p][i / p] = a[i];
  for (size_t r = 0; r < p; ++r) fft(sub[r]);

  for (size_t k = 0; k < n; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (size_t r = 0; r < p; ++r) {
      double ang = -2.0 * kPi * double(r) * double(k) / double(n);
      acc += std::complex<double>(std::cos(ang), std::sin(ang)) * sub[r][k % m];
    }
    a[k] = acc;
  }
}

std::vector<double> make_window(Window w, int length) {
  std::vector<double> win(length, 1.0);
  if (w == Window::kHann)
    for (int m = 0; m < length; ++m)
      win[m] = 0.5 - 0.5 * std::cos(2.0 * kPi * m / length);
  return win;
}

std::vector<double> frame_signal(const std::vector<double>& samples,
                                 const FramingConfig& cfg, Window window) {
  const int M = cfg.frame_length;
  const int L = int(samples.size());
  if (L < M)
    throw std::invalid_argument("signal shorter than one frame: " +
                                std::to_string(L) + " < " + std::to_string(M));
  const int T = cfg.num_frames(L);
  const auto win = make_window(window, M);
  std::vector<double> frames(size_t(T) * M, 0.0);
  for (int t = 0; t < T; ++t) {
    const int start = t * cfg.hop;
    for (int m = 0; m < M; ++m) {
      const int i = start + m;
      if (i < L) frames[size_t(t) * M + m] = win[m] * samples[i];
    }
  }
  return frames;
}

PowerSpectrogram power_spectrogram(const std::vector<double>& samples,
                                   const FramingConfig& cfg, Window window) {
  const int M = cfg.frame_length;
  const auto frames = frame_signal(samples, cfg, window);
  PowerSpectrogram out;
  out.T = cfg.num_frames(int(samples.size()));
  out.F = cfg.num_bins();
  out.values.resize(size_t(out.T) * out.F);
  std::vector<std::complex<double>> buf(M);
  for (int t = 0; t < out.T; ++t) {
    for (int m = 0; m < M; ++m) buf[m] = frames[size_t(t) * M + m];
    fft(buf);
    for (int f = 0; f < out.F; ++f) out.values[size_t(t) * out.F + f] = std::norm(buf[f]);
  }
  return out;
}

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

namespace {

ReferenceFilterbank make_triangular(int F, int K, int sample_rate, double f_min,
                                    double f_max, FilterScale scale) {
  if (K < 1) throw std::invalid_argument("K must be >= 1");
  if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0 + 1e-9))
    throw std::invalid_argument("need 0 <= f_min < f_max <= f_s/2");

  // K+2 edge points equally spaced on the chosen scale; filter k peaks at
  // point k+1 with feet at its neighbours.
  std::vector<double> pts(K + 2);
  if (scale == FilterScale::kMel) {
    double lo = hz_to_mel(f_min), hi = hz_to_mel(f_max);
    for (int i = 0; i < K + 2; ++i)
      pts[i] = mel_to_hz(lo + (hi - lo) * i / (K + 1));
  } else {
    for (int i = 0; i < K + 2; ++i)
      pts[i] = f_min + (f_max - f_min) * i / (K + 1);
  }

  // frame_length = 2*(F-1): bin spacing f_s / frame_length
  const double bin_width = double(sample_rate) / (2.0 * (F - 1));
  for (int i = 0; i + 1 < K + 2; ++i)
    if (pts[i + 1] - pts[i] < bin_width)
      throw std::invalid_argument(
          "K too large for F: adjacent filter edges collapse into one bin");

  ReferenceFilterbank fb;
  fb.F = F;
  fb.K = K;
  fb.scale = scale;
  fb.weights.assign(size_t(F) * K, 0.0);
  fb.center_freqs.assign(pts.begin() + 1, pts.end() - 1);
  for (int k = 0; k < K; ++k) {
    const double left = pts[k], peak = pts[k + 1], right = pts[k + 2];
    for (int f = 0; f < F; ++f) {
      const double hz = f * bin_width;
      double w = 0.0;
      if (hz > left && hz <= peak)
        w = (hz - left) / (peak - left);
      else if (hz > peak && hz < right)
        w = (right - hz) / (right - peak);
      fb.weights[size_t(f) * K + k] = w;
    }
  }
  return fb;
}

}  // namespace

ReferenceFilterbank make_mel_filterbank(int F, int K, int sample_rate,
                                        double f_min, double f_max) {
  return make_triangular(F, K, sample_rate, f_min, f_max, FilterScale::kMel);
}

ReferenceFilterbank make_linear_filterbank(int F, int K, int sample_rate,
                                           double f_min, double f_max) {
  return make_triangular(F, K, sample_rate, f_min, f_max, FilterScale::kLinear);
}

void write_matrix_csv(const std::string& path, const std::vector<double>& m,
                      int rows, int cols) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (c) out << ',';
      out << m[size_t(r) * cols + c];
    }
    out << '\n';
  }
}

std::vector<double> read_matrix_csv(const std::string& path, int& rows,
                                    int& cols) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<double> vals;
  rows = 0;
  cols = -1;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    int c = 0;
    while (std::getline(ss, cell, ',')) {
      vals.push_back(std::stod(cell));
      ++c;
    }
    if (cols < 0) cols = c;
    if (c != cols) throw std::runtime_error("ragged CSV " + path);
    ++rows;
  }
  return vals;
}

}  // namespace fbkws
