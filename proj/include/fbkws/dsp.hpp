#pragma once

#include <complex>
#include <string>
#include <vector>

#include "fbkws/data.hpp"

namespace fbkws {

enum class Window { kRectangular, kHann };

struct FramingConfig {
  int frame_length = 480;   // M (30 ms at 16 kHz)
  int hop = 160;            // 10 ms
  int sample_rate = 16000;  // f_s

  int num_frames(int signal_length) const {
    return (signal_length - frame_length) / hop + 1;
  }
  int num_bins() const { return frame_length / 2 + 1; }  // F, one-sided
  double bin_freq(int f) const {
    return double(f) * sample_rate / frame_length;
  }
};

struct PowerSpectrogram {
  int T = 0, F = 0;
  std::vector<double> values;  // row-major T x F, |X(tau,f)|^2
  double& at(int t, int f) { return values[size_t(t) * F + f]; }
  double at(int t, int f) const { return values[size_t(t) * F + f]; }
};

enum class FilterScale { kMel, kLinear };

struct ReferenceFilterbank {
  int F = 0, K = 0;
  std::vector<double> weights;        // row-major F x K, nonnegative
  std::vector<double> center_freqs;   // K peak frequencies, Hz
  FilterScale scale = FilterScale::kMel;
  double& at(int f, int k) { return weights[size_t(f) * K + k]; }
  double at(int f, int k) const { return weights[size_t(f) * K + k]; }
};

// In-place complex DFT, unnormalized (X[k] = sum_m x[m] e^{-2pi i km/n}).
// Mixed-radix Cooley-Tukey; any length (prime lengths fall back to the
// O(n^2) combine, which never happens for the default M=480).
void fft(std::vector<std::complex<double>>& a);

std::vector<double> make_window(Window w, int length);

// Rows are windowed frames; throws if the clip is shorter than one frame.
std::vector<double> frame_signal(const std::vector<double>& samples,
                                 const FramingConfig& cfg, Window window);

PowerSpectrogram power_spectrogram(const std::vector<double>& samples,
                                   const FramingConfig& cfg,
                                   Window window = Window::kHann);

// K triangular filters, peak height 1, peaks equally spaced on the given
// scale over (f_min, f_max). Throws if adjacent peaks collapse into one
// frequency bin (K too large for F).
ReferenceFilterbank make_mel_filterbank(int F, int K, int sample_rate,
                                        double f_min, double f_max);
ReferenceFilterbank make_linear_filterbank(int F, int K, int sample_rate,
                                           double f_min, double f_max);

// Equivalent rectangular bandwidth at moderate stimulus level.
inline double erb(double f_hz) { return 24.7 + 0.108 * f_hz; }

double hz_to_mel(double f);
double mel_to_hz(double m);

// CSV round trip: row = frequency bin, column = channel.
void write_matrix_csv(const std::string& path, const std::vector<double>& m,
                      int rows, int cols);
std::vector<double> read_matrix_csv(const std::string& path, int& rows,
                                    int& cols);

}  // namespace fbkws
