#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fbkws/dsp.hpp"

using namespace fbkws;

namespace {

// Brute-force DFT oracle, independent of the fft implementation.
std::vector<std::complex<double>> dft_oracle(const std::vector<double>& x) {
  const size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (size_t k = 0; k < n; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (size_t m = 0; m < n; ++m) {
      const double ang = -2.0 * std::numbers::pi * double(k) * double(m) / double(n);
      acc += x[m] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  return out;
}

std::vector<double> random_signal(size_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> x(n);
  for (auto& v : x) v = d(rng);
  return x;
}

}  // namespace

TEST_CASE("fft matches brute-force DFT for length 480 and friends") {
  for (size_t n : {480u, 64u, 30u, 7u}) {
    auto x = random_signal(n, 100 + n);
    std::vector<std::complex<double>> a(n);
    for (size_t i = 0; i < n; ++i) a[i] = x[i];
    fft(a);
    auto ref = dft_oracle(x);
    for (size_t k = 0; k < n; ++k)
      CHECK(std::abs(a[k] - ref[k]) < 1e-8 * (1.0 + std::abs(ref[k])));
  }
}

TEST_CASE("framing constants: 1 s at 16 kHz gives T=98, F=241") {
  FramingConfig cfg;
  CHECK(cfg.num_frames(16000) == 98);
  CHECK(cfg.num_bins() == 241);
}

TEST_CASE("frame_signal row content and windowing") {
  FramingConfig cfg;
  SUBCASE("constant signal, rectangular window: every row identical") {
    std::vector<double> x(16000, 0.5);
    auto frames = frame_signal(x, cfg, Window::kRectangular);
    for (int t = 1; t < 98; ++t)
      for (int m = 0; m < 480; ++m)
        CHECK(frames[size_t(t) * 480 + m] == frames[m]);
  }
  SUBCASE("hann window on all-ones frame equals the window itself") {
    std::vector<double> x(480, 1.0);
    FramingConfig one{480, 480, 16000};
    auto frames = frame_signal(x, one, Window::kHann);
    auto win = make_window(Window::kHann, 480);
    for (int m = 0; m < 480; ++m) CHECK(frames[m] == doctest::Approx(win[m]));
  }
  SUBCASE("too-short signal throws") {
    std::vector<double> x(100, 0.0);
    CHECK_THROWS(frame_signal(x, cfg, Window::kRectangular));
  }
}

TEST_CASE("power spectrogram basics") {
  FramingConfig cfg;
  SUBCASE("all-zero clip gives all-zero spectrogram") {
    std::vector<double> x(16000, 0.0);
    auto spec = power_spectrogram(x, cfg);
    CHECK(spec.T == 98);
    CHECK(spec.F == 241);
    for (double v : spec.values) CHECK(v == 0.0);
  }
  SUBCASE("pure cosine at a bin center concentrates energy, value (A*M/2)^2") {
    // bin 40 of a 480-sample frame: f = 40 * 16000/480 Hz
    const double A = 0.7;
    const int bin = 40;
    std::vector<double> x(16000);
    for (size_t i = 0; i < x.size(); ++i)
      x[i] = A * std::cos(2.0 * std::numbers::pi * bin * double(i) / 480.0);
    auto spec = power_spectrogram(x, cfg, Window::kRectangular);
    const double expected = std::pow(A * 480.0 / 2.0, 2.0);
    for (int t = 0; t < spec.T; ++t) {
      CHECK(spec.at(t, bin) == doctest::Approx(expected).epsilon(1e-9));
      // energy concentrated: every other bin negligible
      for (int f = 0; f < spec.F; ++f)
        if (std::abs(f - bin) > 1) CHECK(spec.at(t, f) < 1e-12 * expected);
    }
  }
  SUBCASE("entries nonnegative for random inputs") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
      auto x = random_signal(16000, seed);
      auto spec = power_spectrogram(x, cfg);
      for (double v : spec.values) CHECK(v >= 0.0);
    }
  }
}

TEST_CASE("Parseval per frame, rectangular window, full-bin DFT") {
  FramingConfig cfg;
  auto x = random_signal(16000, 42);
  auto frames = frame_signal(x, cfg, Window::kRectangular);
  for (int t = 0; t < 98; t += 13) {
    std::vector<double> frame(frames.begin() + size_t(t) * 480,
                              frames.begin() + size_t(t + 1) * 480);
    auto X = dft_oracle(frame);
    double freq_energy = 0.0;
    for (const auto& c : X) freq_energy += std::norm(c);
    double time_energy = 0.0;
    for (double v : frame) time_energy += v * v;
    CHECK(freq_energy ==
          doctest::Approx(480.0 * time_energy).epsilon(1e-9));
  }
}

TEST_CASE("mel filterbank construction") {
  auto fb = make_mel_filterbank(241, 40, 16000, 0.0, 8000.0);
  CHECK(fb.F == 241);
  CHECK(fb.K == 40);
  SUBCASE("first peak below 100 Hz; peaks strictly increase") {
    CHECK(fb.center_freqs[0] < 100.0);
    for (int k = 1; k < 40; ++k)
      CHECK(fb.center_freqs[k] > fb.center_freqs[k - 1]);
  }
  SUBCASE("columns nonnegative, unimodal, contiguous support") {
    for (int k = 0; k < 40; ++k) {
      int peak_bin = 0;
      double peak = -1.0;
      for (int f = 0; f < 241; ++f) {
        const double w = fb.at(f, k);
        CHECK(w >= 0.0);
        if (w > peak) {
          peak = w;
          peak_bin = f;
        }
      }
      CHECK(peak > 0.0);
      CHECK(peak <= 1.0);
      // nondecreasing up to the peak, nonincreasing after: unimodal
      for (int f = 1; f <= peak_bin; ++f)
        CHECK(fb.at(f, k) >= fb.at(f - 1, k) - 1e-12);
      for (int f = peak_bin + 1; f < 241; ++f)
        CHECK(fb.at(f, k) <= fb.at(f - 1, k) + 1e-12);
    }
  }
  SUBCASE("K too large for F throws") {
    CHECK_THROWS(make_mel_filterbank(241, 400, 16000, 0.0, 8000.0));
  }
  SUBCASE("K=1 spans the band") {
    auto one = make_mel_filterbank(241, 1, 16000, 0.0, 8000.0);
    int nonzero = 0;
    for (int f = 0; f < 241; ++f)
      if (one.at(f, 0) > 0.0) ++nonzero;
    CHECK(nonzero > 100);
  }
}

TEST_CASE("linear filterbank construction") {
  auto fb = make_linear_filterbank(241, 40, 16000, 0.0, 8000.0);
  SUBCASE("peak spacing approximately 8000/41 Hz") {
    const double expected = 8000.0 / 41.0;
    for (int k = 1; k < 40; ++k)
      CHECK(fb.center_freqs[k] - fb.center_freqs[k - 1] ==
            doctest::Approx(expected).epsilon(1e-9));
  }
  SUBCASE("midband bins covered with positive total weight") {
    for (int f = 20; f < 220; ++f) {
      double total = 0.0;
      for (int k = 0; k < 40; ++k) total += fb.at(f, k);
      CHECK(total > 0.0);
    }
  }
}

TEST_CASE("erb formula values") {
  CHECK(erb(0.0) == 24.7);
  CHECK(erb(1000.0) == doctest::Approx(132.7).epsilon(1e-12));
  CHECK(erb(8000.0) == doctest::Approx(888.7).epsilon(1e-12));
}

TEST_CASE("matrix CSV round trip") {
  std::vector<double> m{1.0, 2.5, -3.0, 0.25, 1e-9, 7.0};
  const std::string path = "test_dsp_matrix.csv";
  write_matrix_csv(path, m, 2, 3);
  int r = 0, c = 0;
  auto back = read_matrix_csv(path, r, c);
  CHECK(r == 2);
  CHECK(c == 3);
  for (size_t i = 0; i < m.size(); ++i) CHECK(back[i] == m[i]);
  std::remove(path.c_str());
}
