#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "fbkws/backend.hpp"
#include "support/synth_corpus.hpp"

using namespace fbkws;

namespace {

// Tiny front-end + tiny clips keep these tests fast on one core.
FramingConfig tiny_framing() {
  FramingConfig cfg;
  return cfg;
}

FilterbankMatrixFrontend make_tiny_frontend(int K = 8) {
  FramingConfig cfg = tiny_framing();
  auto fb = make_mel_filterbank(cfg.num_bins(), K, cfg.sample_rate, 0.0,
                                8000.0);
  return FilterbankMatrixFrontend(fb, cfg);
}

DatasetSplit tiny_split(int n_classes, int per_class, uint64_t seed) {
  auto clips = testsupport::make_toy_clips(n_classes, per_class, 6, seed);
  return split_by_speaker(clips, {0.8, 0.1, 0.1}, seed + 1);
}

}  // namespace

TEST_CASE("presets") {
  auto s = ResNetConfig::small_preset();
  CHECK(s.n_res_blocks == 3);
  CHECK(s.channels == 19);
  CHECK(!s.dilation);
  auto l = ResNetConfig::large_preset();
  CHECK(l.n_res_blocks == 6);
  CHECK(l.channels == 45);
  CHECK(l.dilation);
  CHECK(ResNetConfig::preset("small").channels == 19);
  CHECK(ResNetConfig::preset("large").channels == 45);
  CHECK_THROWS(ResNetConfig::preset("medium"));
}

TEST_CASE("forward shape, determinism, and train/eval distinction") {
  ResNetConfig cfg = ResNetConfig::small_preset();
  cfg.input_T = 20;
  cfg.input_K = 8;
  cfg.n_classes = 4;
  ResNet net(cfg, 42);
  ResNet net_same(cfg, 42);
  ResNet net_diff(cfg, 43);

  std::mt19937_64 rng(5);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> x(size_t(3) * 1 * 20 * 8);
  for (auto& v : x) v = d(rng);
  auto in = ad::make_const({3, 1, 20, 8}, x);

  ad::Tape t;
  auto out = net.forward(t, in, true);
  REQUIRE(out->shape == std::vector<int>{3, 4});
  CHECK(!out->has_nan());

  // same seed -> same logits; different seed -> different
  ad::Tape t2, t3;
  auto out_same = net_same.forward(t2, in, true);
  auto out_diff = net_diff.forward(t3, in, true);
  for (size_t i = 0; i < out->val.size(); ++i)
    CHECK(out->val[i] == out_same->val[i]);
  bool differs = false;
  for (size_t i = 0; i < out->val.size(); ++i)
    if (out->val[i] != out_diff->val[i]) differs = true;
  CHECK(differs);

  // eval mode works after one train-mode pass populated running stats
  ad::Tape t4;
  auto out_eval = net.forward(t4, in, false);
  CHECK(out_eval->shape == std::vector<int>{3, 4});
  CHECK(!out_eval->has_nan());
}

TEST_CASE("two input channels accepted when configured") {
  ResNetConfig cfg = ResNetConfig::small_preset();
  cfg.input_T = 10;
  cfg.input_K = 6;
  cfg.input_channels = 2;
  cfg.n_classes = 3;
  ResNet net(cfg, 1);
  auto in = ad::make_const({2, 2, 10, 6},
                           std::vector<double>(size_t(2) * 2 * 10 * 6, 0.3));
  ad::Tape t;
  auto out = net.forward(t, in, true);
  CHECK(out->shape == std::vector<int>{2, 3});
}

TEST_CASE("set_trainable freezes every parameter") {
  ResNet net(ResNetConfig::small_preset(), 7);
  net.set_trainable(false);
  for (auto& p : net.params()) CHECK(!p->requires_grad);
  net.set_trainable(true);
  for (auto& p : net.params()) CHECK(p->requires_grad);
  CHECK(net.param_count() > 1000);
}

TEST_CASE("Adam decreases a quadratic and skips frozen params") {
  auto w = ad::make_param({3}, {5.0, -4.0, 2.0}, "w");
  auto frozen = ad::make_param({2}, {1.0, 1.0}, "frozen");
  frozen->requires_grad = false;
  Adam opt({w, frozen}, 0.1, 0.9, 0.999, 1e-8);
  double first = 0.0, last = 0.0;
  for (int it = 0; it < 200; ++it) {
    ad::Tape t;
    auto loss = ad::sum_all(t, ad::square(t, w));
    ad::zero_grads({w, frozen});
    t.backward(loss);
    frozen->ensure_grad();
    frozen->grad[0] = 99.0;  // must be ignored
    if (it == 0) first = loss->val[0];
    last = loss->val[0];
    opt.step();
  }
  CHECK(last < 1e-2);
  CHECK(last < first);
  CHECK(frozen->val[0] == 1.0);
  CHECK(frozen->val[1] == 1.0);
  // step() zeroes grads of live params
  CHECK(w->grad[0] == 0.0);
}

TEST_CASE("training a tiny task reduces loss and beats chance") {
  auto fe = make_tiny_frontend(8);
  ResNetConfig cfg = ResNetConfig::small_preset();
  cfg.input_K = 8;
  cfg.n_classes = 3;
  cfg.channels = 8;
  cfg.n_res_blocks = 1;
  ResNet net(cfg, 3);

  auto data = tiny_split(3, 12, 21);
  TrainConfig tc;
  tc.epochs = 0;  // per-stage epochs used instead
  tc.batch_size = 16;
  tc.seed = 5;
  std::vector<Stage> stages{{false, true, 6}};

  auto hist = train(fe, net, data, tc, stages);
  REQUIRE(hist.epochs.size() == 6);
  CHECK(hist.epochs.front().train_loss > hist.epochs.back().train_loss);
  CHECK(hist.final_train_loss == hist.epochs.back().train_loss);

  auto ev = evaluate(fe, net, data.train);
  CHECK(ev.accuracy > 1.0 / 3.0);
  CHECK(ev.n_classes == 3);
  CHECK(ev.total == int(data.train.size()));
  int diag = 0, total = 0;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      total += ev.confusion[r * 3 + c];
      if (r == c) diag += ev.confusion[r * 3 + c];
    }
  CHECK(total == ev.total);
  CHECK(ev.accuracy == doctest::Approx(double(diag) / total));
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto data = tiny_split(2, 8, 31);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.seed = 9;
  std::vector<Stage> stages{{true, true, 2}};

  auto run = [&] {
    auto fe = make_tiny_frontend(6);
    ResNetConfig cfg = ResNetConfig::small_preset();
    cfg.input_K = 6;
    cfg.n_classes = 2;
    cfg.channels = 6;
    cfg.n_res_blocks = 1;
    ResNet net(cfg, 11);
    auto hist = train(fe, net, data, tc, stages);
    return hist.final_train_loss;
  };
  CHECK(run() == run());
}

TEST_CASE("staged schedules respect freezing") {
  auto data = tiny_split(2, 8, 41);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.seed = 2;

  auto fe = make_tiny_frontend(6);
  auto w_before = fe.weights()->val;
  ResNetConfig cfg = ResNetConfig::small_preset();
  cfg.input_K = 6;
  cfg.n_classes = 2;
  cfg.channels = 6;
  cfg.n_res_blocks = 1;
  ResNet net(cfg, 1);

  SUBCASE("frozen frontend stays bit-identical") {
    std::vector<Stage> stages{{false, true, 2}};
    train(fe, net, data, tc, stages);
    CHECK(fe.weights()->val == w_before);
  }
  SUBCASE("trainable frontend moves") {
    std::vector<Stage> stages{{true, true, 2}};
    train(fe, net, data, tc, stages);
    CHECK(fe.weights()->val != w_before);
  }
  SUBCASE("both halves frozen throws") {
    std::vector<Stage> stages{{false, false, 2}};
    CHECK_THROWS(train(fe, net, data, tc, stages));
  }
  SUBCASE("empty training split throws") {
    DatasetSplit empty;
    std::vector<Stage> stages{{false, true, 1}};
    CHECK_THROWS(train(fe, net, empty, tc, stages));
  }
}

TEST_CASE("history CSV format") {
  TrainHistory h;
  h.epochs = {{1, 2.5, 0.3}, {2, 1.25, 0.6}};
  const std::string path = "test_backend_hist.csv";
  write_history_csv(path, h);
  FILE* f = fopen(path.c_str(), "r");
  REQUIRE(f);
  char line[256];
  REQUIRE(fgets(line, sizeof line, f));
  CHECK(std::string(line).find("epoch,train_loss,val_accuracy") == 0);
  REQUIRE(fgets(line, sizeof line, f));
  CHECK(std::string(line).find("1,") == 0);
  fclose(f);
  std::remove(path.c_str());
}
