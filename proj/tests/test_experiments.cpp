#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "fbkws/experiments.hpp"
#include "support/synth_corpus.hpp"

using namespace fbkws;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("fbkws_exp_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("experiment name parsing: filterbank-matrix regimes") {
  auto s = parse_experiment_name("FfBt_26");
  CHECK(s.kind == FrontendKind::kFbMatrix);
  REQUIRE(s.stages.size() == 1);
  CHECK(!s.stages[0].train_frontend);
  CHECK(s.stages[0].train_backend);
  CHECK(s.stages[0].epochs == 26);

  auto chained = parse_experiment_name("FfBt_13 + FtBt_13");
  REQUIRE(chained.stages.size() == 2);
  CHECK(!chained.stages[0].train_frontend);
  CHECK(chained.stages[0].epochs == 13);
  CHECK(chained.stages[1].train_frontend);
  CHECK(chained.stages[1].train_backend);
  CHECK(chained.stages[1].epochs == 13);

  auto frozen_backend = parse_experiment_name("FfBt_26 + FtBf_10");
  REQUIRE(frozen_backend.stages.size() == 2);
  CHECK(frozen_backend.stages[1].train_frontend);
  CHECK(!frozen_backend.stages[1].train_backend);
  CHECK(frozen_backend.stages[1].epochs == 10);
}

TEST_CASE("experiment name parsing: gammachirp/gammatone regimes") {
  auto gc = parse_experiment_name("GC[t]_Ir-Linear");
  CHECK(gc.kind == FrontendKind::kGammachirp);
  CHECK(gc.init == ParamInit::kRandom);
  CHECK(gc.scale == FilterScale::kLinear);
  REQUIRE(gc.stages.size() == 1);
  CHECK(gc.stages[0].train_frontend);
  CHECK(gc.stages[0].train_backend);
  CHECK(gc.stages[0].epochs == 26);

  auto gcf = parse_experiment_name("GC[f]_Ic-Mel");
  CHECK(gcf.kind == FrontendKind::kGammachirp);
  CHECK(gcf.init == ParamInit::kConstant);
  CHECK(gcf.scale == FilterScale::kMel);
  CHECK(!gcf.stages[0].train_frontend);
  CHECK(gcf.stages[0].train_backend);

  auto gt = parse_experiment_name("GT[f]_Ic-Mel");
  CHECK(gt.kind == FrontendKind::kGammatone);

  auto gtt = parse_experiment_name("GT[t]_Ic-Mel");
  CHECK(gtt.stages[0].train_frontend);
}

TEST_CASE("experiment name round trip and malformed inputs") {
  for (const char* n :
       {"FfBt_26", "FtBt_26", "FfBt_13 + FtBt_13", "FfBt_26 + FtBf_10",
        "GC[t]_Ic-Mel", "GC[f]_Ic-Mel", "GC[t]_Ir-Linear", "GT[f]_Ic-Mel"}) {
    auto spec = parse_experiment_name(n);
    CHECK(format_experiment_name(spec) == n);
  }
  for (const char* bad :
       {"", "FxBt_26", "FfBt", "FfBt_0", "FfBt_-3", "GC[z]_Ic-Mel",
        "GC[t]_Ix-Mel", "GC[t]_Ic-Bark", "FfBt_26 + ", "garbage"}) {
    CHECK_THROWS_AS(parse_experiment_name(bad), std::invalid_argument);
  }
}

TEST_CASE("subset spec parsing and application") {
  auto full = parse_subset_spec("");
  CHECK(full.n_keywords == 10);
  CHECK(full.include_filler);
  CHECK(full.cap_per_class == 0);
  CHECK(full.n_classes() == 11);

  auto s = parse_subset_spec("3kw+filler,cap=200/class");
  CHECK(s.n_keywords == 3);
  CHECK(s.include_filler);
  CHECK(s.cap_per_class == 200);
  CHECK(s.n_classes() == 4);

  auto nofill = parse_subset_spec("2kw");
  CHECK(nofill.n_keywords == 2);
  CHECK(!nofill.include_filler);
  CHECK(nofill.n_classes() == 2);

  CHECK_THROWS(parse_subset_spec("0kw"));
  CHECK_THROWS(parse_subset_spec("11kw"));
  CHECK_THROWS(parse_subset_spec("3kw+filler,cap=0/class"));
  CHECK_THROWS(parse_subset_spec("cheese"));

  SUBCASE("apply_subset relabels filler and caps deterministically") {
    std::vector<AudioClip> clips;
    for (int label : {0, 1, 2, 3, kFillerClass, kFillerClass, 1, 0}) {
      AudioClip c;
      c.label = label;
      c.rel_path = "x" + std::to_string(clips.size());
      clips.push_back(c);
    }
    SubsetSpec sub;
    sub.n_keywords = 2;
    sub.include_filler = true;
    auto out = apply_subset(clips, sub);
    CHECK(out.size() == 6);  // labels 2,3 dropped
    for (const auto& c : out) {
      CHECK(c.label >= 0);
      CHECK(c.label <= 2);  // filler relabeled to 2
    }
    int filler = 0;
    for (const auto& c : out)
      if (c.label == 2) ++filler;
    CHECK(filler == 2);

    sub.cap_per_class = 1;
    auto capped = apply_subset(clips, sub);
    CHECK(capped.size() == 3);
    auto capped2 = apply_subset(clips, sub);
    REQUIRE(capped2.size() == capped.size());
    for (size_t i = 0; i < capped.size(); ++i)
      CHECK(capped[i].rel_path == capped2[i].rel_path);
  }
}

TEST_CASE("Student-t statistics") {
  CHECK(t_quantile_975(1) == doctest::Approx(12.706).epsilon(1e-3));
  CHECK(t_quantile_975(4) == doctest::Approx(2.776).epsilon(1e-3));
  CHECK(t_quantile_975(9) == doctest::Approx(2.262).epsilon(1e-3));
  CHECK(t_quantile_975(29) == doctest::Approx(2.045).epsilon(1e-3));
  CHECK(t_quantile_975(200) == doctest::Approx(1.96).epsilon(5e-3));

  std::vector<double> xs{94.0, 95.0, 96.0, 95.5, 94.5};
  CHECK(mean_of(xs) == doctest::Approx(95.0));
  // sample sd = sqrt(sum (x-m)^2 / 4)
  double ss = 0.0;
  for (double x : xs) ss += (x - 95.0) * (x - 95.0);
  const double want = 2.776 * std::sqrt(ss / 4.0) / std::sqrt(5.0);
  CHECK(ci95_halfwidth(xs) == doctest::Approx(want).epsilon(1e-3));
}

TEST_CASE("CI overlap verdicts") {
  ExperimentReport a, b;
  a.name = "A";
  a.mean = 95.0;
  a.ci95 = 0.5;
  a.ci_defined = true;
  b.name = "B";
  b.mean = 95.6;
  b.ci95 = 0.4;
  b.ci_defined = true;
  auto v = ci_overlap(a, b);
  CHECK(v.overlaps);  // [94.5,95.5] vs [95.2,96.0]
  CHECK(v.lo_a == doctest::Approx(94.5));
  CHECK(v.hi_b == doctest::Approx(96.0));
  CHECK(!v.text.empty());

  b.mean = 97.0;
  auto v2 = ci_overlap(a, b);
  CHECK(!v2.overlaps);
}

TEST_CASE("report write/read round trip") {
  TempDir tmp;
  ExperimentReport r;
  r.name = "FfBt_26";
  r.repetitions = 3;
  r.accuracies = {94.25, 95.0, 95.75};
  r.mean = mean_of(r.accuracies);
  r.ci95 = ci95_halfwidth(r.accuracies);
  r.ci_defined = true;
  r.params.present = true;
  r.params.n_mean = 4.1;
  r.params.b_mean = 1.0;
  r.params.c_mean = -0.8;
  const std::string p = (tmp.path / "report.txt").string();
  write_report(r, p);
  auto back = read_report(p);
  CHECK(back.name == r.name);
  CHECK(back.repetitions == 3);
  REQUIRE(back.accuracies.size() == 3);
  for (size_t i = 0; i < 3; ++i)
    CHECK(back.accuracies[i] == doctest::Approx(r.accuracies[i]));
  CHECK(back.mean == doctest::Approx(r.mean));
  CHECK(back.ci95 == doctest::Approx(r.ci95));
}

TEST_CASE("heatmap PGM and removal CSV outputs") {
  TempDir tmp;
  std::vector<double> w(241 * 8, 0.0);
  for (size_t i = 0; i < w.size(); ++i) w[i] = double(i % 7);
  const std::string pgm = (tmp.path / "w.pgm").string();
  emit_filterbank_heatmap(w, 241, 8, pgm);
  CHECK(fs::exists(pgm));
  CHECK(fs::file_size(pgm) > size_t(241) * 8);

  RemovalCurve curve;
  RemovalPoint pt;
  pt.first = 20;
  pt.last = 26;
  pt.center_lo = 1700.0;
  pt.center_hi = 2700.0;
  pt.report.mean = 90.0;
  pt.report.ci95 = 1.0;
  curve.points.push_back(pt);
  const std::string csv = (tmp.path / "removal.csv").string();
  write_removal_csv(curve, csv);
  CHECK(fs::exists(csv));
}

TEST_CASE("make_frontend honors the regime kind") {
  RunOptions opt;
  opt.gc_kernel_length = 128;
  FramingConfig cfg;

  auto fb = make_frontend(parse_experiment_name("FfBt_26"), opt, cfg, 1);
  CHECK(dynamic_cast<FilterbankMatrixFrontend*>(fb.get()) != nullptr);
  CHECK(fb->num_channels() == 40);

  auto gc = make_frontend(parse_experiment_name("GC[t]_Ic-Mel"), opt, cfg, 1);
  auto* gcp = dynamic_cast<GammachirpFrontend*>(gc.get());
  REQUIRE(gcp != nullptr);
  CHECK(gcp->gc_params().c_trainable);
  CHECK(gcp->gc_params().c->val[0] == -1.0);

  auto gt = make_frontend(parse_experiment_name("GT[t]_Ic-Mel"), opt, cfg, 1);
  auto* gtp = dynamic_cast<GammachirpFrontend*>(gt.get());
  REQUIRE(gtp != nullptr);
  CHECK(gtp->gc_params().c->val[0] == 0.0);
  CHECK(!gtp->gc_params().c_trainable);

  // different trial seeds give different random inits
  auto r1 = make_frontend(parse_experiment_name("GC[t]_Ir-Mel"), opt, cfg, 1);
  auto r2 = make_frontend(parse_experiment_name("GC[t]_Ir-Mel"), opt, cfg, 2);
  auto* a = dynamic_cast<GammachirpFrontend*>(r1.get());
  auto* b = dynamic_cast<GammachirpFrontend*>(r2.get());
  CHECK(a->gc_params().n_raw->val[0] != b->gc_params().n_raw->val[0]);
}

TEST_CASE("run_experiment end to end on a toy task") {
  TempDir tmp;
  auto clips = testsupport::make_toy_clips(2, 14, 6, 50);
  auto data = split_by_speaker(clips, {0.8, 0.1, 0.1}, 3);

  auto spec = parse_experiment_name("FfBt_26");
  spec.stages[0].epochs = 2;  // keep the toy run quick
  spec.repetitions = 2;
  spec.base_seed = 10;

  RunOptions opt;
  opt.out_dir = (tmp.path / "out").string();
  opt.subset.n_keywords = 2;
  opt.subset.include_filler = false;
  opt.repetitions = 2;
  opt.base_seed = 10;
  opt.preset = "small";

  auto report = run_experiment(spec, data, opt);
  CHECK(report.name == "FfBt_26");
  CHECK(report.repetitions == 2);
  REQUIRE(report.accuracies.size() == 2);
  for (double a : report.accuracies) {
    CHECK(a >= 0.0);
    CHECK(a <= 100.0);
  }
  CHECK(report.ci_defined);
  CHECK(report.ci95 >= 0.0);

  // per-trial artifacts persisted
  CHECK(fs::exists(fs::path(opt.out_dir) / "FfBt_26" / "report.txt"));
  bool found_hist = false, found_ckpt = false;
  for (const auto& e : fs::recursive_directory_iterator(opt.out_dir)) {
    if (e.path().filename() == "history.csv") found_hist = true;
    if (e.path().filename() == "checkpoint.bin") found_ckpt = true;
  }
  CHECK(found_hist);
  CHECK(found_ckpt);

  SUBCASE("same options reproduce the same accuracies") {
    RunOptions opt2 = opt;
    opt2.out_dir = (tmp.path / "out2").string();
    auto report2 = run_experiment(spec, data, opt2);
    REQUIRE(report2.accuracies.size() == report.accuracies.size());
    for (size_t i = 0; i < report.accuracies.size(); ++i)
      CHECK(report2.accuracies[i] == report.accuracies[i]);
  }
}

TEST_CASE("run_filter_removal validates the regime and handles baseline") {
  TempDir tmp;
  auto clips = testsupport::make_toy_clips(2, 10, 6, 60);
  auto data = split_by_speaker(clips, {0.8, 0.1, 0.1}, 3);

  RunOptions opt;
  opt.out_dir = (tmp.path / "rm").string();
  opt.subset.n_keywords = 2;
  opt.subset.include_filler = false;
  opt.repetitions = 1;
  opt.base_seed = 4;

  SUBCASE("trainable-frontend regimes rejected") {
    auto bad = parse_experiment_name("FtBt_26");
    CHECK_THROWS(run_filter_removal(bad, {{1, 2}}, data, opt));
    auto gc = parse_experiment_name("GC[f]_Ic-Mel");
    CHECK_THROWS(run_filter_removal(gc, {{1, 2}}, data, opt));
  }
  SUBCASE("baseline point plus a removal point") {
    auto spec = parse_experiment_name("FfBt_26");
    spec.stages[0].epochs = 1;
    auto curve =
        run_filter_removal(spec, {{0, 0}, {20, 26}}, data, opt);
    REQUIRE(curve.points.size() == 2);
    CHECK(curve.points[0].first == 0);
    CHECK(curve.points[1].first == 20);
    CHECK(curve.points[1].last == 26);
    CHECK(curve.points[1].center_lo > 0.0);
    CHECK(curve.points[1].center_hi > curve.points[1].center_lo);
  }
}

TEST_CASE("load_and_split reads a corpus from disk") {
  TempDir tmp;
  std::vector<std::string> words{"yes", "no", "bed"};
  std::vector<int> labels{0, 1, kFillerClass};
  testsupport::write_corpus((tmp.path / "corpus").string(), words, labels, 6,
                            5, 70);
  RunOptions opt;
  opt.data_root = (tmp.path / "corpus").string();
  opt.split_seed = 2;
  auto split = load_and_split(opt);
  CHECK(split.train.size() + split.validation.size() + split.test.size() ==
        18);
  CHECK(!split.train.empty());
}
