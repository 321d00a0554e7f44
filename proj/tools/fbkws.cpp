#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fbkws/experiments.hpp"

namespace fs = std::filesystem;
using namespace fbkws;

namespace {

std::vector<std::pair<int, int>> parse_ranges(const std::string& s) {
  // "a:b,c:d"; "0:0" or "none" denotes the empty (baseline) range
  std::vector<std::pair<int, int>> out;
  std::stringstream ss(s);
  std::string field;
  while (std::getline(ss, field, ',')) {
    if (field == "none") {
      out.emplace_back(0, 0);
      continue;
    }
    auto colon = field.find(':');
    if (colon == std::string::npos)
      throw std::invalid_argument("range must be a:b, got " + field);
    out.emplace_back(std::stoi(field.substr(0, colon)),
                     std::stoi(field.substr(colon + 1)));
  }
  return out;
}

void print_report(const ExperimentReport& rep) {
  std::printf("experiment: %s\n", rep.name.c_str());
  std::printf("repetitions: %d\n", rep.repetitions);
  std::printf("accuracies:");
  for (double a : rep.accuracies) std::printf(" %.4f", a);
  std::printf("\nmean accuracy: %.4f\n", rep.mean);
  if (rep.ci_defined)
    std::printf("95%% CI half-width: %.4f\n", rep.ci95);
  else
    std::printf("95%% CI: undefined (single repetition)\n");
  if (rep.params.present) {
    std::printf("learned n: %.3f +- %.3f\n", rep.params.n_mean, rep.params.n_ci);
    std::printf("learned b: %.3f +- %.3f\n", rep.params.b_mean, rep.params.b_ci);
    std::printf("learned c: %.3f +- %.3f\n", rep.params.c_mean, rep.params.c_ci);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Filterbank learning for keyword spotting"};
  app.require_subcommand(1);

  RunOptions opt;
  std::string subset_str;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--data", opt.data_root, "dataset root directory")
        ->required();
    cmd->add_option("--preset", opt.preset, "backend preset: small|large");
    cmd->add_option("--reps", opt.repetitions, "independent trials");
    cmd->add_option("--seed", opt.base_seed, "base seed (trials use seed..seed+reps-1)");
    cmd->add_option("--split-seed", opt.split_seed, "speaker-split seed");
    cmd->add_option("--subset", subset_str,
                    "desk-scale subset, e.g. \"3kw+filler,cap=200/class\"");
    cmd->add_option("--out", opt.out_dir, "output directory");
    cmd->add_flag("--augment", opt.augment, "enable training-time augmentation");
    cmd->add_option("--gc-kernel", opt.gc_kernel_length,
                    "gammachirp kernel length in samples");
  };

  std::string name, name_b, ranges_str, report_a, report_b;

  auto* run = app.add_subcommand("run", "run one training regime");
  run->add_option("name", name, "regime name, e.g. FfBt_26 or GC[t]_Ic-Mel")
      ->required();
  add_common(run);

  auto* fuse = app.add_subcommand("fuse", "run a two-frontend fusion regime");
  fuse->add_option("nameA", name, "first regime")->required();
  fuse->add_option("nameB", name_b, "second regime")->required();
  add_common(fuse);

  auto* removal = app.add_subcommand("removal", "filter-removal sweep");
  removal->add_option("name", name, "fixed-frontend base regime")->required();
  removal->add_option("--ranges", ranges_str, "channel ranges a:b,c:d (1-based); 'none' = baseline")
      ->required();
  add_common(removal);

  auto* plot = app.add_subcommand("plot", "re-emit CSV/heatmap files for a report");
  plot->add_option("report", report_a, "report.txt path")->required();
  plot->add_option("--out", opt.out_dir, "output directory");

  auto* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference check of both front-ends");

  auto* compare = app.add_subcommand("compare", "95% CI overlap verdict");
  compare->add_option("reportA", report_a, "first report.txt")->required();
  compare->add_option("reportB", report_b, "second report.txt")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (!subset_str.empty()) opt.subset = parse_subset_spec(subset_str);

    if (run->parsed()) {
      ExperimentSpec spec = parse_experiment_name(name);
      spec.repetitions = opt.repetitions;
      spec.base_seed = opt.base_seed;
      spec.backend_preset = opt.preset;
      DatasetSplit data = load_and_split(opt);
      std::printf("loaded %zu/%zu/%zu train/val/test clips, %d classes\n",
                  data.train.size(), data.validation.size(), data.test.size(),
                  opt.subset.n_classes());
      ExperimentReport rep = run_experiment(spec, data, opt);
      print_report(rep);
    } else if (fuse->parsed()) {
      ExperimentSpec a = parse_experiment_name(name);
      ExperimentSpec b = parse_experiment_name(name_b);
      DatasetSplit data = load_and_split(opt);
      ExperimentReport rep = run_fusion(a, b, data, opt);
      print_report(rep);
    } else if (removal->parsed()) {
      ExperimentSpec spec = parse_experiment_name(name);
      DatasetSplit data = load_and_split(opt);
      RemovalCurve curve =
          run_filter_removal(spec, parse_ranges(ranges_str), data, opt);
      for (const auto& pt : curve.points)
        std::printf("removed [%d,%d] (%.0f-%.0f Hz): %.4f +- %.4f\n", pt.first,
                    pt.last, pt.center_lo, pt.center_hi, pt.report.mean,
                    pt.report.ci95);
    } else if (plot->parsed()) {
      ExperimentReport rep = read_report(report_a);
      std::string out_dir =
          opt.out_dir.empty() ? fs::path(report_a).parent_path().string()
                              : opt.out_dir;
      emit_plots(rep, out_dir);
      std::printf("plots written to %s\n", out_dir.c_str());
    } else if (gradcheck->parsed()) {
      // compact fidelity check: both front-ends plus a 2-block backend
      FramingConfig cfg;
      std::mt19937_64 rng(11);
      std::vector<AudioClip> clips(2);
      std::normal_distribution<double> noise(0.0, 0.1);
      for (auto& c : clips) {
        c.samples.resize(4000);
        for (auto& s : c.samples) s = noise(rng);
        c.label = int(&c - clips.data()) % 2;
      }
      std::vector<const AudioClip*> batch{&clips[0], &clips[1]};
      std::vector<int> labels{0, 1};

      GammachirpParams p = init_gammachirp(FilterScale::kMel, ParamInit::kConstant,
                                           8, cfg.sample_rate, rng);
      p.kernel_length = 256;
      GammachirpFrontend fe(p, cfg);
      fe.set_trainable(true);
      ResNetConfig bcfg = ResNetConfig::small_preset();
      bcfg.n_res_blocks = 2;
      bcfg.n_classes = 2;
      bcfg.input_K = 8;
      ResNet model(bcfg, 5);
      auto build = [&](ad::Tape& tape) {
        ad::Var feats = fe.forward(tape, batch, true);
        ad::Var lifted = ad::stack_maps(tape, {feats});
        ad::Var logits = model.forward(tape, lifted, true);
        return ad::softmax_crossentropy(tape, logits, labels);
      };
      std::vector<ad::Var> checked{p.n_raw, p.b_raw, p.c};
      auto rep = ad::grad_check(build, checked, 1e-4, 1e-4);
      int fails = 0;
      for (const auto& e : rep.entries) {
        std::printf("%-12s[%d] analytic=% .6e numeric=% .6e rel=%.2e%s\n",
                    e.param.c_str(), e.index, e.analytic, e.numeric, e.rel_err,
                    e.unreliable ? " (kink, excused)" : (e.pass ? "" : " FAIL"));
        if (!e.pass) ++fails;
      }
      std::printf("gradcheck %s\n", rep.passed ? "PASSED" : "FAILED");
      return rep.passed ? 0 : 1;
    } else if (compare->parsed()) {
      ExperimentReport a = read_report(report_a);
      ExperimentReport b = read_report(report_b);
      OverlapVerdict v = ci_overlap(a, b);
      std::printf("%s\n", v.text.c_str());
    }
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 1;
  }
  return 0;
}
