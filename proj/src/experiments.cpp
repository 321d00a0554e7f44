#include "fbkws/experiments.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace fbkws {

// ------------------------------------------------------------ name grammar

namespace {

[[noreturn]] void parse_fail(const std::string& name, size_t pos,
                             const std::string& what) {
  throw std::invalid_argument("cannot parse experiment name \"" + name +
                              "\" at position " + std::to_string(pos) + ": " +
                              what);
}

std::string trim(const std::string& s) {
  auto a = s.find_first_not_of(" \t");
  auto b = s.find_last_not_of(" \t");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

}  // namespace

ExperimentSpec parse_experiment_name(const std::string& name) {
  ExperimentSpec spec;
  spec.name = name;
  const std::string body = trim(name);
  if (body.empty()) parse_fail(name, 0, "empty name");

  if (body.rfind("GC", 0) == 0 || body.rfind("GT", 0) == 0) {
    spec.kind =
        body[1] == 'T' ? FrontendKind::kGammatone : FrontendKind::kGammachirp;
    size_t p = 2;
    if (p >= body.size() || body[p] != '[') parse_fail(name, p, "expected '['");
    ++p;
    if (p >= body.size() || (body[p] != 't' && body[p] != 'f'))
      parse_fail(name, p, "expected 't' or 'f'");
    const bool fe_trained = body[p] == 't';
    ++p;
    if (p >= body.size() || body[p] != ']') parse_fail(name, p, "expected ']'");
    ++p;
    if (body.compare(p, 2, "_I") != 0) parse_fail(name, p, "expected '_I'");
    p += 2;
    if (p >= body.size() || (body[p] != 'c' && body[p] != 'r'))
      parse_fail(name, p, "expected init 'c' or 'r'");
    spec.init = body[p] == 'c' ? ParamInit::kConstant : ParamInit::kRandom;
    ++p;
    if (p >= body.size() || body[p] != '-') parse_fail(name, p, "expected '-'");
    ++p;
    if (body.compare(p, std::string::npos, "Mel") == 0)
      spec.scale = FilterScale::kMel;
    else if (body.compare(p, std::string::npos, "Linear") == 0)
      spec.scale = FilterScale::kLinear;
    else
      parse_fail(name, p, "expected scale 'Mel' or 'Linear'");
    // the back-end is always trained in these regimes
    spec.stages = {Stage{fe_trained, true, 26}};
    return spec;
  }

  // FxBy_z chain, stages joined by '+'
  spec.kind = FrontendKind::kFbMatrix;
  size_t start = 0, base = 0;
  std::string rest = body;
  while (true) {
    auto plus = rest.find('+', start);
    std::string stage_str =
        trim(plus == std::string::npos ? rest.substr(start)
                                       : rest.substr(start, plus - start));
    size_t p = 0;
    if (stage_str.size() < 5 || stage_str[p] != 'F')
      parse_fail(name, base, "expected stage 'FxBy_z'");
    ++p;
    if (stage_str[p] != 't' && stage_str[p] != 'f')
      parse_fail(name, base + p, "expected 't' or 'f' after 'F'");
    Stage st;
    st.train_frontend = stage_str[p] == 't';
    ++p;
    if (stage_str[p] != 'B') parse_fail(name, base + p, "expected 'B'");
    ++p;
    if (stage_str[p] != 't' && stage_str[p] != 'f')
      parse_fail(name, base + p, "expected 't' or 'f' after 'B'");
    st.train_backend = stage_str[p] == 't';
    ++p;
    if (stage_str[p] != '_') parse_fail(name, base + p, "expected '_'");
    ++p;
    if (p >= stage_str.size() ||
        stage_str.find_first_not_of("0123456789", p) != std::string::npos)
      parse_fail(name, base + p, "expected epoch count");
    st.epochs = std::stoi(stage_str.substr(p));
    if (st.epochs <= 0) parse_fail(name, base + p, "epoch count must be positive");
    spec.stages.push_back(st);
    if (plus == std::string::npos) break;
    start = plus + 1;
    base = plus + 1;
  }
  return spec;
}

std::string format_experiment_name(const ExperimentSpec& spec) {
  if (spec.kind == FrontendKind::kFbMatrix) {
    std::string out;
    for (size_t i = 0; i < spec.stages.size(); ++i) {
      const auto& st = spec.stages[i];
      if (i) out += " + ";
      out += std::string("F") + (st.train_frontend ? "t" : "f") + "B" +
             (st.train_backend ? "t" : "f") + "_" + std::to_string(st.epochs);
    }
    return out;
  }
  std::string out = spec.kind == FrontendKind::kGammatone ? "GT" : "GC";
  out += std::string("[") +
         (spec.stages.at(0).train_frontend ? "t" : "f") + "]_I" +
         (spec.init == ParamInit::kConstant ? "c" : "r") + "-" +
         (spec.scale == FilterScale::kMel ? "Mel" : "Linear");
  return out;
}

// ---------------------------------------------------------------- subsets

SubsetSpec parse_subset_spec(const std::string& s) {
  SubsetSpec out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string field;
  bool have_classes = false;
  while (std::getline(ss, field, ',')) {
    field = trim(field);
    if (field.rfind("cap=", 0) == 0) {
      std::string v = field.substr(4);
      auto slash = v.find('/');
      if (slash != std::string::npos) {
        if (v.substr(slash + 1) != "class")
          throw std::invalid_argument("bad cap unit in subset spec: " + field);
        v = v.substr(0, slash);
      }
      out.cap_per_class = std::stoi(v);
      if (out.cap_per_class <= 0)
        throw std::invalid_argument("cap must be positive: " + field);
    } else {
      auto kw = field.find("kw");
      if (kw == std::string::npos)
        throw std::invalid_argument("bad subset field: " + field);
      out.n_keywords = std::stoi(field.substr(0, kw));
      if (out.n_keywords < 1 || out.n_keywords > kNumKeywords)
        throw std::invalid_argument("keyword count out of range: " + field);
      out.include_filler = field.find("+filler", kw) != std::string::npos;
      have_classes = true;
    }
  }
  if (!have_classes && out.cap_per_class == 0)
    throw std::invalid_argument("empty subset spec: " + s);
  return out;
}

std::vector<AudioClip> apply_subset(const std::vector<AudioClip>& clips,
                                    const SubsetSpec& subset) {
  std::map<int, int> counts;
  std::vector<AudioClip> out;
  for (const auto& c : clips) {
    int new_label;
    if (c.label < subset.n_keywords)
      new_label = c.label;
    else if (c.label == kFillerClass && subset.include_filler)
      new_label = subset.n_keywords;
    else
      continue;
    if (subset.cap_per_class > 0 && counts[new_label] >= subset.cap_per_class)
      continue;
    ++counts[new_label];
    out.push_back(c);
    out.back().label = new_label;
  }
  return out;
}

// -------------------------------------------------------------- statistics

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / double(xs.size());
}

double t_quantile_975(int dof) {
  static const double table[] = {
      12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
      2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
      2.080,  2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042};
  if (dof < 1) throw std::invalid_argument("t quantile needs dof >= 1");
  if (dof <= 30) return table[dof - 1];
  return 1.96 + 2.4 / double(dof);  // smooth tail toward the normal quantile
}

double ci95_halfwidth(const std::vector<double>& xs) {
  const int n = int(xs.size());
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean_of(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  const double s = std::sqrt(ss / double(n - 1));
  return t_quantile_975(n - 1) * s / std::sqrt(double(n));
}

// ----------------------------------------------------------------- running

DatasetSplit load_and_split(const RunOptions& opt) {
  auto loaded = load_dataset(opt.data_root, LabelMap::speech_commands());
  auto clips = apply_subset(loaded.clips, opt.subset);
  return split_by_speaker(clips, {0.8, 0.1, 0.1}, opt.split_seed);
}

std::shared_ptr<Frontend> make_frontend(const ExperimentSpec& spec,
                                        const RunOptions& opt,
                                        const FramingConfig& cfg,
                                        uint64_t seed) {
  if (spec.kind == FrontendKind::kFbMatrix) {
    auto fb = spec.scale == FilterScale::kMel
                  ? make_mel_filterbank(cfg.num_bins(), 40, cfg.sample_rate,
                                        0.0, cfg.sample_rate / 2.0)
                  : make_linear_filterbank(cfg.num_bins(), 40, cfg.sample_rate,
                                           0.0, cfg.sample_rate / 2.0);
    return std::make_shared<FilterbankMatrixFrontend>(fb, cfg);
  }
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + 3);
  GammachirpParams p =
      init_gammachirp(spec.scale, spec.init, 40, cfg.sample_rate, rng);
  p.kernel_length = opt.gc_kernel_length;
  if (spec.kind == FrontendKind::kGammatone) {
    p.c->val[0] = 0.0;
    p.c_trainable = false;
  }
  return std::make_shared<GammachirpFrontend>(p, cfg, opt.cochlea_mode);
}

namespace {

std::string sanitize(const std::string& name) {
  std::string out;
  for (char c : name)
    out += std::isalnum((unsigned char)c) ? c : '_';
  return out;
}

struct TrialOutcome {
  double accuracy = 0.0;
  double n = 0, b = 0, c = 0;
  std::vector<double> gains, centers, erbs;
  std::vector<double> W;  // learned filterbank matrix, empty for GC
  bool has_gc = false;
};

TrialOutcome run_trial(const ExperimentSpec& spec, const DatasetSplit& data,
                       const RunOptions& opt, uint64_t seed,
                       const std::string& trial_dir,
                       const std::pair<int, int>* removal) {
  FramingConfig cfg;
  auto frontend = make_frontend(spec, opt, cfg, seed);
  if (removal && removal->first >= 1) {
    auto* fbm = dynamic_cast<FilterbankMatrixFrontend*>(frontend.get());
    if (!fbm)
      throw std::invalid_argument("filter removal needs a filterbank-matrix frontend");
    fbm->zero_channels(removal->first, removal->second);
  }

  ResNetConfig bcfg = ResNetConfig::preset(opt.preset);
  bcfg.n_classes = opt.subset.n_classes();
  ResNet model(bcfg, seed);

  TrainConfig tcfg;
  tcfg.seed = seed;
  tcfg.augment.enabled = opt.augment;
  std::vector<std::vector<double>> noise_pool;
  if (opt.augment)
    noise_pool = load_noise_pool(
        (fs::path(opt.data_root) / "_background_noise_").string());

  TrainHistory hist = train(*frontend, model, data, tcfg, spec.stages, noise_pool);
  EvalResult ev = evaluate(*frontend, model, data.test);

  if (!trial_dir.empty()) {
    fs::create_directories(trial_dir);
    write_history_csv((fs::path(trial_dir) / "history.csv").string(), hist);
    auto tensors = frontend->params();
    for (auto& p : model.params()) tensors.push_back(p);
    ad::save_checkpoint((fs::path(trial_dir) / "checkpoint.bin").string(),
                        tensors);
    frontend->export_csv(trial_dir, "frontend");
  }

  TrialOutcome out;
  out.accuracy = ev.accuracy;
  if (auto* gc = dynamic_cast<GammachirpFrontend*>(frontend.get())) {
    out.has_gc = true;
    auto& p = gc->gc_params();
    out.n = p.effective_n();
    out.b = p.effective_b();
    out.c = p.c->val[0];
    out.gains.resize(p.gains->numel());
    for (size_t k = 0; k < out.gains.size(); ++k)
      out.gains[k] = std::max(0.0, p.gains->val[k]);
    out.centers = p.effective_centers(cfg.sample_rate);
    out.erbs = p.effective_erbs(cfg.sample_rate);
  } else if (auto* fbm = dynamic_cast<FilterbankMatrixFrontend*>(frontend.get())) {
    out.W = fbm->weights()->val;
  }
  return out;
}

ExperimentReport aggregate(const std::string& name,
                           const std::vector<TrialOutcome>& trials) {
  ExperimentReport rep;
  rep.name = name;
  rep.repetitions = int(trials.size());
  for (const auto& t : trials) rep.accuracies.push_back(t.accuracy);
  rep.mean = mean_of(rep.accuracies);
  rep.ci95 = ci95_halfwidth(rep.accuracies);
  rep.ci_defined = rep.repetitions >= 2;
  if (!trials.empty() && trials[0].has_gc) {
    rep.params.present = true;
    std::vector<double> ns, bs, cs;
    for (const auto& t : trials) {
      ns.push_back(t.n);
      bs.push_back(t.b);
      cs.push_back(t.c);
    }
    rep.params.n_mean = mean_of(ns);
    rep.params.n_ci = ci95_halfwidth(ns);
    rep.params.b_mean = mean_of(bs);
    rep.params.b_ci = ci95_halfwidth(bs);
    rep.params.c_mean = mean_of(cs);
    rep.params.c_ci = ci95_halfwidth(cs);
    const size_t K = trials[0].gains.size();
    rep.params.gain_mean.assign(K, 0.0);
    rep.params.center_mean.assign(K, 0.0);
    rep.params.erb_mean.assign(K, 0.0);
    for (const auto& t : trials)
      for (size_t k = 0; k < K; ++k) {
        rep.params.gain_mean[k] += t.gains[k] / double(trials.size());
        rep.params.center_mean[k] += t.centers[k] / double(trials.size());
        rep.params.erb_mean[k] += t.erbs[k] / double(trials.size());
      }
  }
  return rep;
}

ExperimentReport run_protocol(const ExperimentSpec& spec,
                              const DatasetSplit& data, const RunOptions& opt,
                              const std::pair<int, int>* removal,
                              const std::string& tag) {
  std::vector<TrialOutcome> trials;
  std::vector<double> w_mean;
  for (int r = 0; r < opt.repetitions; ++r) {
    const uint64_t seed = opt.base_seed + uint64_t(r);
    std::string trial_dir =
        opt.out_dir.empty()
            ? ""
            : (fs::path(opt.out_dir) / tag / ("trial_" + std::to_string(seed)))
                  .string();
    try {
      trials.push_back(run_trial(spec, data, opt, seed, trial_dir, removal));
    } catch (const std::exception& ex) {
      throw std::runtime_error("trial with seed " + std::to_string(seed) +
                               " failed: " + ex.what());
    }
    if (!trials.back().W.empty()) {
      if (w_mean.empty()) w_mean.assign(trials.back().W.size(), 0.0);
      for (size_t i = 0; i < w_mean.size(); ++i)
        w_mean[i] += trials.back().W[i] / double(opt.repetitions);
    }
  }
  ExperimentReport rep = aggregate(spec.name, trials);
  if (!opt.out_dir.empty()) {
    fs::create_directories(fs::path(opt.out_dir) / tag);
    write_report(rep,
                 (fs::path(opt.out_dir) / tag / "report.txt").string());
    emit_plots(rep, (fs::path(opt.out_dir) / tag).string());
    if (!w_mean.empty()) {
      FramingConfig cfg;
      write_matrix_csv(
          (fs::path(opt.out_dir) / tag / "W_mean.csv").string(), w_mean,
          cfg.num_bins(), 40);
      emit_filterbank_heatmap(
          w_mean, cfg.num_bins(), 40,
          (fs::path(opt.out_dir) / tag / "W_mean.pgm").string());
    }
  }
  return rep;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentSpec& spec,
                                const DatasetSplit& data,
                                const RunOptions& opt) {
  return run_protocol(spec, data, opt, nullptr, sanitize(spec.name));
}

ExperimentReport run_fusion(const ExperimentSpec& spec_a,
                            const ExperimentSpec& spec_b,
                            const DatasetSplit& data, const RunOptions& opt) {
  const std::string tag =
      "fusion_" + sanitize(spec_a.name) + "__" + sanitize(spec_b.name);
  std::vector<TrialOutcome> trials;
  for (int r = 0; r < opt.repetitions; ++r) {
    const uint64_t seed = opt.base_seed + uint64_t(r);
    FramingConfig cfg;
    auto fa = make_frontend(spec_a, opt, cfg, seed);
    auto fb = make_frontend(spec_b, opt, cfg, seed + 0x517cc1b727220a95ULL);
    FusionFrontend fused(fa, fb);

    // fused stages: both sub-frontends obey their own trainability; the
    // union schedule trains for the longer of the two stage lists.
    if (spec_a.stages.size() != 1 || spec_b.stages.size() != 1)
      throw std::invalid_argument("fusion supports single-stage regimes");
    Stage st;
    st.train_backend = true;
    st.epochs = std::max(spec_a.stages[0].epochs, spec_b.stages[0].epochs);
    st.train_frontend =
        spec_a.stages[0].train_frontend || spec_b.stages[0].train_frontend;
    fa->set_trainable(spec_a.stages[0].train_frontend);
    fb->set_trainable(spec_b.stages[0].train_frontend);

    ResNetConfig bcfg = ResNetConfig::preset(opt.preset);
    bcfg.n_classes = opt.subset.n_classes();
    bcfg.input_channels = 2;
    ResNet model(bcfg, seed);

    TrainConfig tcfg;
    tcfg.seed = seed;
    tcfg.augment.enabled = opt.augment;

    // set_trainable inside train() would clobber the per-frontend flags, so
    // the fused schedule drives them explicitly per batch via a wrapper.
    class PinnedFusion : public Frontend {
     public:
      PinnedFusion(FusionFrontend& f, bool a_train, bool b_train)
          : f_(f), a_(a_train), b_(b_train) {}
      ad::Var forward(ad::Tape& tape,
                      const std::vector<const AudioClip*>& batch,
                      bool train) override {
        return f_.forward(tape, batch, train);
      }
      std::vector<ad::Var> params() override { return f_.params(); }
      int num_channels() const override { return f_.num_channels(); }
      void set_trainable(bool trainable) override {
        f_.first().set_trainable(trainable && a_);
        f_.second().set_trainable(trainable && b_);
      }
      void export_csv(const std::string& dir,
                      const std::string& prefix) const override {
        f_.export_csv(dir, prefix);
      }
      std::vector<ad::BatchNormState*> bn_states() override {
        return f_.bn_states();
      }

     private:
      FusionFrontend& f_;
      bool a_, b_;
    };
    PinnedFusion pinned(fused, spec_a.stages[0].train_frontend,
                        spec_b.stages[0].train_frontend);
    // mark the stage as frontend-trainable if either half is
    st.train_frontend = true;

    std::string trial_dir =
        opt.out_dir.empty()
            ? ""
            : (fs::path(opt.out_dir) / tag / ("trial_" + std::to_string(seed)))
                  .string();
    TrainHistory hist = train(pinned, model, data, tcfg, {st});
    EvalResult ev = evaluate(pinned, model, data.test);
    if (!trial_dir.empty()) {
      fs::create_directories(trial_dir);
      write_history_csv((fs::path(trial_dir) / "history.csv").string(), hist);
      pinned.export_csv(trial_dir, "frontend");
    }
    TrialOutcome out;
    out.accuracy = ev.accuracy;
    trials.push_back(out);
  }
  ExperimentReport rep = aggregate(
      "Fusion(" + spec_a.name + ", " + spec_b.name + ")", trials);
  if (!opt.out_dir.empty()) {
    fs::create_directories(fs::path(opt.out_dir) / tag);
    write_report(rep, (fs::path(opt.out_dir) / tag / "report.txt").string());
    emit_plots(rep, (fs::path(opt.out_dir) / tag).string());
  }
  return rep;
}

RemovalCurve run_filter_removal(const ExperimentSpec& base_spec,
                                const std::vector<std::pair<int, int>>& ranges,
                                const DatasetSplit& data,
                                const RunOptions& opt) {
  if (base_spec.kind != FrontendKind::kFbMatrix)
    throw std::invalid_argument("filter removal expects a filterbank-matrix regime");
  for (const auto& st : base_spec.stages)
    if (st.train_frontend)
      throw std::invalid_argument(
          "filter removal expects a fixed-frontend (log-Mel) regime");

  FramingConfig cfg;
  auto ref_frontend = make_frontend(base_spec, opt, cfg, opt.base_seed);
  auto* fbm = dynamic_cast<FilterbankMatrixFrontend*>(ref_frontend.get());
  const auto& centers = fbm->center_freqs();

  RemovalCurve curve;
  for (const auto& range : ranges) {
    RemovalPoint pt;
    pt.first = range.first;
    pt.last = range.second;
    std::string tag = "removal_" + std::to_string(range.first) + "_" +
                      std::to_string(range.second);
    if (range.first >= 1) {
      if (range.first > range.second || range.second > int(centers.size()))
        throw std::out_of_range("removal interval out of bounds");
      pt.center_lo = centers[range.first - 1];
      pt.center_hi = centers[range.second - 1];
      pt.report = run_protocol(base_spec, data, opt, &range, tag);
    } else {
      pt.report = run_protocol(base_spec, data, opt, nullptr, tag);
    }
    curve.points.push_back(pt);
  }
  if (!opt.out_dir.empty())
    write_removal_csv(curve,
                      (fs::path(opt.out_dir) / "removal_curve.csv").string());
  return curve;
}

// ----------------------------------------------------------------- reports

void write_report(const ExperimentReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report " + path);
  out.precision(17);
  out << "name: " << report.name << '\n';
  out << "repetitions: " << report.repetitions << '\n';
  out << "accuracies:";
  for (double a : report.accuracies) out << ' ' << a;
  out << '\n';
  out << "mean: " << report.mean << '\n';
  if (report.ci_defined)
    out << "ci95: " << report.ci95 << '\n';
  else
    out << "ci95: undefined\n";
  out << "ci_formula: student_t_0.975_df_" << std::max(0, report.repetitions - 1)
      << '\n';
  if (report.params.present) {
    out << "n: " << report.params.n_mean << " +- " << report.params.n_ci << '\n';
    out << "b: " << report.params.b_mean << " +- " << report.params.b_ci << '\n';
    out << "c: " << report.params.c_mean << " +- " << report.params.c_ci << '\n';
  }
}

ExperimentReport read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read report " + path);
  ExperimentReport rep;
  std::string line;
  while (std::getline(in, line)) {
    auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    const std::string key = line.substr(0, colon);
    const std::string val = trim(line.substr(colon + 1));
    if (key == "name")
      rep.name = val;
    else if (key == "repetitions")
      rep.repetitions = std::stoi(val);
    else if (key == "accuracies") {
      std::stringstream ss(val);
      double a;
      while (ss >> a) rep.accuracies.push_back(a);
    } else if (key == "mean")
      rep.mean = std::stod(val);
    else if (key == "ci95") {
      if (val == "undefined") {
        rep.ci_defined = false;
        rep.ci95 = std::numeric_limits<double>::quiet_NaN();
      } else {
        rep.ci_defined = true;
        rep.ci95 = std::stod(val);
      }
    }
  }
  return rep;
}

void write_removal_csv(const RemovalCurve& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  out << "first,last,center_lo_hz,center_hi_hz,mean_accuracy,ci95\n";
  for (const auto& pt : curve.points)
    out << pt.first << ',' << pt.last << ',' << pt.center_lo << ','
        << pt.center_hi << ',' << pt.report.mean << ',' << pt.report.ci95
        << '\n';
}

void emit_plots(const ExperimentReport& report, const std::string& out_dir) {
  fs::create_directories(out_dir);
  {
    std::ofstream out(fs::path(out_dir) / "accuracies.csv");
    out.precision(17);
    out << "trial,accuracy\n";
    for (size_t i = 0; i < report.accuracies.size(); ++i)
      out << i + 1 << ',' << report.accuracies[i] << '\n';
  }
  if (report.params.present) {
    std::ofstream out(fs::path(out_dir) / "learned_params.csv");
    out.precision(17);
    out << "k,gain_mean,center_hz_mean,erb_hz_mean\n";
    for (size_t k = 0; k < report.params.gain_mean.size(); ++k)
      out << k + 1 << ',' << report.params.gain_mean[k] << ','
          << report.params.center_mean[k] << ',' << report.params.erb_mean[k]
          << '\n';
  }
}

void emit_filterbank_heatmap(const std::vector<double>& weights, int F, int K,
                             const std::string& path_pgm) {
  double wmax = 0.0;
  for (double w : weights) wmax = std::max(wmax, std::abs(w));
  if (wmax == 0.0) wmax = 1.0;
  std::ofstream out(path_pgm, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path_pgm);
  // rows = channels (top channel first), columns = frequency bins
  out << "P5\n" << F << ' ' << K << "\n255\n";
  for (int k = K - 1; k >= 0; --k)
    for (int f = 0; f < F; ++f) {
      const double v = std::max(0.0, weights[size_t(f) * K + k]) / wmax;
      out.put(char(int(v * 255.0)));
    }
}

OverlapVerdict ci_overlap(const ExperimentReport& a, const ExperimentReport& b) {
  OverlapVerdict v;
  if (!a.ci_defined || !b.ci_defined)
    throw std::invalid_argument("CI overlap needs both CIs defined (reps >= 2)");
  v.lo_a = a.mean - a.ci95;
  v.hi_a = a.mean + a.ci95;
  v.lo_b = b.mean - b.ci95;
  v.hi_b = b.mean + b.ci95;
  v.overlaps = v.lo_a <= v.hi_b && v.lo_b <= v.hi_a;
  std::ostringstream os;
  os.precision(4);
  os << a.name << " [" << v.lo_a << ", " << v.hi_a << "] vs " << b.name << " ["
     << v.lo_b << ", " << v.hi_b << "]: "
     << (v.overlaps ? "95% CIs overlap -> no statistically significant difference"
                    : "95% CIs do not overlap -> statistically significant difference");
  v.text = os.str();
  return v;
}

}  // namespace fbkws
