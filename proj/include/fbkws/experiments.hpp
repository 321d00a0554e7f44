#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fbkws/backend.hpp"
#include "fbkws/data.hpp"
#include "fbkws/frontends.hpp"

namespace fbkws {

enum class FrontendKind { kFbMatrix, kGammachirp, kGammatone };

struct ExperimentSpec {
  std::string name;
  FrontendKind kind = FrontendKind::kFbMatrix;
  ParamInit init = ParamInit::kConstant;   // GC/GT: constant or random n,b,c
  FilterScale scale = FilterScale::kMel;   // init scale for W / f_k, ERB_k
  std::vector<Stage> stages;
  int repetitions = 10;
  uint64_t base_seed = 1;
  std::string backend_preset = "small";
};

// "FfBt_26", "FfBt_13 + FtBt_13", "GC[t]_Ic-Mel", "GT[f]_Ic-Mel", ...
// Malformed names throw std::invalid_argument naming the offending position.
ExperimentSpec parse_experiment_name(const std::string& name);
std::string format_experiment_name(const ExperimentSpec& spec);

struct SubsetSpec {
  int n_keywords = 10;
  bool include_filler = true;
  int cap_per_class = 0;  // 0 = unlimited
  int n_classes() const { return n_keywords + (include_filler ? 1 : 0); }
};

// "3kw+filler,cap=200/class" -> 3 keywords + filler, at most 200 clips per
// class. Empty string means the full 11-class task.
SubsetSpec parse_subset_spec(const std::string& s);

// Relabels clips to the compacted class set (keywords 0..n-1, filler n) and
// drops everything else; per-class caps applied deterministically.
std::vector<AudioClip> apply_subset(const std::vector<AudioClip>& clips,
                                    const SubsetSpec& subset);

struct ParamSummary {
  double n_mean = 0, n_ci = 0;
  double b_mean = 0, b_ci = 0;
  double c_mean = 0, c_ci = 0;
  std::vector<double> gain_mean, center_mean, erb_mean;  // per channel
  bool present = false;
};

struct ExperimentReport {
  std::string name;
  int repetitions = 0;
  std::vector<double> accuracies;
  double mean = 0.0;
  double ci95 = 0.0;          // half-width; NaN when repetitions < 2
  bool ci_defined = false;
  ParamSummary params;
};

// Mean and Student-t 95% half-width (t_{0.975,R-1} * s / sqrt(R)).
double mean_of(const std::vector<double>& xs);
double ci95_halfwidth(const std::vector<double>& xs);
double t_quantile_975(int dof);

struct RunOptions {
  std::string data_root;
  std::string out_dir;
  SubsetSpec subset;
  std::string preset = "small";
  int repetitions = 10;
  uint64_t base_seed = 1;
  uint64_t split_seed = 7;
  bool augment = false;
  int gc_kernel_length = 2048;
  ad::CochleaMode cochlea_mode = ad::CochleaMode::kParsevalRect;
};

// Factory shared by all protocols: the regime's frontend, freshly initialized
// for the given trial seed.
std::shared_ptr<Frontend> make_frontend(const ExperimentSpec& spec,
                                        const RunOptions& opt,
                                        const FramingConfig& cfg,
                                        uint64_t seed);

ExperimentReport run_experiment(const ExperimentSpec& spec,
                                const DatasetSplit& data,
                                const RunOptions& opt);

ExperimentReport run_fusion(const ExperimentSpec& spec_a,
                            const ExperimentSpec& spec_b,
                            const DatasetSplit& data, const RunOptions& opt);

struct RemovalPoint {
  int first = 0, last = 0;         // 1-based channel interval; 0,0 = none
  double center_lo = 0, center_hi = 0;  // Hz span of removed channels
  ExperimentReport report;
};

struct RemovalCurve {
  std::vector<RemovalPoint> points;
};

// base_spec must be a fixed-frontend filterbank-matrix regime; each interval
// zeroes the corresponding W columns (shape preserved) before training.
RemovalCurve run_filter_removal(const ExperimentSpec& base_spec,
                                const std::vector<std::pair<int, int>>& ranges,
                                const DatasetSplit& data,
                                const RunOptions& opt);

void write_report(const ExperimentReport& report, const std::string& path);
ExperimentReport read_report(const std::string& path);
void write_removal_csv(const RemovalCurve& curve, const std::string& path);

// CSV (and PGM heatmaps for matrices) for the report/parameter figures.
void emit_plots(const ExperimentReport& report, const std::string& out_dir);
void emit_filterbank_heatmap(const std::vector<double>& weights, int F, int K,
                             const std::string& path_pgm);

struct OverlapVerdict {
  double lo_a = 0, hi_a = 0, lo_b = 0, hi_b = 0;
  bool overlaps = false;
  std::string text;
};

// Comparison verdict between two reports: do the two 95% CIs overlap?
OverlapVerdict ci_overlap(const ExperimentReport& a, const ExperimentReport& b);

DatasetSplit load_and_split(const RunOptions& opt);

}  // namespace fbkws
