#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace fbkws {

constexpr int kSampleRate = 16000;
constexpr int kClipSamples = 16000;  // exactly one second
constexpr int kNumKeywords = 10;
constexpr int kFillerClass = 10;
constexpr int kNumClasses = 11;

struct AudioClip {
  std::vector<double> samples;  // length kClipSamples, values in [-1, 1]
  int sample_rate = kSampleRate;
  int label = -1;               // 0..9 keyword, 10 filler
  std::string speaker_id;
  std::string rel_path;         // "word/file.wav" relative to dataset root
};

struct LabelMap {
  std::vector<std::string> keywords;      // fixed order, indices 0..9
  std::set<std::string> filler_words;

  // -1 if the word is neither a keyword nor a filler word.
  int label_of(const std::string& word) const;

  static LabelMap speech_commands();      // the GSCD 10+25 word inventory
};

struct DatasetSplit {
  std::vector<AudioClip> train, validation, test;
  std::array<double, 3> fractions{0.8, 0.1, 0.1};
};

struct LoadReport {
  std::vector<AudioClip> clips;
  std::vector<std::string> file_errors;  // "path: reason", non-fatal
};

// Walks root/<word>/*.wav for every word in the label map. Clips shorter
// than one second are zero-padded at the end; longer ones are rejected as
// corrupt. Missing root throws; per-file problems go to file_errors.
LoadReport load_dataset(const std::string& root, const LabelMap& label_map);

// Arbitrary-length mono 16 kHz wavs (for background-noise mixing).
std::vector<std::vector<double>> load_noise_pool(const std::string& dir);

// Speaker-disjoint split, deterministic for a fixed seed. Throws if fewer
// than 3 distinct speakers are present or fractions do not sum to 1.
DatasetSplit split_by_speaker(const std::vector<AudioClip>& clips,
                              std::array<double, 3> fractions, uint64_t seed);

struct AugmentConfig {
  bool enabled = false;
  int max_shift = 1600;          // +-100 ms at 16 kHz
  double noise_prob = 0.8;
  double noise_gain_max = 0.1;   // amplitude factor ~ U[0, noise_gain_max]
};

// Random time shift (zero fill) plus optional background-noise mixing.
// Length and label are never altered. Identity when cfg.enabled is false.
AudioClip augment(const AudioClip& clip,
                  const std::vector<std::vector<double>>& noise_pool,
                  const AugmentConfig& cfg, std::mt19937_64& rng);

// Manifest: one "relative/path<TAB>split" line per clip, split in
// {train, validation, test}.
void export_split_manifest(const DatasetSplit& split, const std::string& path);
DatasetSplit import_split_manifest(const std::vector<AudioClip>& clips,
                                   const std::string& path);

}  // namespace fbkws
