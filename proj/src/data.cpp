#include "fbkws/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

#include "fbkws/wav.hpp"

namespace fs = std::filesystem;

namespace fbkws {

int LabelMap::label_of(const std::string& word) const {
  for (size_t i = 0; i < keywords.size(); ++i)
    if (keywords[i] == word) return int(i);
  if (filler_words.count(word)) return kFillerClass;
  return -1;
}

LabelMap LabelMap::speech_commands() {
  LabelMap m;
  m.keywords = {"yes", "no",  "up",  "down", "left",
                "right", "on", "off", "stop", "go"};
  m.filler_words = {"backward", "bed",    "bird",  "cat",   "dog",
                    "eight",    "five",   "follow", "forward", "four",
                    "happy",    "house",  "learn", "marvin", "nine",
                    "one",      "seven",  "sheila", "six",   "three",
                    "tree",     "two",    "visual", "wow",   "zero"};
  return m;
}

namespace {

std::string speaker_from_filename(const std::string& stem) {
  auto us = stem.find('_');
  return us == std::string::npos ? stem : stem.substr(0, us);
}

}  // namespace

LoadReport load_dataset(const std::string& root, const LabelMap& label_map) {
  if (!fs::is_directory(root))
    throw std::runtime_error("dataset root not found: " + root);
  LoadReport rep;
  std::vector<std::string> words;
  for (const auto& e : fs::directory_iterator(root)) {
    if (!e.is_directory()) continue;
    std::string word = e.path().filename().string();
    if (label_map.label_of(word) >= 0) words.push_back(word);
  }
  std::sort(words.begin(), words.end());
  for (const auto& word : words) {
    int label = label_map.label_of(word);
    std::vector<std::string> files;
    for (const auto& f : fs::directory_iterator(fs::path(root) / word))
      if (f.is_regular_file() && f.path().extension() == ".wav")
        files.push_back(f.path().filename().string());
    std::sort(files.begin(), files.end());
    for (const auto& fname : files) {
      std::string full = (fs::path(root) / word / fname).string();
      std::string rel = word + "/" + fname;
      try {
        WavData w = read_wav(full);
        if (w.sample_rate != kSampleRate)
          throw std::runtime_error("sample rate " + std::to_string(w.sample_rate));
        if (int(w.samples.size()) > kClipSamples)
          throw std::runtime_error("clip longer than 1 s (" +
                                   std::to_string(w.samples.size()) + " samples)");
        AudioClip clip;
        clip.samples = std::move(w.samples);
        clip.samples.resize(kClipSamples, 0.0);  // zero-pad short clips
        clip.sample_rate = kSampleRate;
        clip.label = label;
        clip.speaker_id = speaker_from_filename(fs::path(fname).stem().string());
        clip.rel_path = rel;
        rep.clips.push_back(std::move(clip));
      } catch (const std::exception& ex) {
        rep.file_errors.push_back(rel + ": " + ex.what());
      }
    }
  }
  return rep;
}

std::vector<std::vector<double>> load_noise_pool(const std::string& dir) {
  std::vector<std::vector<double>> pool;
  if (!fs::is_directory(dir)) return pool;
  std::vector<std::string> files;
  for (const auto& f : fs::directory_iterator(dir))
    if (f.is_regular_file() && f.path().extension() == ".wav")
      files.push_back(f.path().string());
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    try {
      WavData w = read_wav(p);
      if (w.sample_rate == kSampleRate && !w.samples.empty())
        pool.push_back(std::move(w.samples));
    } catch (const std::exception&) {
      // noise files are optional; skip unreadable ones
    }
  }
  return pool;
}

DatasetSplit split_by_speaker(const std::vector<AudioClip>& clips,
                              std::array<double, 3> fractions, uint64_t seed) {
  double fsum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(fsum - 1.0) > 1e-9)
    throw std::invalid_argument("split fractions must sum to 1");
  std::map<std::string, std::vector<size_t>> by_speaker;
  for (size_t i = 0; i < clips.size(); ++i)
    by_speaker[clips[i].speaker_id].push_back(i);
  if (by_speaker.size() < 3)
    throw std::runtime_error("need at least 3 distinct speakers, got " +
                             std::to_string(by_speaker.size()));

  std::vector<std::string> speakers;
  for (const auto& [s, _] : by_speaker) speakers.push_back(s);
  std::mt19937_64 rng(seed);
  std::shuffle(speakers.begin(), speakers.end(), rng);

  const double total = double(clips.size());
  std::array<std::vector<std::string>, 3> groups;
  double cum = 0.0;
  size_t si = 0;
  for (int g = 0; g < 3; ++g) {
    double target = 0.0;
    for (int j = 0; j <= g; ++j) target += fractions[j];
    while (si < speakers.size() &&
           (g == 2 || cum < target * total - 1e-9)) {
      // keep one speaker in reserve for each remaining group
      if (g < 2 && speakers.size() - si <= size_t(2 - g)) break;
      groups[g].push_back(speakers[si]);
      cum += double(by_speaker[speakers[si]].size());
      ++si;
    }
    if (groups[g].empty() && si < speakers.size()) {
      groups[g].push_back(speakers[si]);
      cum += double(by_speaker[speakers[si]].size());
      ++si;
    }
  }

  DatasetSplit out;
  out.fractions = fractions;
  auto fill = [&](const std::vector<std::string>& grp,
                  std::vector<AudioClip>& dst) {
    for (const auto& s : grp)
      for (size_t i : by_speaker[s]) dst.push_back(clips[i]);
  };
  fill(groups[0], out.train);
  fill(groups[1], out.validation);
  fill(groups[2], out.test);
  return out;
}

AudioClip augment(const AudioClip& clip,
                  const std::vector<std::vector<double>>& noise_pool,
                  const AugmentConfig& cfg, std::mt19937_64& rng) {
  if (!cfg.enabled) return clip;
  AudioClip out = clip;
  const int n = int(clip.samples.size());

  std::uniform_int_distribution<int> shift_dist(-cfg.max_shift, cfg.max_shift);
  int shift = shift_dist(rng);
  std::fill(out.samples.begin(), out.samples.end(), 0.0);
  for (int i = 0; i < n; ++i) {
    int j = i - shift;  // positive shift delays onset
    if (j >= 0 && j < n) out.samples[i] = clip.samples[j];
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (!noise_pool.empty() && unit(rng) < cfg.noise_prob) {
    std::uniform_int_distribution<size_t> pick(0, noise_pool.size() - 1);
    const auto& noise = noise_pool[pick(rng)];
    size_t max_off = noise.size() > size_t(n) ? noise.size() - size_t(n) : 0;
    std::uniform_int_distribution<size_t> off_dist(0, max_off);
    size_t off = off_dist(rng);
    double gain = unit(rng) * cfg.noise_gain_max;
    for (int i = 0; i < n; ++i) {
      size_t ni = off + size_t(i);
      double v = out.samples[i] + gain * (ni < noise.size() ? noise[ni] : 0.0);
      out.samples[i] = std::clamp(v, -1.0, 1.0);
    }
  }
  return out;
}

void export_split_manifest(const DatasetSplit& split, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest " + path);
  auto dump = [&](const std::vector<AudioClip>& v, const char* tag) {
    for (const auto& c : v) out << c.rel_path << '\t' << tag << '\n';
  };
  dump(split.train, "train");
  dump(split.validation, "validation");
  dump(split.test, "test");
}

DatasetSplit import_split_manifest(const std::vector<AudioClip>& clips,
                                   const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read manifest " + path);
  std::map<std::string, std::string> assignment;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("malformed manifest line: " + line);
    assignment[line.substr(0, tab)] = line.substr(tab + 1);
  }
  DatasetSplit out;
  for (const auto& c : clips) {
    auto it = assignment.find(c.rel_path);
    if (it == assignment.end()) continue;
    if (it->second == "train")
      out.train.push_back(c);
    else if (it->second == "validation")
      out.validation.push_back(c);
    else if (it->second == "test")
      out.test.push_back(c);
    else
      throw std::runtime_error("unknown split tag: " + it->second);
  }
  return out;
}

}  // namespace fbkws
