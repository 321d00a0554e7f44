#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fbkws/data.hpp"

namespace fbkws::testsupport {

// One synthetic clip: class-specific tone (plus harmonic and a little
// noise), amplitude-modulated so it is not trivially stationary.
AudioClip synth_clip(int label, double base_freq, uint64_t seed,
                     int n_samples = kClipSamples);

// Distinct, well-separated carrier frequency per class.
double class_freq(int label);

// In-memory toy set: n_per_class clips for each of n_classes classes,
// round-robin speaker ids spk0..spk<n_speakers-1>.
std::vector<AudioClip> make_toy_clips(int n_classes, int n_per_class,
                                      int n_speakers, uint64_t seed);

// Writes a GSCD-layout corpus under root: one directory per word with
// 16 kHz 16-bit PCM mono wavs named <speaker>_nohash_<i>.wav.
void write_corpus(const std::string& root,
                  const std::vector<std::string>& words,
                  const std::vector<int>& labels, int clips_per_word,
                  int n_speakers, uint64_t seed);

}  // namespace fbkws::testsupport
