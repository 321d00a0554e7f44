#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fbkws/autodiff.hpp"
#include "fbkws/data.hpp"
#include "fbkws/frontends.hpp"

namespace fbkws {

struct ResNetConfig {
  int n_res_blocks = 3;
  int channels = 19;
  bool dilation = false;
  int n_classes = 11;
  int input_T = 98;
  int input_K = 40;
  int input_channels = 1;  // 2 for fused front-ends

  static ResNetConfig small_preset();  // res8-narrow scale
  static ResNetConfig large_preset();  // res15 scale
  static ResNetConfig preset(const std::string& name);
};

// Conv stem -> residual blocks (conv-bn-relu-conv-bn + skip, relu) ->
// global average pool -> affine logits.
class ResNet {
 public:
  ResNet(const ResNetConfig& cfg, uint64_t seed);

  // input (B, C, T, K) -> logits (B, n_classes)
  ad::Var forward(ad::Tape& tape, const ad::Var& input, bool train);

  std::vector<ad::Var> params() { return params_; }
  void set_trainable(bool trainable);
  size_t param_count() const;
  const ResNetConfig& config() const { return cfg_; }
  std::vector<ad::BatchNormState>& bn_states() { return bn_states_; }

 private:
  ResNetConfig cfg_;
  ad::Var stem_;
  struct Block {
    ad::Var conv1, conv2, bn1_gamma, bn1_beta, bn2_gamma, bn2_beta;
    int dilation = 1;
  };
  std::vector<Block> blocks_;
  ad::Var fc_w_, fc_b_;
  std::vector<ad::Var> params_;
  std::vector<ad::BatchNormState> bn_states_;  // one per bn layer
};

struct TrainConfig {
  int epochs = 26;
  int batch_size = 64;
  double lr = 0.001, beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  uint64_t seed = 0;
  AugmentConfig augment;  // off by default
};

struct Stage {
  bool train_frontend = false;
  bool train_backend = true;
  int epochs = 26;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  double final_train_loss = 0.0;
};

class Adam {
 public:
  Adam(std::vector<ad::Var> params, double lr, double beta1, double beta2,
       double eps);
  // Applies one update from accumulated grads, then zeroes them. Parameters
  // whose requires_grad is off are skipped entirely.
  void step();

 private:
  std::vector<ad::Var> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<int> confusion;  // n_classes x n_classes, rows = true class
  int n_classes = 0;
  int total = 0;
};

// Runs the staged schedule over the training split. Throws if the training
// set is empty or a stage freezes both halves. Shuffling, augmentation and
// any frontend randomness derive from cfg.seed.
TrainHistory train(Frontend& frontend, ResNet& model, const DatasetSplit& data,
                   const TrainConfig& cfg, const std::vector<Stage>& stages,
                   const std::vector<std::vector<double>>& noise_pool = {});

EvalResult evaluate(Frontend& frontend, ResNet& model,
                    const std::vector<AudioClip>& split, int batch_size = 64);

void write_history_csv(const std::string& path, const TrainHistory& history);

}  // namespace fbkws
