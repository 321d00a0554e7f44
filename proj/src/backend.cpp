#include "fbkws/backend.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace fbkws {

ResNetConfig ResNetConfig::small_preset() {
  ResNetConfig c;
  c.n_res_blocks = 3;
  c.channels = 19;
  c.dilation = false;
  return c;
}

ResNetConfig ResNetConfig::large_preset() {
  ResNetConfig c;
  c.n_res_blocks = 6;
  c.channels = 45;
  c.dilation = true;
  return c;
}

ResNetConfig ResNetConfig::preset(const std::string& name) {
  if (name == "small") return small_preset();
  if (name == "large") return large_preset();
  throw std::invalid_argument("unknown preset: " + name);
}

namespace {

std::vector<double> he_init(std::mt19937_64& rng, size_t n, int fan_in) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(fan_in)));
  std::vector<double> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

}  // namespace

ResNet::ResNet(const ResNetConfig& cfg, uint64_t seed) : cfg_(cfg) {
  if (cfg.input_T < 3 || cfg.input_K < 3)
    throw std::invalid_argument("input smaller than the stem receptive field");
  std::mt19937_64 rng(seed);
  const int ch = cfg.channels;

  stem_ = ad::make_param(
      {ch, cfg.input_channels, 3, 3},
      he_init(rng, size_t(ch) * cfg.input_channels * 9, cfg.input_channels * 9),
      "backend.stem");
  params_.push_back(stem_);

  for (int i = 0; i < cfg.n_res_blocks; ++i) {
    Block b;
    b.dilation = cfg.dilation ? (1 << std::min(i, 3)) : 1;
    const std::string tag = "backend.block" + std::to_string(i);
    b.conv1 = ad::make_param({ch, ch, 3, 3},
                             he_init(rng, size_t(ch) * ch * 9, ch * 9),
                             tag + ".conv1");
    b.conv2 = ad::make_param({ch, ch, 3, 3},
                             he_init(rng, size_t(ch) * ch * 9, ch * 9),
                             tag + ".conv2");
    b.bn1_gamma = ad::make_param(std::vector<int>{ch},
                                 std::vector<double>(ch, 1.0), tag + ".bn1_g");
    b.bn1_beta = ad::make_param(std::vector<int>{ch},
                                std::vector<double>(ch, 0.0), tag + ".bn1_b");
    b.bn2_gamma = ad::make_param(std::vector<int>{ch},
                                 std::vector<double>(ch, 1.0), tag + ".bn2_g");
    b.bn2_beta = ad::make_param(std::vector<int>{ch},
                                std::vector<double>(ch, 0.0), tag + ".bn2_b");
    for (const auto& p : {b.conv1, b.conv2, b.bn1_gamma, b.bn1_beta,
                          b.bn2_gamma, b.bn2_beta})
      params_.push_back(p);
    blocks_.push_back(b);
  }
  bn_states_.resize(size_t(cfg.n_res_blocks) * 2);
  for (auto& s : bn_states_) s.channels = ch;

  fc_w_ = ad::make_param({ch, cfg.n_classes},
                         he_init(rng, size_t(ch) * cfg.n_classes, ch),
                         "backend.fc_w");
  fc_b_ = ad::make_param(std::vector<int>{cfg.n_classes},
                         std::vector<double>(cfg.n_classes, 0.0),
                         "backend.fc_b");
  params_.push_back(fc_w_);
  params_.push_back(fc_b_);
}

ad::Var ResNet::forward(ad::Tape& tape, const ad::Var& input, bool train) {
  if (input->shape.size() != 4 || input->shape[1] != cfg_.input_channels)
    throw std::invalid_argument("backend expects (B," +
                                std::to_string(cfg_.input_channels) + ",T,K)");
  ad::Var h = ad::conv2d(tape, input, stem_);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    auto& b = blocks_[i];
    ad::Var y = ad::conv2d(tape, h, b.conv1, b.dilation);
    y = ad::batchnorm(tape, y, b.bn1_gamma, b.bn1_beta, bn_states_[2 * i],
                      ad::BNLayout::kNCHW, train);
    y = ad::relu(tape, y);
    y = ad::conv2d(tape, y, b.conv2, b.dilation);
    y = ad::batchnorm(tape, y, b.bn2_gamma, b.bn2_beta, bn_states_[2 * i + 1],
                      ad::BNLayout::kNCHW, train);
    h = ad::relu(tape, ad::add(tape, y, h));  // identity skip
  }
  ad::Var pooled = ad::mean_hw(tape, h);
  return ad::add_rowvec(tape, ad::matmul(tape, pooled, fc_w_), fc_b_);
}

void ResNet::set_trainable(bool trainable) {
  for (auto& p : params_) p->requires_grad = trainable;
}

size_t ResNet::param_count() const {
  size_t n = 0;
  for (const auto& p : params_) n += p->numel();
  return n;
}

Adam::Adam(std::vector<ad::Var> params, double lr, double beta1, double beta2,
           double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p->numel(), 0.0);
    v_.emplace_back(p->numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, double(t_));
  const double bc2 = 1.0 - std::pow(beta2_, double(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    auto& p = params_[pi];
    if (!p->requires_grad) continue;
    p->ensure_grad();
    for (size_t i = 0; i < p->val.size(); ++i) {
      const double g = p->grad[i];
      m_[pi][i] = beta1_ * m_[pi][i] + (1.0 - beta1_) * g;
      v_[pi][i] = beta2_ * v_[pi][i] + (1.0 - beta2_) * g * g;
      const double mhat = m_[pi][i] / bc1;
      const double vhat = v_[pi][i] / bc2;
      p->val[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
    p->zero_grad();
  }
}

namespace {

std::vector<ad::Var> trainable_union(Frontend& fe, ResNet& be) {
  auto out = fe.params();
  for (auto& p : be.params()) out.push_back(p);
  return out;
}

ad::Var lift_features(ad::Tape& tape, const ad::Var& feats) {
  if (feats->shape.size() == 4) return feats;  // fused (B,n,T,K)
  return ad::stack_maps(tape, {feats});
}

}  // namespace

TrainHistory train(Frontend& frontend, ResNet& model, const DatasetSplit& data,
                   const TrainConfig& cfg, const std::vector<Stage>& stages,
                   const std::vector<std::vector<double>>& noise_pool) {
  if (data.train.empty()) throw std::runtime_error("empty training set");
  for (const auto& st : stages)
    if (!st.train_frontend && !st.train_backend)
      throw std::invalid_argument("stage freezes both front- and back-end");

  std::mt19937_64 shuffle_rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 1);
  std::mt19937_64 augment_rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 2);

  TrainHistory history;
  int epoch_counter = 0;
  std::vector<size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), size_t(0));

  for (const auto& stage : stages) {
    frontend.set_trainable(stage.train_frontend);
    model.set_trainable(stage.train_backend);
    auto all = trainable_union(frontend, model);
    Adam opt(all, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);

    for (int e = 0; e < stage.epochs; ++e) {
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      double loss_sum = 0.0;
      int n_batches = 0;
      for (size_t start = 0; start < order.size();
           start += size_t(cfg.batch_size)) {
        const size_t end =
            std::min(order.size(), start + size_t(cfg.batch_size));
        std::vector<AudioClip> augmented;
        std::vector<const AudioClip*> batch;
        std::vector<int> labels;
        augmented.reserve(end - start);
        for (size_t i = start; i < end; ++i) {
          const AudioClip& c = data.train[order[i]];
          if (cfg.augment.enabled) {
            augmented.push_back(augment(c, noise_pool, cfg.augment, augment_rng));
            augmented.back().rel_path.clear();  // bypass feature caches
            batch.push_back(&augmented.back());
          } else {
            batch.push_back(&c);
          }
          labels.push_back(c.label);
        }
        ad::Tape tape;
        ad::Var feats = frontend.forward(tape, batch, /*train=*/true);
        ad::Var logits = model.forward(tape, lift_features(tape, feats), true);
        ad::Var loss = ad::softmax_crossentropy(tape, logits, labels);
        ad::zero_grads(all);
        tape.backward(loss);
        opt.step();
        loss_sum += loss->val[0];
        ++n_batches;
      }
      EpochRecord rec;
      rec.epoch = ++epoch_counter;
      rec.train_loss = loss_sum / std::max(1, n_batches);
      if (!data.validation.empty())
        rec.val_accuracy =
            evaluate(frontend, model, data.validation, cfg.batch_size).accuracy;
      history.epochs.push_back(rec);
      history.final_train_loss = rec.train_loss;
    }
  }

  // With momentum 0.99 the running statistics move by at most 1% per batch,
  // so short schedules leave them describing a much earlier network than the
  // trained weights and eval-mode accuracy collapses. Replace them with the
  // exact training-set statistics under the final weights.
  std::vector<ad::BatchNormState*> states = frontend.bn_states();
  for (auto& s : model.bn_states()) states.push_back(&s);
  for (auto* s : states) s->begin_recalibration();
  for (size_t start = 0; start < data.train.size();
       start += size_t(cfg.batch_size)) {
    const size_t end =
        std::min(data.train.size(), start + size_t(cfg.batch_size));
    std::vector<const AudioClip*> batch;
    for (size_t i = start; i < end; ++i) batch.push_back(&data.train[i]);
    ad::Tape tape;
    ad::Var feats = frontend.forward(tape, batch, /*train=*/true);
    (void)model.forward(tape, lift_features(tape, feats), /*train=*/true);
  }
  for (auto* s : states) s->finalize_recalibration();
  return history;
}

EvalResult evaluate(Frontend& frontend, ResNet& model,
                    const std::vector<AudioClip>& split, int batch_size) {
  if (split.empty()) throw std::invalid_argument("evaluate: empty split");
  const int C = model.config().n_classes;
  EvalResult res;
  res.n_classes = C;
  res.confusion.assign(size_t(C) * C, 0);
  int correct = 0;
  for (size_t start = 0; start < split.size(); start += size_t(batch_size)) {
    const size_t end = std::min(split.size(), start + size_t(batch_size));
    std::vector<const AudioClip*> batch;
    for (size_t i = start; i < end; ++i) batch.push_back(&split[i]);
    ad::Tape tape;
    ad::Var feats = frontend.forward(tape, batch, /*train=*/false);
    ad::Var logits = model.forward(tape, lift_features(tape, feats), false);
    const int B = int(end - start);
    for (int b = 0; b < B; ++b) {
      const double* z = logits->val.data() + size_t(b) * C;
      int arg = 0;
      for (int c = 1; c < C; ++c)
        if (z[c] > z[arg]) arg = c;
      const int truth = split[start + b].label;
      if (truth < 0 || truth >= C)
        throw std::out_of_range("clip label outside model classes");
      res.confusion[size_t(truth) * C + arg] += 1;
      if (arg == truth) ++correct;
    }
  }
  res.total = int(split.size());
  res.accuracy = double(correct) / double(res.total);
  return res;
}

void write_history_csv(const std::string& path, const TrainHistory& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  out << "epoch,train_loss,val_accuracy\n";
  for (const auto& e : history.epochs)
    out << e.epoch << ',' << e.train_loss << ',' << e.val_accuracy << '\n';
}

}  // namespace fbkws
