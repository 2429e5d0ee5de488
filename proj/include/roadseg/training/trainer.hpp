#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "roadseg/dataset.hpp"
#include "roadseg/models/model.hpp"
#include "roadseg/objectives.hpp"
#include "roadseg/training/adam.hpp"
#include "roadseg/training/history.hpp"

namespace roadseg {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Road targets (N, 1, H, W) from masks.
template <typename T>
Tensor<T> mask_tensor(std::span<const BinaryMask* const> masks) {
  const BinaryMask& first = *masks.front();
  Tensor<T> t(static_cast<int>(masks.size()), 1, first.height, first.width);
  for (std::size_t n = 0; n < masks.size(); ++n) {
    std::transform(masks[n]->values.begin(), masks[n]->values.end(), t.sample(static_cast<int>(n)),
                   [](std::uint8_t v) { return static_cast<T>(v); });
  }
  return t;
}

/// Mean per-sample dice loss of the road channel of `probs` (N, 2, H, W)
/// against `targets` (N, 1, H, W). Fills `grad` (same shape as probs) with
/// d(loss)/d(probs) when non-null.
template <typename T>
T batch_dice_loss(const Tensor<T>& probs, const Tensor<T>& targets, T epsilon, Tensor<T>* grad) {
  if (probs.c() != 2 || targets.c() != 1 || probs.n() != targets.n() || probs.h() != targets.h() ||
      probs.w() != targets.w()) {
    throw std::invalid_argument("batch_dice_loss: shape mismatch " + to_string(probs.shape()) +
                                " vs " + to_string(targets.shape()));
  }
  const std::size_t plane = probs.shape().plane();
  if (grad) *grad = Tensor<T>(probs.shape());
  T total{0};
  const T inv_n = T{1} / static_cast<T>(probs.n());
  std::vector<T> g(plane);
  for (int n = 0; n < probs.n(); ++n) {
    std::span<const T> road(probs.plane(n, 1), plane);
    std::span<const T> truth(targets.plane(n, 0), plane);
    if (grad) {
      total += dice_loss_grad<T>(road, truth, g, epsilon);
      T* dst = grad->plane(n, 1);
      for (std::size_t i = 0; i < plane; ++i) dst[i] = g[i] * inv_n;
    } else {
      total += dice_loss<T>(road, truth, epsilon);
    }
  }
  return total * inv_n;
}

/// Dice loss over a batch of window-classifier outputs (N, 2, 1, 1): the
/// road probabilities of all windows form one soft mask.
template <typename T>
T window_dice_loss(const Tensor<T>& probs, std::span<const T> labels, T epsilon, Tensor<T>* grad) {
  const std::size_t n = static_cast<std::size_t>(probs.n());
  if (probs.c() != 2 || labels.size() != n) throw std::invalid_argument("window_dice_loss: shape mismatch");
  std::vector<T> road(n), g(n);
  for (std::size_t i = 0; i < n; ++i) road[i] = probs.at(static_cast<int>(i), 1, 0, 0);
  if (!grad) return dice_loss<T>(road, labels, epsilon);
  const T loss = dice_loss_grad<T>(road, labels, g, epsilon);
  *grad = Tensor<T>(probs.shape());
  for (std::size_t i = 0; i < n; ++i) grad->at(static_cast<int>(i), 1, 0, 0) = g[i];
  return loss;
}

/// One optimizer step on a segmentation batch; returns the pre-step loss.
template <typename T>
T train_step(Model<T>& model, Adam<T>& optimizer, const Tensor<T>& images, const Tensor<T>& targets,
             double lr, T epsilon = T{1}) {
  model.zero_grad();
  Tensor<T> probs = model.forward(images, nn::Mode::train);
  Tensor<T> grad;
  const T loss = batch_dice_loss(probs, targets, epsilon, &grad);
  if (!std::isfinite(static_cast<double>(loss))) return loss;
  model.backward(grad);
  optimizer.step(lr);
  return loss;
}

/// Copy of every parameter and buffer of a model.
template <typename T>
struct Snapshot {
  std::vector<Tensor<T>> tensors;

  static Snapshot take(Model<T>& model) {
    Snapshot s;
    auto st = model.state();
    for (auto& [name, p] : st.params) s.tensors.push_back(p->value);
    for (auto& [name, b] : st.buffers) s.tensors.push_back(*b);
    return s;
  }

  void restore(Model<T>& model) const {
    auto st = model.state();
    std::size_t k = 0;
    for (auto& [name, p] : st.params) p->value = tensors.at(k++);
    for (auto& [name, b] : st.buffers) *b = tensors.at(k++);
  }
};

struct ValidationMetrics {
  double loss = 0.0;
  double f1 = 0.0;
  double iou = 0.0;
};

/// Eval-mode metrics: mean per-sample dice loss, pooled pixel F1 and IoU at
/// road probability > 0.5.
template <typename T>
ValidationMetrics evaluate_segmentation(Model<T>& model, const std::vector<SamplePair>& set, int batch_size,
                                        double epsilon) {
  ValidationMetrics m;
  if (set.empty()) return m;
  ConfusionCounts counts;
  double total = 0.0;
  for (std::size_t b = 0; b < set.size(); b += batch_size) {
    const std::size_t e = std::min(set.size(), b + static_cast<std::size_t>(batch_size));
    std::vector<const RasterImage*> imgs;
    std::vector<const BinaryMask*> masks;
    for (std::size_t i = b; i < e; ++i) {
      imgs.push_back(&set[i].image);
      masks.push_back(&set[i].mask);
    }
    Tensor<T> x = to_tensor<T>(std::span<const RasterImage* const>(imgs));
    Tensor<T> probs = model.forward(x, nn::Mode::eval);
    Tensor<T> targets = mask_tensor<T>(std::span<const BinaryMask* const>(masks));
    total += static_cast<double>(batch_dice_loss<T>(probs, targets, static_cast<T>(epsilon), nullptr)) *
             static_cast<double>(e - b);
    for (std::size_t i = b; i < e; ++i) {
      const int n = static_cast<int>(i - b);
      BinaryMask pred = threshold_mask(to_probability_map(probs, n), 0.5);
      counts += confusion(pred, set[i].mask);
    }
  }
  m.loss = total / static_cast<double>(set.size());
  m.f1 = counts.f1();
  m.iou = counts.iou();
  return m;
}

namespace detail {

inline std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

inline void check_finite(double loss, int epoch, std::size_t batch, double lr) {
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << "non-finite training loss at epoch " << epoch << ", batch " << batch << ", lr " << lr;
    throw TrainingError(os.str());
  }
}

template <typename T>
std::vector<TrainingWindow> draw_windows(const std::vector<SamplePair>& set, int count, std::mt19937_64& rng,
                                         int window_size) {
  const int pad = (window_size - kPatchSize) / 2;
  std::vector<TrainingWindow> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(sample_training_window(set, rng, kPatchSize, pad));
  return out;
}

template <typename T>
Tensor<T> window_batch(const std::vector<TrainingWindow>& windows, std::size_t b, std::size_t e,
                       std::vector<T>& labels) {
  std::vector<const RasterImage*> imgs;
  labels.clear();
  for (std::size_t i = b; i < e; ++i) {
    imgs.push_back(&windows[i].window);
    labels.push_back(static_cast<T>(windows[i].label));
  }
  return to_tensor<T>(std::span<const RasterImage* const>(imgs));
}

}  // namespace detail

/// Eval-mode metrics of the window classifier over pre-drawn windows.
template <typename T>
ValidationMetrics evaluate_windows(Model<T>& model, const std::vector<TrainingWindow>& windows,
                                   int batch_size, double epsilon) {
  std::vector<T> road, truth;
  ConfusionCounts counts;
  std::vector<T> labels;
  for (std::size_t b = 0; b < windows.size(); b += batch_size) {
    const std::size_t e = std::min(windows.size(), b + static_cast<std::size_t>(batch_size));
    Tensor<T> probs = model.forward(detail::window_batch<T>(windows, b, e, labels), nn::Mode::eval);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const T p = probs.at(static_cast<int>(i), 1, 0, 0);
      road.push_back(p);
      truth.push_back(labels[i]);
      const std::uint8_t pl = p > T(0.5) ? 1 : 0;
      const std::uint8_t tl = labels[i] > T(0.5) ? 1 : 0;
      counts += confusion(std::span<const std::uint8_t>(&pl, 1), std::span<const std::uint8_t>(&tl, 1));
    }
  }
  ValidationMetrics m;
  m.loss = static_cast<double>(dice_loss<T>(road, truth, static_cast<T>(epsilon)));
  m.f1 = counts.f1();
  m.iou = counts.iou();
  return m;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains `model` with Adam on the dice loss under the plateau schedule.
///
/// Each epoch reshuffles the training set with an rng derived from
/// (seed, epoch) and augments every sample afresh. Validation runs in eval
/// mode after every epoch; on return the model holds the parameters of the
/// epoch with the lowest validation loss. A nonempty `history` resumes:
/// epoch numbering and the learning rate continue from it and training
/// stops once the history holds `cfg.max_epochs` records.
template <typename T>
TrainHistory train(Model<T>& model, const std::vector<SamplePair>& train_set,
                   const std::vector<SamplePair>& val_set, const TrainConfig& cfg,
                   const AugmentParams& augment, TrainHistory history = {},
                   const EpochCallback& on_epoch = {}) {
  cfg.validate();
  augment.validate();
  if (train_set.empty() || val_set.empty()) {
    throw std::invalid_argument("train: training and validation sets must be nonempty");
  }
  const bool windowed = model.spec().variant == Variant::sliding_window;
  Adam<T> optimizer(model.state(), {cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon});
  PlateauScheduler scheduler(cfg);
  for (const auto& r : history.records) scheduler.step(r.val_loss);

  std::vector<TrainingWindow> val_windows;
  if (windowed) {
    auto rng = detail::epoch_rng(cfg.seed, -1, 3);
    val_windows = detail::draw_windows<T>(val_set, cfg.val_windows, rng, model.spec().window_size);
  }
  auto validate = [&]() {
    return windowed ? evaluate_windows(model, val_windows, cfg.batch_size, cfg.loss_epsilon)
                    : evaluate_segmentation(model, val_set, cfg.batch_size, cfg.loss_epsilon);
  };

  double best = history.best_val_loss();
  Snapshot<T> best_state = Snapshot<T>::take(model);
  const T eps = static_cast<T>(cfg.loss_epsilon);

  for (int epoch = static_cast<int>(history.size()) + 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = scheduler.lr();
    auto rng = detail::epoch_rng(cfg.seed, epoch, 1);
    model.reseed_dropout(detail::epoch_rng(cfg.seed, epoch, 2)());
    double loss_sum = 0.0;
    std::size_t batches = 0;

    if (windowed) {
      auto windows = detail::draw_windows<T>(train_set, cfg.windows_per_epoch, rng, model.spec().window_size);
      std::vector<T> labels;
      for (std::size_t b = 0; b < windows.size(); b += cfg.batch_size, ++batches) {
        const std::size_t e = std::min(windows.size(), b + static_cast<std::size_t>(cfg.batch_size));
        Tensor<T> x = detail::window_batch<T>(windows, b, e, labels);
        model.zero_grad();
        Tensor<T> probs = model.forward(x, nn::Mode::train);
        Tensor<T> grad;
        const T loss = window_dice_loss<T>(probs, labels, eps, &grad);
        detail::check_finite(static_cast<double>(loss), epoch, batches, lr);
        model.backward(grad);
        optimizer.step(lr);
        loss_sum += static_cast<double>(loss);
      }
    } else {
      std::vector<std::size_t> order(train_set.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t b = 0; b < order.size(); b += cfg.batch_size, ++batches) {
        const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
        std::vector<SamplePair> batch;
        for (std::size_t i = b; i < e; ++i) batch.push_back(augment_pair(train_set[order[i]], augment, rng));
        std::vector<const RasterImage*> imgs;
        std::vector<const BinaryMask*> masks;
        for (const auto& p : batch) {
          imgs.push_back(&p.image);
          masks.push_back(&p.mask);
        }
        Tensor<T> x = to_tensor<T>(std::span<const RasterImage* const>(imgs));
        Tensor<T> y = mask_tensor<T>(std::span<const BinaryMask* const>(masks));
        const T loss = train_step(model, optimizer, x, y, lr, eps);
        detail::check_finite(static_cast<double>(loss), epoch, batches, lr);
        loss_sum += static_cast<double>(loss);
      }
    }

    const ValidationMetrics vm = validate();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
    rec.val_loss = vm.loss;
    rec.val_f1 = vm.f1;
    rec.val_iou = vm.iou;
    rec.learning_rate = lr;
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    history.records.push_back(rec);
    if (vm.loss < best) {
      best = vm.loss;
      best_state = Snapshot<T>::take(model);
    }
    scheduler.step(vm.loss);
    if (on_epoch) on_epoch(rec);
  }
  best_state.restore(model);
  return history;
}

}  // namespace roadseg
