#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "roadseg/models/model.hpp"
#include "roadseg/png_io.hpp"
#include "roadseg/synthetic.hpp"
#include "roadseg/training/checkpoint.hpp"
#include "roadseg/training/trainer.hpp"
#include "test_support.hpp"

namespace roadseg {
namespace {

using test_util::TempDir;

TrainConfig schedule_config() {
  TrainConfig cfg;
  cfg.initial_lr = 1e-4;
  return cfg;
}

TrainHistory history_of(const std::vector<double>& val_losses) {
  TrainHistory h;
  for (std::size_t i = 0; i < val_losses.size(); ++i) {
    EpochRecord r;
    r.epoch = static_cast<int>(i) + 1;
    r.val_loss = val_losses[i];
    h.records.push_back(r);
  }
  return h;
}

TEST(Plateau, SubThresholdImprovementsForFiveEpochsHalve) {
  EXPECT_DOUBLE_EQ(lr_plateau_update(history_of({0.50, 0.4999, 0.4999, 0.4999, 0.4999, 0.4999}), schedule_config()),
                   5e-5);
}

TEST(Plateau, FourStaleEpochsKeepRate) {
  EXPECT_DOUBLE_EQ(lr_plateau_update(history_of({0.50, 0.4999, 0.4999, 0.4999, 0.4999}), schedule_config()), 1e-4);
}

TEST(Plateau, SteadyImprovementNeverReduces) {
  std::vector<double> v;
  PlateauScheduler s(schedule_config());
  for (int e = 0; e < 100; ++e) {
    v.push_back(1.0 - 0.01 * e);
    EXPECT_DOUBLE_EQ(s.step(v.back()), 1e-4);
  }
  EXPECT_DOUBLE_EQ(lr_plateau_update(history_of(v), schedule_config()), 1e-4);
}

TEST(Plateau, TwoPlateausQuarterTheRate) {
  EXPECT_DOUBLE_EQ(lr_plateau_update(history_of({0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5}),
                                     schedule_config()),
                   2.5e-5);
}

TEST(Plateau, ImprovementLargerThanMinDeltaResetsCounter) {
  EXPECT_DOUBLE_EQ(lr_plateau_update(history_of({0.5, 0.5, 0.5, 0.5, 0.4, 0.4, 0.4, 0.4}), schedule_config()), 1e-4);
}

TEST(Plateau, RateIsPowerOfHalfAndNonIncreasing) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PlateauScheduler s(schedule_config());
  double prev = s.lr();
  for (int e = 0; e < 300; ++e) {
    const double lr = s.step(u(rng));
    EXPECT_LE(lr, prev);
    const double k = std::log2(1e-4 / lr);
    EXPECT_NEAR(k, std::round(k), 1e-9);
    prev = lr;
  }
}

TEST(Config, ZeroEpochsRejected) {
  TrainConfig cfg;
  cfg.max_epochs = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.max_epochs = 1;
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.batch_size = 1;
  cfg.plateau_factor = 1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(BatchDice, IsMeanOfPerSampleLossWithMatchingGradient) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.02, 0.98);
  Tensor<double> probs(3, 2, 5, 4), targets(3, 1, 5, 4);
  for (int n = 0; n < 3; ++n) {
    for (int i = 0; i < 20; ++i) {
      const double p = u(rng);
      probs.plane(n, 1)[i] = p;
      probs.plane(n, 0)[i] = 1.0 - p;
      targets.plane(n, 0)[i] = u(rng) < 0.3 ? 1.0 : 0.0;
    }
  }
  double expect = 0.0;
  for (int n = 0; n < 3; ++n) {
    expect += dice_loss<double>(std::span<const double>(probs.plane(n, 1), 20),
                                std::span<const double>(targets.plane(n, 0), 20), 1.0);
  }
  Tensor<double> grad;
  EXPECT_NEAR(batch_dice_loss<double>(probs, targets, 1.0, &grad), expect / 3.0, 1e-14);
  auto numeric = test_util::numeric_gradient<double>(
      probs.vec(), [&] { return batch_dice_loss<double>(probs, targets, 1.0, nullptr); }, 1e-6);
  EXPECT_LT(test_util::relative_error(test_util::as_double(grad), numeric), 1e-6);
}

std::vector<SamplePair> tiny_set(std::size_t count, std::uint64_t seed, int size = 32) {
  SyntheticOptions opt;
  opt.size = size;
  opt.min_width = 4.0;
  opt.max_width = 7.0;
  opt.max_roofs = 1;
  return generate_synthetic_set(count, seed, opt);
}

ModelSpec tiny_spec(Variant v = Variant::unet_32, int c0 = 4) {
  ModelSpec s = spec_for(v);
  s.first_layer_channels = c0;
  s.seed = 17;
  return s;
}

TrainConfig tiny_config(int epochs) {
  TrainConfig cfg;
  cfg.initial_lr = 1e-3;
  cfg.batch_size = 2;
  cfg.max_epochs = epochs;
  cfg.seed = 5;
  return cfg;
}

std::uint64_t parameter_hash(Model<float>& model) {
  std::uint64_t h = 14695981039346656037ULL;
  for (auto& [name, p] : model.state().params) {
    h ^= fnv1a(reinterpret_cast<const std::uint8_t*>(p->value.data()), p->value.size() * sizeof(float));
    h *= 1099511628211ULL;
  }
  return h;
}

void expect_same_history(const TrainHistory& a, const TrainHistory& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.records[i].epoch, b.records[i].epoch);
    EXPECT_EQ(a.records[i].train_loss, b.records[i].train_loss);
    EXPECT_EQ(a.records[i].val_loss, b.records[i].val_loss);
    EXPECT_EQ(a.records[i].val_f1, b.records[i].val_f1);
    EXPECT_EQ(a.records[i].val_iou, b.records[i].val_iou);
    EXPECT_EQ(a.records[i].learning_rate, b.records[i].learning_rate);
  }
}

TEST(Train, SmallStepDecreasesBatchLoss) {
  auto set = tiny_set(2, 3);
  ModelSpec spec = tiny_spec(Variant::unet_dilated);
  auto model = build_model<float>(spec);
  std::vector<const RasterImage*> imgs{&set[0].image, &set[1].image};
  std::vector<const BinaryMask*> masks{&set[0].mask, &set[1].mask};
  Tensor<float> x = to_tensor<float>(std::span<const RasterImage* const>(imgs));
  Tensor<float> y = mask_tensor<float>(std::span<const BinaryMask* const>(masks));
  Adam<float> opt(model->state(), {0.9, 0.999, 1e-7});
  const float before = train_step(*model, opt, x, y, 1e-5);
  const float after = batch_dice_loss<float>(model->forward(x, nn::Mode::train), y, 1.0f, nullptr);
  EXPECT_LT(after, before);
}

TEST(Train, SameSeedSameHistoryAndParameters) {
  auto data = tiny_set(6, 9);
  auto [train_set, val_set] = split_train_val(data, 0.67, 1);
  auto m1 = build_model<float>(tiny_spec());
  auto m2 = build_model<float>(tiny_spec());
  const auto h1 = train(*m1, train_set, val_set, tiny_config(2), AugmentParams{});
  const auto h2 = train(*m2, train_set, val_set, tiny_config(2), AugmentParams{});
  expect_same_history(h1, h2);
  EXPECT_EQ(parameter_hash(*m1), parameter_hash(*m2));
}

TEST(Train, ZeroEpochsRejectedByTrain) {
  auto data = tiny_set(2, 1);
  auto model = build_model<float>(tiny_spec());
  EXPECT_THROW(train(*model, {data[0]}, {data[1]}, tiny_config(0), AugmentParams{}), std::invalid_argument);
  EXPECT_THROW(train(*model, {}, {data[1]}, tiny_config(1), AugmentParams{}), std::invalid_argument);
}

TEST(Train, RestoresBestValidationSnapshot) {
  auto data = tiny_set(6, 21);
  auto [train_set, val_set] = split_train_val(data, 0.67, 2);
  auto model = build_model<float>(tiny_spec());
  TrainConfig cfg = tiny_config(4);
  const auto h = train(*model, train_set, val_set, cfg, AugmentParams{});
  ASSERT_EQ(h.size(), 4u);
  const double reloaded = evaluate_segmentation(*model, val_set, cfg.batch_size, cfg.loss_epsilon).loss;
  EXPECT_NEAR(reloaded, h.best_val_loss(), 1e-6);
  for (std::size_t i = 1; i < h.size(); ++i) {
    EXPECT_LE(h.records[i].learning_rate, h.records[i - 1].learning_rate);
  }
}

TEST(Train, NonFiniteLossAbortsWithDiagnostic) {
  auto data = tiny_set(2, 1);
  auto model = build_model<float>(tiny_spec());
  model->state().params.front().second->value[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    train(*model, {data[0]}, {data[1]}, tiny_config(1), AugmentParams::none());
    FAIL() << "expected a training error";
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("lr 0.001"), std::string::npos) << msg;
  }
}

TEST(Train, OverfitsTwoPatches) {
  auto set = tiny_set(2, 77, 64);
  auto model = build_model<float>(tiny_spec());
  std::vector<const RasterImage*> imgs{&set[0].image, &set[1].image};
  std::vector<const BinaryMask*> masks{&set[0].mask, &set[1].mask};
  Tensor<float> x = to_tensor<float>(std::span<const RasterImage* const>(imgs));
  Tensor<float> y = mask_tensor<float>(std::span<const BinaryMask* const>(masks));
  Adam<float> opt(model->state(), {0.9, 0.999, 1e-7});
  float loss = 1.0f;
  for (int step = 0; step < 200 && loss >= 0.05f; ++step) loss = train_step(*model, opt, x, y, 1e-3);
  EXPECT_LT(loss, 0.05f);
}

TEST(Train, SlidingWindowEpochRuns) {
  auto data = tiny_set(3, 4);
  ModelSpec spec = spec_for(Variant::sliding_window);
  spec.window_size = 32;
  auto model = build_model<float>(spec);
  TrainConfig cfg = tiny_config(1);
  cfg.windows_per_epoch = 16;
  cfg.val_windows = 8;
  cfg.batch_size = 8;
  const auto h = train(*model, {data[0], data[1]}, {data[2]}, cfg, AugmentParams{});
  ASSERT_EQ(h.size(), 1u);
  EXPECT_TRUE(std::isfinite(h.records[0].train_loss));
  EXPECT_GE(h.records[0].val_f1, 0.0);
}

TEST(History, CsvAndLossCurve) {
  TempDir dir("hist");
  TrainHistory h = history_of({0.5, 0.25});
  h.records[0].train_loss = 0.75;
  h.records[0].learning_rate = 1e-4;
  h.records[1].learning_rate = 5e-5;
  write_history_csv(h, dir / "history.csv");
  std::ifstream in(dir / "history.csv");
  std::string l0, l1, l2;
  std::getline(in, l0);
  std::getline(in, l1);
  std::getline(in, l2);
  EXPECT_EQ(l0, "epoch,train_loss,val_loss,val_f1,val_iou,lr");
  EXPECT_EQ(l1, "1,0.75,0.5,0,0,0.0001");
  EXPECT_EQ(l2, "2,0,0.25,0,0,5e-05");
  write_loss_curve(h, dir / "curve.png");
  const RasterImage img = png::read_rgb(dir / "curve.png");
  EXPECT_EQ(img.width, 640);
  EXPECT_EQ(img.height, 400);
}

class CheckpointTest : public ::testing::Test {
 protected:
  TempDir dir{"ckpt"};
  std::filesystem::path path() const { return dir / "model.ckpt"; }

  std::unique_ptr<Model<float>> trained_model() {
    auto model = build_model<float>(tiny_spec());
    auto data = tiny_set(3, 2);
    train(*model, {data[0], data[1]}, {data[2]}, tiny_config(1), AugmentParams::none());
    return model;
  }
};

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  auto model = trained_model();
  CheckpointMetadata meta;
  meta.epoch = 3;
  meta.learning_rate = 2.5e-5;
  meta.history = history_of({0.3, 0.2});
  meta.history.records[1].val_f1 = 0.123456789012345;
  save_checkpoint(*model, meta, path());
  auto [loaded, back] = load_checkpoint(path());
  EXPECT_EQ(back.epoch, 3);
  EXPECT_EQ(back.learning_rate, 2.5e-5);
  expect_same_history(back.history, meta.history);
  EXPECT_EQ(variant_name(back.spec.variant), "unet-32");
  EXPECT_EQ(back.spec.first_layer_channels, 4);

  std::mt19937_64 rng(8);
  const Tensor<float> x = test_util::random_tensor<float>({1, 3, 32, 32}, rng);
  const Tensor<float> a = model->forward(x, nn::Mode::eval);
  const Tensor<float> b = loaded->forward(x, nn::Mode::eval);
  EXPECT_EQ(a.vec(), b.vec());
  EXPECT_EQ(parameter_hash(*model), parameter_hash(*loaded));
}

TEST_F(CheckpointTest, DilatedMetadataRecordsRates) {
  ModelSpec spec = tiny_spec(Variant::unet_dilated);
  auto model = build_model<float>(spec);
  save_checkpoint(*model, {}, path());
  const auto meta = read_checkpoint_metadata(path());
  EXPECT_EQ(meta.spec.dilations, (std::vector<int>{1, 2, 4, 8}));
  EXPECT_EQ(meta.spec.bottleneck, Bottleneck::dilated);
}

TEST_F(CheckpointTest, CorruptArchiveNamesSection) {
  auto model = build_model<float>(tiny_spec());
  save_checkpoint(*model, {}, path());
  {
    std::fstream f(path(), std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    f.put('\x5a');
  }
  try {
    load_checkpoint(path());
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("section"), std::string::npos) << e.what();
  }
  std::filesystem::resize_file(path(), 10);
  EXPECT_THROW(load_checkpoint(path()), CheckpointError);
}

TEST_F(CheckpointTest, MismatchedVariantRejected) {
  auto model = build_model<float>(tiny_spec());
  save_checkpoint(*model, {}, path());
  nlohmann::json j;
  {
    std::ifstream in(sidecar_path(path()));
    j = nlohmann::json::parse(in);
  }
  j["variant"] = "unet-dilated";
  j["bottleneck"] = "dilated";
  {
    std::ofstream out(sidecar_path(path()));
    out << j.dump();
  }
  try {
    load_checkpoint(path());
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("unet-dilated"), std::string::npos) << e.what();
  }
}

TEST_F(CheckpointTest, ResumeExtendsHistoryWithoutReinitializing) {
  auto data = tiny_set(4, 6);
  auto model = build_model<float>(tiny_spec());
  TrainConfig cfg = tiny_config(1);
  const auto first = train(*model, {data[0], data[1], data[2]}, {data[3]}, cfg, AugmentParams{});
  CheckpointMetadata meta;
  meta.epoch = 1;
  meta.history = first;
  meta.learning_rate = first.records.back().learning_rate;
  save_checkpoint(*model, meta, path());

  auto [resumed, back] = load_checkpoint(path());
  const double start_val =
      evaluate_segmentation(*resumed, {data[3]}, cfg.batch_size, cfg.loss_epsilon).loss;
  EXPECT_NEAR(start_val, first.records[0].val_loss, 1e-6);
  cfg.max_epochs = 2;
  const auto h = train(*resumed, {data[0], data[1], data[2]}, {data[3]}, cfg, AugmentParams{}, back.history);
  ASSERT_EQ(h.size(), 2u);
  EXPECT_EQ(h.records[0].val_loss, first.records[0].val_loss);
  EXPECT_EQ(h.records[1].epoch, 2);
}

}  // namespace
}  // namespace roadseg
