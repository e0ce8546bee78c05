#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "ganmut/datapipe.hpp"
#include "ganmut/trainer.hpp"
#include "support/helpers.hpp"

using namespace ganmut;
using ganmut::testing::random_images;
using ganmut::testing::TempDir;
using ganmut::testing::TensorSource;
using ganmut::testing::tiny_model_config;

namespace {

TrainConfig tiny_train_config() {
  TrainConfig tc;
  tc.total_steps = 2;
  tc.n_critic = 2;
  tc.batch_size = 4;
  tc.seed = 5;
  tc.checkpoint_every = 100;
  return tc;
}

Batch random_batch(std::uint64_t seed) {
  auto images = random_images(4, 16, torch::kFloat32, seed);
  auto labels = torch::tensor({0, 3, 4, 6}, torch::kInt64);
  return {images, labels};
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig tc = tiny_train_config();
  tc.n_critic = 0;
  CHECK_THROWS_AS(tc.validate(), ValidationError);
  tc = tiny_train_config();
  tc.batch_size = 1;
  CHECK_THROWS_AS(tc.validate(), ValidationError);
  tc = tiny_train_config();
  tc.lr_g = -1.0;
  CHECK_THROWS_AS(tc.validate(), ValidationError);
  tc = tiny_train_config();
  tc.labeled_fraction = 1.5;
  CHECK_THROWS_AS(tc.validate(), ValidationError);
}

TEST_CASE("discriminator step updates only discriminator parameters") {
  TrainState state(tiny_model_config(), tiny_train_config(), LabelSet::canonical());
  const auto g0 = state.generator_digest();
  const auto d0 = state.discriminator_digest();
  const auto dir0 = state.directions_digest();

  auto bd = state.discriminator_step(random_batch(3));
  CHECK(state.discriminator_digest() != d0);
  CHECK(state.generator_digest() == g0);
  CHECK(state.directions_digest() == dir0);
  CHECK(bd.adv.has_value());
  CHECK(bd.cls_real.has_value());
  CHECK(bd.info.has_value());
  CHECK(bd.gp.has_value());
  CHECK(bd.total_d.has_value());
  CHECK_FALSE(bd.cls_fake.has_value());
}

TEST_CASE("generator step updates generator and directions, not the critic") {
  TrainState state(tiny_model_config(), tiny_train_config(), LabelSet::canonical());
  const auto g0 = state.generator_digest();
  const auto d0 = state.discriminator_digest();
  const auto dir0 = state.directions_digest();

  auto bd = state.generator_step(random_batch(5));
  CHECK(state.generator_digest() != g0);
  CHECK(state.discriminator_digest() == d0);
  CHECK(state.directions_digest() != dir0);  // learnable with cls weight > 0
  CHECK(bd.total_g.has_value());

  auto table = state.direction_table();
  for (double a : table.angles) {
    CHECK(a >= 0.0);
    CHECK(a < kTwoPi);
  }
}

TEST_CASE("zero learning rates leave every digest unchanged") {
  auto tc = tiny_train_config();
  tc.lr_g = 0.0;
  tc.lr_d = 0.0;
  TrainState state(tiny_model_config(), tc, LabelSet::canonical());
  const auto g0 = state.generator_digest();
  const auto d0 = state.discriminator_digest();
  const auto dir0 = state.directions_digest();
  state.discriminator_step(random_batch(7));
  state.generator_step(random_batch(9));
  CHECK(state.generator_digest() == g0);
  CHECK(state.discriminator_digest() == d0);
  CHECK(state.directions_digest() == dir0);
}

TEST_CASE("losses stay finite over 100 update steps on random data") {
  auto tc = tiny_train_config();
  TrainState state(tiny_model_config(), tc, LabelSet::canonical());
  for (int i = 0; i < 50; ++i) {
    auto bd = state.discriminator_step(random_batch(100 + i));
    CHECK(std::isfinite(*bd.total_d));
  }
  for (int i = 0; i < 50; ++i) {
    auto bd = state.generator_step(random_batch(200 + i));
    CHECK(std::isfinite(*bd.total_g));
  }
}

TEST_CASE("train with zero steps writes the initial checkpoint only") {
  TempDir dir("train_zero");
  auto images = random_images(8, 16, torch::kFloat32, 11);
  auto labels = torch::tensor({0, 0, 3, 3, 4, 4, 6, 6}, torch::kInt64);
  TensorSource source(images, labels, 4);

  auto tc = tiny_train_config();
  tc.total_steps = 0;
  auto trace = train(tiny_model_config(), tc, LabelSet::canonical(), source, dir.str());
  CHECK(trace.steps.empty());
  CHECK(std::filesystem::exists(dir.path() / "step_0.ckpt"));
  int files = 0;
  for (auto& e : std::filesystem::directory_iterator(dir.path())) {
    (void)e;
    ++files;
  }
  CHECK(files == 1);
}

TEST_CASE("train rejects an empty source") {
  class EmptySource : public BatchSource {
   public:
    Batch next() override { return {}; }
    std::int64_t size() const override { return 0; }
    std::vector<int> labels_present() const override { return {}; }
  } source;
  TempDir dir("train_empty");
  CHECK_THROWS_AS(
      train(tiny_model_config(), tiny_train_config(), LabelSet::canonical(), source, dir.str()),
      ValidationError);
}

TEST_CASE("same seed reproduces the trace exactly") {
  TempDir data_dir("train_data");
  write_synthetic_dataset(data_dir.str(), 24, 16, 12345);
  const auto manifest = (data_dir.path() / "manifest.csv").string();

  auto run = [&](const std::string& tag) {
    TempDir out("train_run_" + tag);
    ManifestLoader loader(manifest, 4, 16, /*augment=*/true, 99);
    auto tc = tiny_train_config();
    tc.total_steps = 3;
    auto trace = train(tiny_model_config(), tc, LabelSet::canonical(), loader, out.str());
    auto csv = (out.path() / "trace.csv").string();
    trace.write_csv(csv, LabelSet::canonical());
    return read_file(csv);
  };

  CHECK(run("a") == run("b"));
}

TEST_CASE("trace covers every executed step with finite values") {
  TempDir dir("train_trace");
  auto images = random_images(8, 16, torch::kFloat32, 13);
  auto labels = torch::tensor({0, 0, 3, 3, 4, 4, 6, 6}, torch::kInt64);
  TensorSource source(images, labels, 4);
  auto tc = tiny_train_config();
  tc.total_steps = 3;
  auto trace = train(tiny_model_config(), tc, LabelSet::canonical(), source, dir.str());
  REQUIRE(trace.steps.size() == 3);
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    CHECK(trace.steps[i].step == static_cast<std::int64_t>(i + 1));
    const auto& l = trace.steps[i].losses;
    for (const auto& v : {l.adv, l.cls_real, l.cls_fake, l.info, l.rho, l.rec, l.gp,
                          l.total_d, l.total_g}) {
      REQUIRE(v.has_value());
      CHECK(std::isfinite(*v));
    }
    CHECK(trace.steps[i].angles.size() == 6);
  }
}

TEST_CASE("checkpoint roundtrip reproduces probe outputs bit-identically") {
  TempDir dir("ckpt");
  TrainState state(tiny_model_config(), tiny_train_config(), LabelSet::canonical());
  state.discriminator_step(random_batch(17));
  state.generator_step(random_batch(19));
  state.advance_step();

  const auto path = (dir.path() / "state.ckpt").string();
  state.save(path);
  auto restored = TrainState::load(path);

  CHECK(restored.step() == state.step());
  CHECK(restored.generator_digest() == state.generator_digest());
  CHECK(restored.discriminator_digest() == state.discriminator_digest());
  CHECK(restored.directions_digest() == state.directions_digest());

  auto probe = random_images(2, 16, torch::kFloat32, 23);
  auto codes = codes_to_tensor({{0.5, 0.8}, {2.5, 0.3}});
  torch::NoGradGuard no_grad;
  CHECK(torch::equal(state.generator()->forward(probe, codes),
                     restored.generator()->forward(probe, codes)));
  auto a = state.discriminator()->forward(probe);
  auto b = restored.discriminator()->forward(probe);
  CHECK(torch::equal(a.src, b.src));
  CHECK(torch::equal(a.cls_logits, b.cls_logits));
  CHECK(torch::equal(a.coor, b.coor));
}

TEST_CASE("resumed training continues deterministically") {
  TempDir dir("ckpt_resume");
  const auto path = (dir.path() / "state.ckpt").string();

  TrainState a(tiny_model_config(), tiny_train_config(), LabelSet::canonical());
  a.discriminator_step(random_batch(29));
  a.save(path);
  auto b = TrainState::load(path);

  auto bd_a = a.generator_step(random_batch(31));
  auto bd_b = b.generator_step(random_batch(31));
  CHECK(*bd_a.total_g == *bd_b.total_g);
  CHECK(a.generator_digest() == b.generator_digest());
}

TEST_CASE("corrupted checkpoints are rejected") {
  TempDir dir("ckpt_corrupt");
  TrainState state(tiny_model_config(), tiny_train_config(), LabelSet::canonical());
  const auto path = (dir.path() / "state.ckpt").string();
  state.save(path);

  SUBCASE("bad magic") {
    auto bytes = read_file(path);
    bytes[0] = 'X';
    std::ofstream(path, std::ios::binary | std::ios::trunc).write(bytes.data(), bytes.size());
    CHECK_THROWS_AS(TrainState::load(path), IoError);
  }
  SUBCASE("unsupported version") {
    auto bytes = read_file(path);
    bytes[4] = 99;
    std::ofstream(path, std::ios::binary | std::ios::trunc).write(bytes.data(), bytes.size());
    CHECK_THROWS_AS(TrainState::load(path), IoError);
  }
  SUBCASE("truncation") {
    auto bytes = read_file(path);
    bytes.resize(bytes.size() / 2);
    std::ofstream(path, std::ios::binary | std::ios::trunc).write(bytes.data(), bytes.size());
    CHECK_THROWS_AS(TrainState::load(path), IoError);
  }
  SUBCASE("payload bit flip") {
    auto bytes = read_file(path);
    bytes[bytes.size() / 2] ^= 0x40;
    std::ofstream(path, std::ios::binary | std::ios::trunc).write(bytes.data(), bytes.size());
    CHECK_THROWS_AS(TrainState::load(path), IoError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(TrainState::load("/nonexistent/x.ckpt"), IoError); }
}

TEST_CASE("checkpoint image-size mismatch is a configuration error") {
  TempDir dir("ckpt_mismatch");
  TrainState state(tiny_model_config(), tiny_train_config(), LabelSet::canonical());
  const auto path = (dir.path() / "state.ckpt").string();
  state.save(path);

  auto expected = tiny_model_config();
  expected.image_size = 32;
  CHECK_THROWS_AS(TrainState::load(path, expected), ConfigError);
  CHECK_NOTHROW(TrainState::load(path, tiny_model_config()));
}

TEST_CASE("condition sampling matches the labeled/gamut contract") {
  auto tc = tiny_train_config();
  tc.labeled_fraction = 0.5;
  TrainState state(tiny_model_config(), tc, LabelSet::canonical());
  state.set_labels_present({0, 3, 4});

  auto cond = state.sample_conditions(64, /*differentiable=*/false);
  REQUIRE(cond.codes.size() == 64);
  CHECK(cond.codes_xy.sizes() == torch::IntArrayRef({64, 2}));
  auto table = state.direction_table();
  for (std::size_t i = 0; i < 32; ++i) {  // labeled half
    const auto target = cond.targets[i].item<std::int64_t>();
    CHECK((target == 0 || target == 3 || target == 4));
    if (target == 4) {
      CHECK(cond.codes[i].rho < table.neutral_threshold);
    } else {
      CHECK(cond.codes[i].rho >= table.neutral_threshold);
      CHECK(cond.codes[i].theta == table.angle_for(static_cast<int>(target)));
    }
  }
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(cond.targets[i].item<std::int64_t>() ==
          label_for_code(table, cond.codes[i]));
  }
}
