#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>

#include "ganmut/trainer.hpp"

// Checkpoint container, format version 1:
//   "GMUT" | u32 version | u64 config digest | u64 step          (24-byte header)
//   payload: label names, ModelConfig, TrainConfig, direction table,
//            length-prefixed blobs (G, D, optimizers, rng states)
//   u64 FNV checksum over the payload
// All integers little-endian host order.

namespace ganmut {

namespace {

constexpr char kMagic[4] = {'G', 'M', 'U', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.append(reinterpret_cast<const char*>(&v), sizeof(v));
}

void put_str(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

void put_blob(std::string& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.append(s);
}

class Reader {
 public:
  Reader(const char* data, std::size_t size) : data_(data), size_(size) {}

  template <typename T>
  T get() {
    T v;
    copy(&v, sizeof(v));
    return v;
  }

  std::string get_str() {
    auto n = get<std::uint32_t>();
    return take(n);
  }

  std::string get_blob() {
    auto n = get<std::uint64_t>();
    return take(static_cast<std::size_t>(n));
  }

  bool exhausted() const { return pos_ == size_; }

 private:
  void copy(void* dst, std::size_t n) {
    if (pos_ + n > size_) throw IoError("truncated checkpoint");
    std::memcpy(dst, data_ + pos_, n);
    pos_ += n;
  }

  std::string take(std::size_t n) {
    if (pos_ + n > size_) throw IoError("truncated checkpoint");
    std::string s(data_ + pos_, n);
    pos_ += n;
    return s;
  }

  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::string archive_bytes(const std::function<void(torch::serialize::OutputArchive&)>& fill) {
  torch::serialize::OutputArchive archive;
  fill(archive);
  std::ostringstream stream;
  archive.save_to(stream);
  return stream.str();
}

torch::serialize::InputArchive archive_from(const std::string& bytes) {
  torch::serialize::InputArchive archive;
  archive.load_from(bytes.data(), bytes.size());
  return archive;
}

std::string rng_state_bytes(const torch::Generator& gen) {
  auto state = gen.get_state().contiguous();
  return std::string(static_cast<const char*>(state.data_ptr()),
                     static_cast<std::size_t>(state.numel()));
}

void restore_rng_state(torch::Generator& gen, const std::string& bytes) {
  auto state = torch::empty({static_cast<std::int64_t>(bytes.size())}, torch::kUInt8);
  std::memcpy(state.data_ptr(), bytes.data(), bytes.size());
  gen.set_state(state);
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& path) {
  const auto& mc = state.model_config();
  const auto& tc = state.train_config();

  std::string payload;
  put<std::uint32_t>(payload, static_cast<std::uint32_t>(state.labels().size()));
  for (const auto& name : state.labels().names()) put_str(payload, name);

  put<std::int32_t>(payload, mc.image_size);
  put<std::int32_t>(payload, mc.base_channels);
  put<std::int32_t>(payload, mc.num_residual_blocks);
  put<std::int32_t>(payload, mc.num_labels);
  put<std::int64_t>(payload, mc.seed);
  put<std::uint8_t>(payload, mc.dtype == torch::kFloat64 ? 1 : 0);

  put<std::int64_t>(payload, tc.total_steps);
  put<std::int32_t>(payload, tc.n_critic);
  put<double>(payload, tc.lr_g);
  put<double>(payload, tc.lr_d);
  put<double>(payload, tc.weights.cls);
  put<double>(payload, tc.weights.rec);
  put<double>(payload, tc.weights.gp);
  put<double>(payload, tc.weights.info_d);
  put<double>(payload, tc.weights.info_g);
  put<double>(payload, tc.weights.rho);
  put<std::int32_t>(payload, tc.batch_size);
  put<std::uint64_t>(payload, tc.seed);
  put<std::int64_t>(payload, tc.checkpoint_every);
  put<double>(payload, tc.labeled_fraction);
  put<std::uint8_t>(payload, tc.deterministic ? 1 : 0);

  auto table = state.direction_table();
  put<std::uint32_t>(payload, static_cast<std::uint32_t>(table.angles.size()));
  for (double a : table.angles) put<double>(payload, a);
  put<double>(payload, table.neutral_threshold);

  put_blob(payload, archive_bytes([&](auto& a) { state.g_->save(a); }));
  put_blob(payload, archive_bytes([&](auto& a) { state.d_->save(a); }));
  put_blob(payload, archive_bytes([&](auto& a) { state.opt_g_->save(a); }));
  put_blob(payload, archive_bytes([&](auto& a) { state.opt_d_->save(a); }));

  std::ostringstream cond_rng;
  cond_rng << state.cond_rng_;
  put_blob(payload, cond_rng.str());
  put_blob(payload, rng_state_bytes(state.gp_gen_));

  std::string file;
  file.append(kMagic, sizeof(kMagic));
  put<std::uint32_t>(file, kVersion);
  put<std::uint64_t>(file, mc.digest());
  put<std::uint64_t>(file, static_cast<std::uint64_t>(state.step()));
  file.append(payload);
  put<std::uint64_t>(file, fnv1a64(payload.data(), payload.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(file.data(), static_cast<std::streamsize>(file.size()));
  if (!out.good()) throw IoError("cannot write checkpoint: " + path);
}

TrainState load_checkpoint_impl(const std::string& path,
                                const std::optional<ModelConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  constexpr std::size_t kHeader = 4 + 4 + 8 + 8;
  if (file.size() < kHeader + 8) throw IoError("truncated checkpoint");
  if (std::memcmp(file.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a checkpoint file (bad magic)");
  }

  Reader header(file.data() + 4, kHeader - 4);
  const auto version = header.get<std::uint32_t>();
  if (version != kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto stored_digest = header.get<std::uint64_t>();
  const auto step = header.get<std::uint64_t>();

  const std::size_t payload_size = file.size() - kHeader - 8;
  const char* payload = file.data() + kHeader;
  std::uint64_t checksum;
  std::memcpy(&checksum, file.data() + kHeader + payload_size, sizeof(checksum));
  if (fnv1a64(payload, payload_size) != checksum) {
    throw IoError("checkpoint payload checksum mismatch");
  }

  Reader r(payload, payload_size);
  const auto label_count = r.get<std::uint32_t>();
  std::vector<std::string> names;
  names.reserve(label_count);
  for (std::uint32_t i = 0; i < label_count; ++i) names.push_back(r.get_str());

  ModelConfig mc;
  mc.image_size = r.get<std::int32_t>();
  mc.base_channels = r.get<std::int32_t>();
  mc.num_residual_blocks = r.get<std::int32_t>();
  mc.num_labels = r.get<std::int32_t>();
  mc.seed = r.get<std::int64_t>();
  mc.dtype = r.get<std::uint8_t>() ? torch::kFloat64 : torch::kFloat32;
  if (mc.digest() != stored_digest) {
    throw IoError("checkpoint config digest mismatch");
  }
  if (expected && !(mc == *expected)) {
    throw ConfigError("checkpoint was trained with a different model configuration");
  }

  TrainConfig tc;
  tc.total_steps = r.get<std::int64_t>();
  tc.n_critic = r.get<std::int32_t>();
  tc.lr_g = r.get<double>();
  tc.lr_d = r.get<double>();
  tc.weights.cls = r.get<double>();
  tc.weights.rec = r.get<double>();
  tc.weights.gp = r.get<double>();
  tc.weights.info_d = r.get<double>();
  tc.weights.info_g = r.get<double>();
  tc.weights.rho = r.get<double>();
  tc.batch_size = r.get<std::int32_t>();
  tc.seed = r.get<std::uint64_t>();
  tc.checkpoint_every = r.get<std::int64_t>();
  tc.labeled_fraction = r.get<double>();
  tc.deterministic = r.get<std::uint8_t>() != 0;

  const auto angle_count = r.get<std::uint32_t>();
  std::vector<double> angles(angle_count);
  for (auto& a : angles) a = r.get<double>();
  const auto threshold = r.get<double>();

  TrainState state(mc, tc, LabelSet(std::move(names)));
  {
    auto g_bytes = r.get_blob();
    auto a = archive_from(g_bytes);
    state.generator()->load(a);
  }
  {
    auto d_bytes = r.get_blob();
    auto a = archive_from(d_bytes);
    state.discriminator()->load(a);
  }
  {
    auto a = archive_from(r.get_blob());
    state.opt_g_->load(a);
  }
  {
    auto a = archive_from(r.get_blob());
    state.opt_d_->load(a);
  }
  {
    std::istringstream cond_rng(r.get_blob());
    cond_rng >> state.cond_rng_;
  }
  restore_rng_state(state.gp_gen_, r.get_blob());
  if (!r.exhausted()) throw IoError("trailing bytes in checkpoint payload");

  {
    torch::NoGradGuard no_grad;
    auto stored = torch::from_blob(angles.data(), {static_cast<std::int64_t>(angles.size())},
                                   torch::kFloat64)
                      .to(mc.dtype);
    state.directions_.copy_(stored);
  }
  state.neutral_threshold_ = threshold;
  state.step_ = static_cast<std::int64_t>(step);
  return state;
}

TrainState load_checkpoint(const std::string& path) {
  return load_checkpoint_impl(path, std::nullopt);
}

TrainState load_checkpoint(const std::string& path, const ModelConfig& expected) {
  return load_checkpoint_impl(path, expected);
}

}  // namespace ganmut
