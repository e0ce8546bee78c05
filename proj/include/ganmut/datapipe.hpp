#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "ganmut/common.hpp"
#include "ganmut/data.hpp"
#include "ganmut/emotion_space.hpp"

namespace ganmut {

struct ManifestRecord {
  std::string path;  // relative to the manifest file
  int label = 0;     // canonical label id
};

struct ManifestStats {
  std::int64_t frames_seen = 0;
  std::int64_t written = 0;
  std::int64_t dropped_label = 0;
  std::int64_t dropped_no_face = 0;
  std::int64_t decode_errors = 0;
  std::int64_t videos_skipped = 0;  // videos without an annotation file
};

struct Detection {
  std::array<double, 4> bbox{};  // x, y, w, h in pixels
  double confidence = 0.0;
  std::optional<std::array<std::array<double, 2>, 5>> landmarks;
};

/// Face detector client. detect() returns detections sorted descending by
/// confidence, all at or above min_confidence.
class DetectorClient {
 public:
  virtual ~DetectorClient() = default;
  virtual std::vector<Detection> detect(const std::string& image_path) = 0;
  virtual std::string name() const = 0;
  virtual double min_confidence() const = 0;
};

/// Trivial detector for tests and label-only datasets: the whole frame is the
/// face, confidence 1.
class WholeFrameDetector : public DetectorClient {
 public:
  std::vector<Detection> detect(const std::string& image_path) override;
  std::string name() const override { return "whole-frame"; }
  double min_confidence() const override { return 0.0; }
};

/// External-process adapter. Runs `command <image_path>` and parses one JSON
/// object per stdout line: {"bbox":[x,y,w,h],"confidence":p,"landmarks":[[x,y]x5]?}.
/// Empty output with exit 0 means no faces.
class CommandDetector : public DetectorClient {
 public:
  CommandDetector(std::string command, double min_confidence);
  std::vector<Detection> detect(const std::string& image_path) override;
  std::string name() const override { return "command:" + command_; }
  double min_confidence() const override { return min_confidence_; }

 private:
  std::string command_;
  double min_confidence_;
};

/// Filters below-threshold detections and sorts the rest by confidence
/// descending (stable); shared by all clients.
std::vector<Detection> filter_detections(std::vector<Detection> detections,
                                         double min_confidence);

/// Highest-confidence detection or nullopt when no face qualifies.
/// Throws IoError when the image cannot be decoded.
std::optional<Detection> detect_primary_face(DetectorClient& client,
                                             const std::string& image_path);

/// Maps a source annotation scheme's label id to the canonical id, or nullopt
/// for labels the pipeline drops. Registered schemes: "canonical", "aff_wild2".
/// Unknown schemes raise ConfigError.
std::optional<int> remap_label(const std::string& scheme, int source_id);

/// Walks one-subdirectory-per-video frame trees, correlates frames with
/// annotation label lines (line i+1 labels frame i, after the header line),
/// crops the primary face of every kept frame into `crops_dir`, and writes the
/// manifest CSV (`path,label`, rows sorted by path).
ManifestStats build_manifest(const std::string& frames_root,
                             const std::string& annotations_root, DetectorClient& client,
                             const std::string& out_csv, const std::string& crops_dir,
                             const std::string& label_scheme = "aff_wild2");

std::vector<ManifestRecord> read_manifest(const std::string& csv_path);
void write_manifest_csv(const std::string& csv_path,
                        const std::vector<ManifestRecord>& records);

/// Decodes one record: resize to image_size, scale to [-1, 1]; augmentation
/// (seeded) applies rotation within +-10 degrees, translation within +-5% and
/// zoom 0.9-1.1 in a single warp.
torch::Tensor load_image(const ManifestRecord& record, const std::string& manifest_dir,
                         int image_size, bool augment, std::mt19937_64& rng);

/// First `batch_size` records of the manifest as one batch. Unreadable records
/// are skipped with a warning; an all-unreadable batch raises IoError.
Batch load_batch(const std::vector<ManifestRecord>& records, const std::string& manifest_dir,
                 std::int64_t batch_size, int image_size, bool augment,
                 std::mt19937_64& rng);

/// Epoch-shuffling batch source over a manifest. Shuffling permutes the record
/// order once per epoch; every epoch yields each record exactly once (the final
/// batch may be short).
class ManifestLoader : public BatchSource {
 public:
  ManifestLoader(const std::string& csv_path, std::int64_t batch_size, int image_size,
                 bool augment, std::uint64_t seed);

  Batch next() override;
  std::int64_t size() const override { return static_cast<std::int64_t>(records_.size()); }
  std::vector<int> labels_present() const override;
  std::int64_t batches_per_epoch() const;

 private:
  void reshuffle();

  std::vector<ManifestRecord> records_;
  std::string manifest_dir_;
  std::int64_t batch_size_;
  int image_size_;
  bool augment_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Writes a small synthetic expression dataset: `neutral` plain frames plus two
/// geometric "emotions" (horizontal bar = anger, vertical bar = happiness) with
/// jittered position and brightness. Produces images/*.png and manifest.csv
/// under `dir` using canonical label ids.
void write_synthetic_dataset(const std::string& dir, int num_images, int image_size,
                             std::uint64_t seed);

}  // namespace ganmut
