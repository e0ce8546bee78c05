#include "ganmut/datapipe.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <json.hpp>

namespace ganmut {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

cv::Mat decode_image(const std::string& path) {
  cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);
  if (img.empty()) throw IoError("cannot decode image: " + path);
  return img;
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  out += "'";
  return out;
}

}  // namespace

std::vector<Detection> filter_detections(std::vector<Detection> detections,
                                         double min_confidence) {
  std::erase_if(detections,
                [min_confidence](const Detection& d) { return d.confidence < min_confidence; });
  std::stable_sort(detections.begin(), detections.end(),
                   [](const Detection& a, const Detection& b) {
                     return a.confidence > b.confidence;
                   });
  return detections;
}

std::vector<Detection> WholeFrameDetector::detect(const std::string& image_path) {
  cv::Mat img = decode_image(image_path);
  Detection d;
  d.bbox = {0.0, 0.0, static_cast<double>(img.cols), static_cast<double>(img.rows)};
  d.confidence = 1.0;
  return {d};
}

CommandDetector::CommandDetector(std::string command, double min_confidence)
    : command_(std::move(command)), min_confidence_(min_confidence) {
  if (command_.empty()) throw ConfigError("detector command must not be empty");
  if (!(min_confidence_ >= 0.0 && min_confidence_ <= 1.0)) {
    throw ConfigError("min_confidence must lie in [0, 1]");
  }
}

std::vector<Detection> CommandDetector::detect(const std::string& image_path) {
  const std::string cmd = command_ + " " + shell_quote(image_path);
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw IoError("cannot launch detector: " + command_);

  std::string output;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) output.append(buf, n);
  const int status = pclose(pipe);
  if (status != 0) {
    throw IoError("detector exited with status " + std::to_string(status) + ": " + command_);
  }

  std::vector<Detection> detections;
  std::istringstream lines(output);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("bad detector output line: " + std::string(e.what()));
    }
    Detection d;
    auto bbox = j.at("bbox");
    for (int i = 0; i < 4; ++i) d.bbox[i] = bbox.at(i).get<double>();
    d.confidence = j.at("confidence").get<double>();
    if (j.contains("landmarks") && !j["landmarks"].is_null()) {
      std::array<std::array<double, 2>, 5> pts{};
      for (int i = 0; i < 5; ++i) {
        pts[i][0] = j["landmarks"].at(i).at(0).get<double>();
        pts[i][1] = j["landmarks"].at(i).at(1).get<double>();
      }
      d.landmarks = pts;
    }
    detections.push_back(d);
  }
  return filter_detections(std::move(detections), min_confidence_);
}

std::optional<Detection> detect_primary_face(DetectorClient& client,
                                             const std::string& image_path) {
  auto detections = filter_detections(client.detect(image_path), client.min_confidence());
  if (detections.empty()) return std::nullopt;
  return detections.front();
}

std::optional<int> remap_label(const std::string& scheme, int source_id) {
  if (scheme == "canonical") {
    if (source_id >= 0 && source_id < LabelSet::canonical().size()) return source_id;
    return std::nullopt;
  }
  if (scheme == "aff_wild2") {
    // Aff-Wild2 EXPR order (neutral first) into the canonical alphabetical
    // order; "other" (7) and invalid (-1) frames are dropped.
    static const std::map<int, int> table = {{0, 4}, {1, 0}, {2, 1}, {3, 2},
                                             {4, 3}, {5, 5}, {6, 6}};
    auto it = table.find(source_id);
    if (it == table.end()) return std::nullopt;
    return it->second;
  }
  throw ConfigError("unknown label remap scheme: " + scheme);
}

namespace {

std::vector<int> read_annotation_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read annotation file: " + path.string());
  std::vector<int> labels;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {  // first line names the label scheme
      header = false;
      continue;
    }
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    try {
      labels.push_back(std::stoi(line));
    } catch (const std::exception&) {
      labels.push_back(std::numeric_limits<int>::min());  // unparsable -> dropped
    }
  }
  return labels;
}

cv::Rect clamp_bbox(const std::array<double, 4>& bbox, const cv::Mat& img) {
  int x = std::clamp(static_cast<int>(std::lround(bbox[0])), 0, img.cols - 1);
  int y = std::clamp(static_cast<int>(std::lround(bbox[1])), 0, img.rows - 1);
  int w = std::clamp(static_cast<int>(std::lround(bbox[2])), 1, img.cols - x);
  int h = std::clamp(static_cast<int>(std::lround(bbox[3])), 1, img.rows - y);
  return {x, y, w, h};
}

}  // namespace

ManifestStats build_manifest(const std::string& frames_root,
                             const std::string& annotations_root, DetectorClient& client,
                             const std::string& out_csv, const std::string& crops_dir,
                             const std::string& label_scheme) {
  if (!fs::is_directory(frames_root)) throw ValidationError("frames root missing: " + frames_root);
  if (!fs::is_directory(annotations_root)) {
    throw ValidationError("annotations root missing: " + annotations_root);
  }
  remap_label(label_scheme, 0);  // fail fast on unknown schemes

  std::vector<fs::path> videos;
  for (const auto& entry : fs::directory_iterator(frames_root)) {
    if (entry.is_directory()) videos.push_back(entry.path());
  }
  std::sort(videos.begin(), videos.end());

  const fs::path manifest_dir = fs::absolute(out_csv).parent_path();
  fs::create_directories(manifest_dir);
  fs::create_directories(crops_dir);

  ManifestStats stats;
  std::vector<ManifestRecord> records;

  for (const auto& video : videos) {
    const auto annotation = fs::path(annotations_root) / (video.filename().string() + ".txt");
    if (!fs::exists(annotation)) {
      ++stats.videos_skipped;
      continue;
    }
    const auto labels = read_annotation_labels(annotation);

    std::vector<fs::path> frames;
    for (const auto& entry : fs::directory_iterator(video)) {
      if (entry.is_regular_file() && is_image_file(entry.path())) frames.push_back(entry.path());
    }
    std::sort(frames.begin(), frames.end());

    for (std::size_t i = 0; i < frames.size(); ++i) {
      ++stats.frames_seen;
      if (i >= labels.size()) {
        ++stats.dropped_label;
        continue;
      }
      const auto label = remap_label(label_scheme, labels[i]);
      if (!label) {
        ++stats.dropped_label;
        continue;
      }

      cv::Mat img;
      std::optional<Detection> face;
      try {
        face = detect_primary_face(client, frames[i].string());
        if (face) img = decode_image(frames[i].string());
      } catch (const IoError& e) {
        std::cerr << "warning: " << e.what() << "\n";
        ++stats.decode_errors;
        continue;
      }
      if (!face) {
        ++stats.dropped_no_face;
        continue;
      }

      const auto crop_video_dir = fs::path(crops_dir) / video.filename();
      fs::create_directories(crop_video_dir);
      const auto crop_path = crop_video_dir / (frames[i].stem().string() + ".png");
      cv::imwrite(crop_path.string(), img(clamp_bbox(face->bbox, img)));

      records.push_back({fs::relative(fs::absolute(crop_path), manifest_dir).generic_string(),
                         *label});
      ++stats.written;
    }
  }

  std::sort(records.begin(), records.end(),
            [](const ManifestRecord& a, const ManifestRecord& b) { return a.path < b.path; });
  write_manifest_csv(out_csv, records);
  return stats;
}

void write_manifest_csv(const std::string& csv_path,
                        const std::vector<ManifestRecord>& records) {
  std::ofstream out(csv_path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write manifest: " + csv_path);
  out << "path,label\n";
  for (const auto& r : records) {
    out << r.path << ',' << r.label << '\n';
  }
  if (!out.good()) throw IoError("failed writing manifest: " + csv_path);
}

std::vector<ManifestRecord> read_manifest(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot read manifest: " + csv_path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("manifest is missing its header: " + csv_path);
  std::vector<ManifestRecord> records;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw IoError("malformed manifest row: " + line);
    ManifestRecord rec;
    rec.path = line.substr(0, comma);
    try {
      rec.label = std::stoi(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw IoError("malformed manifest label in row: " + line);
    }
    if (rec.label < 0 || rec.label >= LabelSet::canonical().size()) {
      throw ValidationError("label id out of range in manifest row: " + line);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

torch::Tensor load_image(const ManifestRecord& record, const std::string& manifest_dir,
                         int image_size, bool augment, std::mt19937_64& rng) {
  const auto path = (fs::path(manifest_dir) / record.path).string();
  cv::Mat img = decode_image(path);
  cv::cvtColor(img, img, cv::COLOR_BGR2RGB);
  cv::resize(img, img, cv::Size(image_size, image_size), 0, 0, cv::INTER_AREA);

  if (augment) {
    const double angle = uniform(rng, -10.0, 10.0);
    const double tx = uniform(rng, -0.05, 0.05) * image_size;
    const double ty = uniform(rng, -0.05, 0.05) * image_size;
    const double zoom = uniform(rng, 0.9, 1.1);
    cv::Mat m = cv::getRotationMatrix2D(
        cv::Point2f(image_size / 2.0f, image_size / 2.0f), angle, zoom);
    m.at<double>(0, 2) += tx;
    m.at<double>(1, 2) += ty;
    cv::warpAffine(img, img, m, img.size(), cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
  }

  auto tensor = torch::from_blob(img.data, {image_size, image_size, 3}, torch::kUInt8)
                    .permute({2, 0, 1})
                    .to(torch::kFloat32)
                    .div(127.5)
                    .sub(1.0)
                    .clamp(-1.0, 1.0)
                    .contiguous();
  return tensor;
}

Batch load_batch(const std::vector<ManifestRecord>& records, const std::string& manifest_dir,
                 std::int64_t batch_size, int image_size, bool augment,
                 std::mt19937_64& rng) {
  if (records.empty()) throw ValidationError("manifest is empty");
  std::vector<torch::Tensor> images;
  std::vector<std::int64_t> labels;
  const auto count = std::min<std::int64_t>(batch_size, records.size());
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      images.push_back(load_image(records[i], manifest_dir, image_size, augment, rng));
      labels.push_back(records[i].label);
    } catch (const IoError& e) {
      std::cerr << "warning: skipping record: " << e.what() << "\n";
    }
  }
  if (images.empty()) throw IoError("no readable images in batch");
  return Batch{torch::stack(images),
               torch::tensor(labels, torch::kInt64)};
}

ManifestLoader::ManifestLoader(const std::string& csv_path, std::int64_t batch_size,
                               int image_size, bool augment, std::uint64_t seed)
    : records_(read_manifest(csv_path)),
      manifest_dir_(fs::absolute(csv_path).parent_path().string()),
      batch_size_(batch_size),
      image_size_(image_size),
      augment_(augment),
      rng_(derive_seed(seed, "loader")) {
  if (records_.empty()) throw ValidationError("manifest has no records: " + csv_path);
  if (batch_size_ < 1) throw ValidationError("batch_size must be positive");
  order_.resize(records_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  reshuffle();
}

void ManifestLoader::reshuffle() {
  // Fisher-Yates on top of uniform01 so the permutation sequence does not
  // depend on the standard library's shuffle implementation.
  for (std::size_t i = order_.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng_) * i);
    std::swap(order_[i - 1], order_[std::min(j, i - 1)]);
  }
  cursor_ = 0;
}

Batch ManifestLoader::next() {
  if (cursor_ >= order_.size()) reshuffle();
  const auto take = std::min<std::size_t>(batch_size_, order_.size() - cursor_);
  std::vector<torch::Tensor> images;
  std::vector<std::int64_t> labels;
  for (std::size_t k = 0; k < take; ++k) {
    const auto& rec = records_[order_[cursor_ + k]];
    images.push_back(load_image(rec, manifest_dir_, image_size_, augment_, rng_));
    labels.push_back(rec.label);
  }
  cursor_ += take;
  return Batch{torch::stack(images), torch::tensor(labels, torch::kInt64)};
}

std::vector<int> ManifestLoader::labels_present() const {
  std::set<int> distinct;
  for (const auto& r : records_) distinct.insert(r.label);
  return {distinct.begin(), distinct.end()};
}

std::int64_t ManifestLoader::batches_per_epoch() const {
  return (size() + batch_size_ - 1) / batch_size_;
}

void write_synthetic_dataset(const std::string& dir, int num_images, int image_size,
                             std::uint64_t seed) {
  if (num_images < 3) throw ValidationError("need at least one image per class");
  if (image_size < 8) throw ValidationError("image_size too small");

  const auto images_dir = fs::path(dir) / "images";
  fs::create_directories(images_dir);
  std::mt19937_64 rng(derive_seed(seed, "synthetic"));

  const auto& labels = LabelSet::canonical();
  const int anger = labels.id("anger");
  const int happiness = labels.id("happiness");
  const int neutral = labels.neutral_id();

  std::vector<ManifestRecord> records;
  for (int i = 0; i < num_images; ++i) {
    const int cls = i % 3;  // neutral, anger, happiness round-robin
    const auto background = static_cast<unsigned char>(uniform(rng, 40.0, 90.0));
    cv::Mat img(image_size, image_size, CV_8UC3, cv::Scalar(background, background, background));

    const auto bright = static_cast<unsigned char>(uniform(rng, 200.0, 255.0));
    const int thickness = std::max(2, image_size / 4);
    const int span = image_size - thickness;
    const int offset = static_cast<int>(uniform01(rng) * span);

    int label = neutral;
    if (cls == 1) {  // horizontal bar
      img(cv::Rect(0, std::min(offset, span), image_size, thickness))
          .setTo(cv::Scalar(bright, bright, bright));
      label = anger;
    } else if (cls == 2) {  // vertical bar
      img(cv::Rect(std::min(offset, span), 0, thickness, image_size))
          .setTo(cv::Scalar(bright, bright, bright));
      label = happiness;
    }

    // mild pixel noise so the critic cannot memorize constant images
    cv::Mat noise(image_size, image_size, CV_16SC3);
    for (int r = 0; r < image_size; ++r) {
      for (int c = 0; c < image_size; ++c) {
        auto& px = noise.at<cv::Vec3s>(r, c);
        for (int ch = 0; ch < 3; ++ch) {
          px[ch] = static_cast<short>(uniform(rng, -12.0, 12.0));
        }
      }
    }
    cv::Mat noisy;
    cv::add(img, noise, noisy, cv::noArray(), CV_8UC3);

    char name[32];
    std::snprintf(name, sizeof(name), "img_%05d.png", i);
    cv::imwrite((images_dir / name).string(), noisy);
    records.push_back({std::string("images/") + name, label});
  }

  std::sort(records.begin(), records.end(),
            [](const ManifestRecord& a, const ManifestRecord& b) { return a.path < b.path; });
  write_manifest_csv((fs::path(dir) / "manifest.csv").string(), records);
}

}  // namespace ganmut
