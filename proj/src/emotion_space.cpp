#include "ganmut/emotion_space.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace ganmut {

namespace {

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw ValidationError(std::string(what) + " must be finite");
  }
}

}  // namespace

double wrap_angle(double theta) {
  double t = std::fmod(theta, kTwoPi);
  if (t < 0.0) t += kTwoPi;
  if (t >= kTwoPi) t = 0.0;  // fmod can land exactly on 2pi after the shift
  return t;
}

double angular_distance(double a, double b) {
  double d = std::fabs(wrap_angle(a) - wrap_angle(b));
  return std::min(d, kTwoPi - d);
}

double EmotionCode::x() const { return rho * std::cos(theta); }
double EmotionCode::y() const { return rho * std::sin(theta); }

EmotionCode normalize_code(double theta, double rho, bool* clamped) {
  require_finite(theta, "theta");
  require_finite(rho, "rho");
  double r = std::clamp(rho, 0.0, 1.0);
  if (clamped) *clamped = (r != rho);
  return EmotionCode{wrap_angle(theta), r};
}

std::pair<double, double> polar_to_cartesian(const EmotionCode& code) {
  return {code.x(), code.y()};
}

EmotionCode cartesian_to_polar(double x, double y) {
  require_finite(x, "x");
  require_finite(y, "y");
  double r = std::hypot(x, y);
  if (r < 1e-9) {
    return EmotionCode{0.0, r};
  }
  if (r > 1.0) r = 1.0;
  return EmotionCode{wrap_angle(std::atan2(y, x)), r};
}

LabelSet::LabelSet(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.size() < 2) {
    throw ValidationError("label set needs at least one emotion and neutral");
  }
  std::set<std::string> seen;
  for (int i = 0; i < static_cast<int>(names_.size()); ++i) {
    if (!seen.insert(names_[i]).second) {
      throw ValidationError("duplicate label name: " + names_[i]);
    }
    if (names_[i] == "neutral") neutral_id_ = i;
  }
  if (neutral_id_ < 0) {
    throw ValidationError("label set has no neutral label");
  }
}

const LabelSet& LabelSet::canonical() {
  static const LabelSet set({"anger", "disgust", "fear", "happiness", "neutral",
                             "sadness", "surprise"});
  return set;
}

const std::string& LabelSet::name(int id) const {
  if (id < 0 || id >= size()) {
    throw ValidationError("label id out of range: " + std::to_string(id));
  }
  return names_[id];
}

int LabelSet::id(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) {
    throw ValidationError("unknown label name: " + name);
  }
  return static_cast<int>(it - names_.begin());
}

bool LabelSet::contains(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

std::vector<int> LabelSet::emotion_ids() const {
  std::vector<int> ids;
  ids.reserve(names_.size() - 1);
  for (int i = 0; i < size(); ++i) {
    if (i != neutral_id_) ids.push_back(i);
  }
  return ids;
}

int DirectionTable::direction_index(int label_id) const {
  if (label_id < 0 || label_id >= labels.size()) {
    throw ValidationError("label id out of range: " + std::to_string(label_id));
  }
  if (labels.is_neutral(label_id)) {
    throw ValidationError("neutral has no direction");
  }
  return label_id < labels.neutral_id() ? label_id : label_id - 1;
}

double DirectionTable::angle_for(int label_id) const {
  return angles[direction_index(label_id)];
}

DirectionTable init_directions(const LabelSet& labels, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ValidationError("neutral threshold must lie in (0, 1)");
  }
  const int m = labels.size();
  const double gap = kTwoPi / static_cast<double>(m - 1);
  std::vector<double> angles(m - 1);
  for (int i = 0; i < m - 1; ++i) {
    angles[i] = static_cast<double>(i) * gap;
  }
  return DirectionTable{labels, std::move(angles), threshold};
}

EmotionCode sample_condition(const DirectionTable& table, std::optional<int> label,
                             std::mt19937_64& rng) {
  if (!label.has_value()) {
    double theta = uniform(rng, 0.0, kTwoPi);
    double rho = uniform01(rng);
    return EmotionCode{theta, rho};
  }
  const int id = *label;
  if (id < 0 || id >= table.labels.size()) {
    throw ValidationError("unknown label id: " + std::to_string(id));
  }
  const double t = table.neutral_threshold;
  if (table.labels.is_neutral(id)) {
    return EmotionCode{uniform(rng, 0.0, kTwoPi), uniform(rng, 0.0, t)};
  }
  return EmotionCode{table.angle_for(id), uniform(rng, t, 1.0)};
}

int label_for_code(const DirectionTable& table, const EmotionCode& code) {
  if (code.rho < table.neutral_threshold) {
    return table.labels.neutral_id();
  }
  int best = -1;
  double best_dist = 0.0;
  for (int id = 0; id < table.labels.size(); ++id) {
    if (table.labels.is_neutral(id)) continue;
    double d = angular_distance(code.theta, table.angle_for(id));
    if (best < 0 || d < best_dist) {
      best = id;
      best_dist = d;
    }
  }
  return best;
}

}  // namespace ganmut
