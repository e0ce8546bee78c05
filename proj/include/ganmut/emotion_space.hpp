#pragma once

#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ganmut/common.hpp"

namespace ganmut {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

/// A point of the 2-D conditional space in polar form: direction angle theta in
/// [0, 2pi) and intensity rho in [0, 1].
struct EmotionCode {
  double theta = 0.0;
  double rho = 0.0;

  double x() const;
  double y() const;
};

/// Wraps theta into [0, 2pi) and clamps rho into [0, 1]. `clamped`, when given,
/// reports whether rho needed clamping. Throws ValidationError on non-finite input.
EmotionCode normalize_code(double theta, double rho, bool* clamped = nullptr);

std::pair<double, double> polar_to_cartesian(const EmotionCode& code);

/// Inverse of polar_to_cartesian. Radii above 1 are clamped to 1; the origin
/// maps to theta = 0. Throws ValidationError on non-finite input.
EmotionCode cartesian_to_polar(double x, double y);

/// An ordered set of emotion names with exactly one `neutral` entry. Ids are
/// positions in the list. The canonical set is the 7 basic emotions in
/// alphabetical order (anger, disgust, fear, happiness, neutral, sadness,
/// surprise).
class LabelSet {
 public:
  explicit LabelSet(std::vector<std::string> names);

  static const LabelSet& canonical();

  int size() const { return static_cast<int>(names_.size()); }
  int neutral_id() const { return neutral_id_; }
  bool is_neutral(int id) const { return id == neutral_id_; }
  const std::string& name(int id) const;
  /// Id for a name; throws ValidationError if unknown.
  int id(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  /// Non-neutral ids in ascending order.
  std::vector<int> emotion_ids() const;

  bool operator==(const LabelSet& other) const { return names_ == other.names_; }

 private:
  std::vector<std::string> names_;
  int neutral_id_ = -1;
};

/// Learnable direction angle per non-neutral label plus the neutral threshold.
/// Angles are indexed by non-neutral label order (ascending id).
struct DirectionTable {
  LabelSet labels;
  std::vector<double> angles;
  double neutral_threshold = 0.2;

  /// Position of a non-neutral label id inside `angles`.
  int direction_index(int label_id) const;
  double angle_for(int label_id) const;
};

/// Directions equally spaced on [0, 2pi): the i-th non-neutral label sits at
/// 2*pi*i / (M-1). Throws ValidationError unless 0 < threshold < 1 and M >= 2.
DirectionTable init_directions(const LabelSet& labels, double threshold = 0.2);

/// Draws a condition code. Without a label: theta ~ U[0,2pi), rho ~ U[0,1)
/// (full-gamut exploration). For neutral: theta ~ U[0,2pi), rho ~ U[0,T).
/// For an emotion c: theta = table angle of c, rho ~ U[T,1].
EmotionCode sample_condition(const DirectionTable& table, std::optional<int> label,
                             std::mt19937_64& rng);

/// Decodes a code back to a label: neutral below the threshold, otherwise the
/// label whose direction is angularly closest; ties go to the lowest id.
int label_for_code(const DirectionTable& table, const EmotionCode& code);

/// Shortest angular distance between two angles, in [0, pi].
double angular_distance(double a, double b);

/// Wraps an angle into [0, 2pi).
double wrap_angle(double theta);

}  // namespace ganmut
