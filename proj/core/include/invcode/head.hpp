#pragma once

#include <variant>

#include <nlohmann/json.hpp>

#include "invcode/types.hpp"

namespace invcode {

/// Downstream classifier g applied to a (possibly recovered) embedding.
/// Both kinds return the argmax label with lowest-index tie-break.
class DownstreamHead {
 public:
  struct NearestMean {
    VecList class_means;
  };
  struct LinearSoftmax {
    Mat w;  // classes x d
    Vec b;
  };

  static DownstreamHead nearest_mean(VecList class_means);
  static DownstreamHead linear_softmax(Mat w, Vec b);

  int classes() const noexcept;
  int dim() const noexcept;
  const std::variant<NearestMean, LinearSoftmax>& kind() const noexcept { return kind_; }

  int predict(const Vec& embedding) const;

  /// Distance from `embedding` to the nearest decision boundary, for the
  /// nearest-mean kind. Perturbations shorter than this never change the
  /// label.
  double margin(const Vec& embedding) const;

 private:
  explicit DownstreamHead(std::variant<NearestMean, LinearSoftmax> kind) : kind_(std::move(kind)) {}
  std::variant<NearestMean, LinearSoftmax> kind_;
};

void to_json(nlohmann::json& j, const DownstreamHead& head);
DownstreamHead head_from_json(const nlohmann::json& j);

}  // namespace invcode
