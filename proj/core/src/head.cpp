#include "invcode/head.hpp"

#include <cmath>
#include <limits>

#include "invcode/error.hpp"
#include "invcode/invertible_fn.hpp"

namespace invcode {

DownstreamHead DownstreamHead::nearest_mean(VecList class_means) {
  if (class_means.empty()) throw Error(ErrorCode::InvalidConfig, "head needs at least one class");
  const auto d = class_means.front().size();
  for (std::size_t i = 0; i < class_means.size(); ++i) {
    if (class_means[i].size() != d)
      throw Error(ErrorCode::DimensionMismatch, "class means differ in dimension");
    for (std::size_t j = 0; j < i; ++j) {
      if (class_means[i] == class_means[j])
        throw Error(ErrorCode::InvalidConfig, "class means must be distinct");
    }
  }
  return DownstreamHead(NearestMean{std::move(class_means)});
}

DownstreamHead DownstreamHead::linear_softmax(Mat w, Vec b) {
  if (w.rows() < 1 || w.rows() != b.size())
    throw Error(ErrorCode::DimensionMismatch, "softmax head needs w rows == b size >= 1");
  return DownstreamHead(LinearSoftmax{std::move(w), std::move(b)});
}

int DownstreamHead::classes() const noexcept {
  if (const auto* nm = std::get_if<NearestMean>(&kind_))
    return static_cast<int>(nm->class_means.size());
  return static_cast<int>(std::get<LinearSoftmax>(kind_).w.rows());
}

int DownstreamHead::dim() const noexcept {
  if (const auto* nm = std::get_if<NearestMean>(&kind_))
    return static_cast<int>(nm->class_means.front().size());
  return static_cast<int>(std::get<LinearSoftmax>(kind_).w.cols());
}

int DownstreamHead::predict(const Vec& embedding) const {
  if (embedding.size() != dim())
    throw Error(ErrorCode::DimensionMismatch, "embedding does not match head dimension");
  int best = 0;
  if (const auto* nm = std::get_if<NearestMean>(&kind_)) {
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < nm->class_means.size(); ++c) {
      const double dist = (embedding - nm->class_means[c]).squaredNorm();
      if (dist < best_dist) {
        best_dist = dist;
        best = static_cast<int>(c);
      }
    }
    return best;
  }
  const auto& ls = std::get<LinearSoftmax>(kind_);
  // Softmax is monotone, so the argmax of the logits is the prediction.
  const Vec logits = ls.w * embedding + ls.b;
  double best_logit = -std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < logits.size(); ++c) {
    if (logits[c] > best_logit) {
      best_logit = logits[c];
      best = static_cast<int>(c);
    }
  }
  return best;
}

double DownstreamHead::margin(const Vec& embedding) const {
  const auto* nm = std::get_if<NearestMean>(&kind_);
  if (nm == nullptr) throw Error(ErrorCode::InvalidConfig, "margin is defined for nearest-mean heads");
  const int label = predict(embedding);
  const Vec& own = nm->class_means[static_cast<std::size_t>(label)];
  double out = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < nm->class_means.size(); ++c) {
    if (static_cast<int>(c) == label) continue;
    const Vec& other = nm->class_means[c];
    // Signed distance to the bisecting hyperplane between the two means.
    const Vec normal = other - own;
    const Vec mid = 0.5 * (own + other);
    out = std::min(out, std::abs((mid - embedding).dot(normal)) / normal.norm());
  }
  return out;
}

void to_json(nlohmann::json& j, const DownstreamHead& head) {
  if (const auto* nm = std::get_if<DownstreamHead::NearestMean>(&head.kind())) {
    auto means = nlohmann::json::array();
    for (const auto& m : nm->class_means) means.push_back(vec_to_json(m));
    j = {{"kind", "nearest_mean"}, {"class_means", std::move(means)}};
    return;
  }
  const auto& ls = std::get<DownstreamHead::LinearSoftmax>(head.kind());
  j = {{"kind", "linear_softmax"}, {"w", mat_to_json(ls.w)}, {"b", vec_to_json(ls.b)}};
}

DownstreamHead head_from_json(const nlohmann::json& j) {
  try {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "nearest_mean") {
      VecList means;
      for (const auto& m : j.at("class_means")) means.push_back(vec_from_json(m));
      return DownstreamHead::nearest_mean(std::move(means));
    }
    if (kind == "linear_softmax")
      return DownstreamHead::linear_softmax(mat_from_json(j.at("w")), vec_from_json(j.at("b")));
    throw Error(ErrorCode::InvalidConfig, "unknown head kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("head json: ") + e.what());
  }
}

}  // namespace invcode
