#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace tumordet {

// Axis-aligned rectangle in image pixel coordinates, [x1,x2) x [y1,y2).
template <typename Scalar>
struct BasicBox {
  Scalar x1{0}, y1{0}, x2{0}, y2{0};

  Scalar width() const { return x2 - x1; }
  Scalar height() const { return y2 - y1; }
  Scalar area() const { return std::max<Scalar>(width(), 0) * std::max<Scalar>(height(), 0); }
  Scalar center_x() const { return (x1 + x2) / Scalar(2); }
  Scalar center_y() const { return (y1 + y2) / Scalar(2); }
  bool valid() const { return x2 > x1 && y2 > y1; }

  static BasicBox from_center(Scalar cx, Scalar cy, Scalar w, Scalar h) {
    return {cx - w / Scalar(2), cy - h / Scalar(2), cx + w / Scalar(2), cy + h / Scalar(2)};
  }

  template <typename Other>
  BasicBox<Other> cast() const {
    return {static_cast<Other>(x1), static_cast<Other>(y1), static_cast<Other>(x2), static_cast<Other>(y2)};
  }

  bool operator==(const BasicBox&) const = default;
};

using Box = BasicBox<double>;

struct ScoredBox {
  Box box;
  double score = 0;
};

template <typename Scalar>
BasicBox<Scalar> clip(const BasicBox<Scalar>& b, Scalar width, Scalar height) {
  return {std::clamp<Scalar>(b.x1, 0, width), std::clamp<Scalar>(b.y1, 0, height),
          std::clamp<Scalar>(b.x2, 0, width), std::clamp<Scalar>(b.y2, 0, height)};
}

template <typename Scalar>
Scalar intersection_area(const BasicBox<Scalar>& a, const BasicBox<Scalar>& b) {
  const Scalar w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const Scalar h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return (w > 0 && h > 0) ? w * h : Scalar(0);
}

// Intersection over union; 0 when the union is empty.
template <typename Scalar>
Scalar iou(const BasicBox<Scalar>& a, const BasicBox<Scalar>& b) {
  const Scalar inter = intersection_area(a, b);
  const Scalar uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : Scalar(0);
}

// Regression parameterization relative to a reference box: center shift in
// units of the reference size, log-ratio of sizes. `weights` scale each term.
using Deltas = Eigen::Array4d;

inline Deltas encode_box(const Box& target, const Box& reference, const Deltas& weights = Deltas::Ones()) {
  Deltas d;
  d << (target.center_x() - reference.center_x()) / reference.width(),
      (target.center_y() - reference.center_y()) / reference.height(),
      std::log(target.width() / reference.width()), std::log(target.height() / reference.height());
  return d * weights;
}

// Log-size terms are clamped so a wild prediction cannot overflow exp().
inline Box decode_box(const Deltas& raw, const Box& reference, const Deltas& weights = Deltas::Ones()) {
  static const double kMaxLogRatio = std::log(1000.0 / 16.0);
  const Deltas d = raw / weights;
  const double cx = reference.center_x() + d[0] * reference.width();
  const double cy = reference.center_y() + d[1] * reference.height();
  const double w = reference.width() * std::exp(std::min(d[2], kMaxLogRatio));
  const double h = reference.height() * std::exp(std::min(d[3], kMaxLogRatio));
  return Box::from_center(cx, cy, w, h);
}

}  // namespace tumordet
