#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

namespace progdet {

/// Axis-aligned box in continuous image coordinates, corner format.
/// Areas are continuous; there is no +1 pixel convention.
template <typename Scalar>
struct Box {
  Scalar x1{0}, y1{0}, x2{0}, y2{0};

  Scalar width() const { return x2 - x1; }
  Scalar height() const { return y2 - y1; }
  Scalar center_x() const { return (x1 + x2) / Scalar(2); }
  Scalar center_y() const { return (y1 + y2) / Scalar(2); }

  bool valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
           std::isfinite(y2) && x2 >= x1 && y2 >= y1;
  }

  static Box from_xywh(Scalar x, Scalar y, Scalar w, Scalar h) {
    return Box{x, y, x + w, y + h};
  }

  friend bool operator==(const Box&, const Box&) = default;
};

using BoundingBox = Box<double>;

struct GroundTruth {
  std::vector<BoundingBox> boxes;
  std::vector<BoundingBox> ignore_regions;
};

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
Scalar area(const Box<Scalar>& b) {
  return b.width() * b.height();
}

template <typename Scalar>
Scalar intersection_area(const Box<Scalar>& a, const Box<Scalar>& b) {
  const Scalar iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const Scalar ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= Scalar(0) || ih <= Scalar(0)) return Scalar(0);
  return iw * ih;
}

template <typename Scalar>
Scalar iou(const Box<Scalar>& a, const Box<Scalar>& b) {
  const Scalar inter = intersection_area(a, b);
  const Scalar uni = area(a) + area(b) - inter;
  if (uni <= Scalar(0)) return Scalar(0);
  return inter / uni;
}

/// Intersection over the area of `a` (not of `region`).
template <typename Scalar>
Scalar ioa(const Box<Scalar>& a, const Box<Scalar>& region) {
  const Scalar aa = area(a);
  if (aa <= Scalar(0)) return Scalar(0);
  return intersection_area(a, region) / aa;
}

template <typename Scalar>
Box<Scalar> hull(const Box<Scalar>& a, const Box<Scalar>& b) {
  return {std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2),
          std::max(a.y2, b.y2)};
}

template <typename Scalar>
Scalar giou(const Box<Scalar>& a, const Box<Scalar>& b) {
  const Scalar inter = intersection_area(a, b);
  const Scalar uni = area(a) + area(b) - inter;
  const Scalar hull_area = area(hull(a, b));
  if (hull_area <= Scalar(0)) return uni > Scalar(0) ? inter / uni : Scalar(0);
  const Scalar overlap = uni > Scalar(0) ? inter / uni : Scalar(0);
  return overlap - (hull_area - uni) / hull_area;
}

/// True iff the center of `pred` lies inside `target`, boundary included.
template <typename Scalar>
bool center_inside(const Box<Scalar>& pred, const Box<Scalar>& target) {
  const Scalar cx = pred.center_x();
  const Scalar cy = pred.center_y();
  return cx >= target.x1 && cx <= target.x2 && cy >= target.y1 && cy <= target.y2;
}

enum class NeighborRule {
  AtLeast,         // iou >= threshold (relation extractor)
  StrictlyAbove,   // iou > threshold (local self-attention uses threshold 0)
};

template <typename Scalar>
std::vector<std::size_t> find_neighbors(const Box<Scalar>& query,
                                        std::span<const Box<Scalar>> pool,
                                        Scalar threshold,
                                        NeighborRule rule = NeighborRule::AtLeast) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < pool.size(); ++j) {
    const Scalar o = iou(query, pool[j]);
    const bool hit = rule == NeighborRule::AtLeast ? o >= threshold : o > threshold;
    if (hit) out.push_back(j);
  }
  return out;
}

template <typename Scalar>
MatrixX<Scalar> pairwise_iou(std::span<const Box<Scalar>> a, std::span<const Box<Scalar>> b) {
  MatrixX<Scalar> out(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = iou(a[i], b[j]);
  return out;
}

struct PairEncoding {
  static constexpr int kGeometryTerms = 5;
  static constexpr double kLogEpsilon = 1e-3;
  static constexpr double kFrequencyBase = 1000.0;
  static constexpr double kScale = 100.0;
};

/// Relative geometry of neighbor `n` seen from box `b`:
/// (log(|dcx|/w_b + eps), log(|dcy|/h_b + eps), log(w_n/w_b), log(h_n/h_b), iou(b, n)).
template <typename Scalar>
Eigen::Matrix<Scalar, 5, 1> relative_geometry(const Box<Scalar>& b, const Box<Scalar>& n) {
  const Scalar wb = b.width(), hb = b.height();
  const Scalar wn = n.width(), hn = n.height();
  if (!(wb > Scalar(0) && hb > Scalar(0) && wn > Scalar(0) && hn > Scalar(0)))
    throw std::invalid_argument("encode_pair: degenerate box");
  const Scalar eps = Scalar(PairEncoding::kLogEpsilon);
  Eigen::Matrix<Scalar, 5, 1> g;
  g << std::log(std::abs(n.center_x() - b.center_x()) / wb + eps),
      std::log(std::abs(n.center_y() - b.center_y()) / hb + eps), std::log(wn / wb),
      std::log(hn / hb), iou(b, n);
  return g;
}

/// Sine/cosine expansion of the relative geometry. Each of the five terms is
/// expanded at d_enc/10 geometric frequencies; output layout per term is
/// [sin(f_0 x) .. sin(f_{k-1} x), cos(f_0 x) .. cos(f_{k-1} x)].
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> encode_pair(const Box<Scalar>& b, const Box<Scalar>& n,
                                                     int d_enc) {
  if (d_enc <= 0 || d_enc % (2 * PairEncoding::kGeometryTerms) != 0)
    throw std::invalid_argument("encode_pair: d_enc must be a positive multiple of 10");
  const auto g = relative_geometry(b, n);
  const int freqs = d_enc / (2 * PairEncoding::kGeometryTerms);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(d_enc);
  for (int t = 0; t < PairEncoding::kGeometryTerms; ++t) {
    const int base = t * 2 * freqs;
    for (int k = 0; k < freqs; ++k) {
      const Scalar inv = std::pow(Scalar(PairEncoding::kFrequencyBase),
                                  -static_cast<Scalar>(k) / static_cast<Scalar>(freqs));
      const Scalar arg = Scalar(PairEncoding::kScale) * g(t) * inv;
      out(base + k) = std::sin(arg);
      out(base + freqs + k) = std::cos(arg);
    }
  }
  return out;
}

}  // namespace progdet
