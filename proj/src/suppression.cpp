#include "progdet/suppression.hpp"

#include <algorithm>
#include <numeric>

namespace progdet {

std::vector<Prediction> nms(std::span<const Prediction> preds, double iou_threshold) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });
  std::vector<char> suppressed(preds.size(), 0);
  std::vector<Prediction> kept;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    kept.push_back(preds[i]);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!suppressed[j] && iou(preds[i].box, preds[j].box) >= iou_threshold) suppressed[j] = 1;
    }
  }
  return kept;
}

std::vector<Prediction> soft_nms(std::span<const Prediction> preds, double iou_threshold,
                                 SoftNmsMode mode, double score_floor) {
  std::vector<Prediction> pending(preds.begin(), preds.end());
  std::vector<std::size_t> origin(preds.size());
  std::iota(origin.begin(), origin.end(), 0);
  std::vector<Prediction> out;
  out.reserve(preds.size());
  while (!pending.empty()) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < pending.size(); ++k) {
      if (pending[k].score > pending[best].score ||
          (pending[k].score == pending[best].score && origin[k] < origin[best]))
        best = k;
    }
    const Prediction picked = pending[best];
    out.push_back(picked);
    pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(best));
    origin.erase(origin.begin() + static_cast<std::ptrdiff_t>(best));
    for (auto& p : pending) {
      const double o = iou(picked.box, p.box);
      if (o < iou_threshold) continue;
      p.score = mode == SoftNmsMode::Linear ? p.score * (1.0 - o) : 0.0;
    }
  }
  std::erase_if(out, [&](const Prediction& p) { return p.score < score_floor; });
  return out;
}

}  // namespace progdet
