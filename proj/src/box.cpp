#include "sardet/box.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sardet {

BBox clamp_valid(const BBox& b) {
  BBox r;
  r.cx = std::clamp(b.cx, 0.f, 1.f);
  r.cy = std::clamp(b.cy, 0.f, 1.f);
  r.w = std::clamp(b.w, kBoxEps, 1.f);
  r.h = std::clamp(b.h, kBoxEps, 1.f);
  return r;
}

float box_area(const BBox& b) { return b.w * b.h; }

SignalBox encode_box(const BBox& b, float scale) {
  if (scale <= 0.f) throw ParameterError("encode_box: scale must be positive");
  SignalBox s;
  s.scale = scale;
  s.v = {(2.f * b.cx - 1.f) * scale, (2.f * b.cy - 1.f) * scale, (2.f * b.w - 1.f) * scale,
         (2.f * b.h - 1.f) * scale};
  return s;
}

BBox decode_box(const std::array<float, 4>& v, float scale) {
  if (scale <= 0.f) throw ParameterError("decode_box: scale must be positive");
  auto undo = [scale](float s) { return (s / scale + 1.f) * 0.5f; };
  return clamp_valid({undo(v[0]), undo(v[1]), undo(v[2]), undo(v[3])});
}

BBox decode_box(const SignalBox& s) { return decode_box(s.v, s.scale); }

namespace {

struct Corners {
  float x1, y1, x2, y2;
};

Corners corners(const BBox& b) {
  return {b.cx - b.w * 0.5f, b.cy - b.h * 0.5f, b.cx + b.w * 0.5f, b.cy + b.h * 0.5f};
}

float intersection(const Corners& a, const Corners& b) {
  const float iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const float ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.f || ih <= 0.f) return 0.f;
  return iw * ih;
}

}  // namespace

float iou(const BBox& a, const BBox& b) {
  const Corners ca = corners(a), cb = corners(b);
  const float inter = intersection(ca, cb);
  const float uni = box_area(a) + box_area(b) - inter;
  return uni > 0.f ? inter / uni : 0.f;
}

float giou(const BBox& a, const BBox& b) {
  const Corners ca = corners(a), cb = corners(b);
  const float inter = intersection(ca, cb);
  const float uni = box_area(a) + box_area(b) - inter;
  const float cw = std::max(ca.x2, cb.x2) - std::min(ca.x1, cb.x1);
  const float ch = std::max(ca.y2, cb.y2) - std::min(ca.y1, cb.y1);
  const float enclosing = cw * ch;
  const float iou_v = uni > 0.f ? inter / uni : 0.f;
  if (enclosing <= 0.f) return iou_v;
  return iou_v - (enclosing - uni) / enclosing;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, float iou_threshold) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int i, int j) { return dets[i].score > dets[j].score; });
  std::vector<Detection> kept;
  for (int i : order) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (iou(dets[i].box, k.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(dets[i]);
  }
  return kept;
}

std::vector<Detection> nms_per_class(const std::vector<Detection>& dets, float iou_threshold) {
  int max_cls = -1;
  for (const Detection& d : dets) max_cls = std::max(max_cls, d.cls);
  std::vector<Detection> out;
  for (int c = 0; c <= max_cls; ++c) {
    std::vector<Detection> sub;
    for (const Detection& d : dets)
      if (d.cls == c) sub.push_back(d);
    auto kept = nms(sub, iou_threshold);
    out.insert(out.end(), kept.begin(), kept.end());
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return out;
}

}  // namespace sardet
