#pragma once

#include <array>
#include <vector>

#include "sardet/common.hpp"

namespace sardet {

// Smallest admissible box extent after clamping; keeps IoU well defined.
inline constexpr float kBoxEps = 1e-4f;

// Axis-aligned box in normalized image coordinates, (cx, cy, w, h).
struct BBox {
  float cx = 0.f, cy = 0.f, w = 0.f, h = 0.f;
};

// Box coordinates in diffusion signal space, with the scaling factor they
// were produced under. Unbounded while diffusing.
struct SignalBox {
  std::array<float, 4> v{};
  float scale = 1.f;
};

BBox clamp_valid(const BBox& b);
float box_area(const BBox& b);

// Normalized -> signal space: u -> (2u - 1) * scale, per coordinate.
SignalBox encode_box(const BBox& b, float scale);

// Signal -> normalized space, total on all reals: centers clamp to [0,1],
// extents to [kBoxEps, 1].
BBox decode_box(const SignalBox& s);
BBox decode_box(const std::array<float, 4>& v, float scale);

float iou(const BBox& a, const BBox& b);
float giou(const BBox& a, const BBox& b);

// One scored, classified detection.
struct Detection {
  BBox box;
  int cls = 0;
  float score = 0.f;
};

// Greedy descending-score suppression; survivors come out in descending
// score order (ties broken by lower input index). Class-agnostic.
std::vector<Detection> nms(const std::vector<Detection>& dets, float iou_threshold);

// nms applied independently within each class label.
std::vector<Detection> nms_per_class(const std::vector<Detection>& dets, float iou_threshold);

}  // namespace sardet
