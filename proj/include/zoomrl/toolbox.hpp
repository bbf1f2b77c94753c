// SPDX-License-Identifier: Apache-2.0
#pragma once

// Image tools executed on behalf of the policy: zoom-in crop and right-angle
// rotation, plus the box geometry they share.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "zoomrl/error.hpp"
#include "zoomrl/protocol.hpp"

namespace zoomrl {

struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const noexcept { return x2 - x1; }
  double height() const noexcept { return y2 - y1; }
  double area() const noexcept { return std::max(0.0, width()) * std::max(0.0, height()); }
  bool operator==(const BBox&) const = default;

  std::vector<double> to_vector() const { return {x1, y1, x2, y2}; }
  static BBox from_vector(const std::vector<double>& v) {
    if (v.size() != 4) throw Error(Errc::InvalidArgument, "bbox needs 4 coordinates");
    return {v[0], v[1], v[2], v[3]};
  }
};

inline void to_json(json& j, const BBox& b) { j = json::array({b.x1, b.y1, b.x2, b.y2}); }
inline void from_json(const json& j, BBox& b) {
  if (!j.is_array() || j.size() != 4) throw Error(Errc::InvalidArgument, "bbox must be [x1, y1, x2, y2]");
  for (const auto& v : j)
    if (!v.is_number()) throw Error(Errc::InvalidArgument, "bbox coordinates must be numbers");
  b = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

/// Interleaved 8-bit pixels, row-major, `channels` per pixel (1, 3 or 4).
struct RasterImage {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;
  std::string id;

  RasterImage() = default;
  RasterImage(int w, int h, int c = 3, std::string source_id = {})
      : width(w), height(h), channels(c), id(std::move(source_id)) {
    if (w < 1 || h < 1) throw Error(Errc::ImageError, "image dimensions must be positive");
    if (c < 1 || c > 4) throw Error(Errc::ImageError, "unsupported channel count");
    pixels.assign(static_cast<std::size_t>(w) * h * c, 0);
  }

  std::size_t offset(int x, int y) const noexcept {
    return (static_cast<std::size_t>(y) * width + x) * channels;
  }
  std::uint8_t* at(int x, int y) noexcept { return pixels.data() + offset(x, y); }
  const std::uint8_t* at(int x, int y) const noexcept { return pixels.data() + offset(x, y); }

  /// Pixel equality; ids are ignored.
  bool same_pixels(const RasterImage& o) const {
    return width == o.width && height == o.height && channels == o.channels && pixels == o.pixels;
  }
};

using ImagePtr = std::shared_ptr<const RasterImage>;

struct Provenance {
  std::string tool_name;
  json parameters;
  std::string parent_id;
};

struct ToolResult {
  RasterImage image;
  Provenance provenance;
};

inline constexpr double kDefaultMinSide = 10.0;

namespace detail {

// Grow [lo, hi] symmetrically to `want` and slide it back inside [0, limit].
inline void widen_axis(double& lo, double& hi, double want, double limit) {
  want = std::min(want, limit);
  if (hi - lo >= want) return;
  const double c = 0.5 * (lo + hi);
  lo = c - want / 2;
  hi = c + want / 2;
  if (lo < 0) {
    hi -= lo;
    lo = 0;
  }
  if (hi > limit) {
    lo -= hi - limit;
    hi = limit;
  }
  lo = std::max(lo, 0.0);
}

}  // namespace detail

/// Reorders corners, clamps to the w x h frame and widens any side shorter
/// than min_side. Throws DegenerateBox when nothing of the box lies inside the frame.
inline BBox normalize_and_clamp(BBox b, double w, double h, double min_side = kDefaultMinSide) {
  if (!(w >= 1 && h >= 1)) throw Error(Errc::InvalidArgument, "frame must be at least 1x1");
  if (!std::isfinite(b.x1) || !std::isfinite(b.y1) || !std::isfinite(b.x2) || !std::isfinite(b.y2))
    throw Error(Errc::DegenerateBox, "non-finite coordinate");
  if (b.x1 > b.x2) std::swap(b.x1, b.x2);
  if (b.y1 > b.y2) std::swap(b.y1, b.y2);
  b.x1 = std::clamp(b.x1, 0.0, w);
  b.x2 = std::clamp(b.x2, 0.0, w);
  b.y1 = std::clamp(b.y1, 0.0, h);
  b.y2 = std::clamp(b.y2, 0.0, h);
  if (b.area() <= 0) throw Error(Errc::DegenerateBox, "empty region");
  detail::widen_axis(b.x1, b.x2, min_side, w);
  detail::widen_axis(b.y1, b.y2, min_side, h);
  return b;
}

inline double iou(const BBox& a, const BBox& b) noexcept {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

/// Smallest box covering every input box.
inline BBox union_box(const std::vector<BBox>& boxes) {
  if (boxes.empty()) throw Error(Errc::InvalidArgument, "union of no boxes");
  BBox u = boxes.front();
  for (const auto& b : boxes) {
    u.x1 = std::min(u.x1, b.x1);
    u.y1 = std::min(u.y1, b.y1);
    u.x2 = std::max(u.x2, b.x2);
    u.y2 = std::max(u.y2, b.y2);
  }
  return u;
}

inline std::string format_box(const BBox& b) { return json(b).dump(); }

/// Pixel-exact copy of the region. Fractional edges are widened outward to whole pixels.
inline ToolResult crop(const RasterImage& img, const BBox& b) {
  const int x1 = static_cast<int>(std::floor(b.x1));
  const int y1 = static_cast<int>(std::floor(b.y1));
  const int x2 = static_cast<int>(std::ceil(b.x2));
  const int y2 = static_cast<int>(std::ceil(b.y2));
  if (x1 < 0 || y1 < 0 || x2 > img.width || y2 > img.height)
    throw Error(Errc::InvalidArgument, "crop box outside image: " + format_box(b));
  if (x2 <= x1 || y2 <= y1) throw Error(Errc::DegenerateBox, "empty region");

  RasterImage out(x2 - x1, y2 - y1, img.channels);
  const std::size_t row_bytes = static_cast<std::size_t>(out.width) * img.channels;
  for (int y = 0; y < out.height; ++y)
    std::copy_n(img.at(x1, y1 + y), row_bytes, out.at(0, y));

  const BBox px{double(x1), double(y1), double(x2), double(y2)};
  out.id = img.id + "#crop" + format_box(px);
  return {std::move(out), {std::string(kZoomToolName), json{{"bbox_2d", px}}, img.id}};
}

/// Clockwise rotation by a right angle.
inline ToolResult rotate(const RasterImage& img, int degrees) {
  if (degrees != 0 && degrees != 90 && degrees != 180 && degrees != 270)
    throw Error(Errc::UnsupportedAngle, std::to_string(degrees) + " degrees");
  const bool swap_dims = degrees == 90 || degrees == 270;
  RasterImage out(swap_dims ? img.height : img.width, swap_dims ? img.width : img.height, img.channels);
  const int w = img.width, h = img.height;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int nx = x, ny = y;
      switch (degrees) {
        case 90: nx = h - 1 - y; ny = x; break;
        case 180: nx = w - 1 - x; ny = h - 1 - y; break;
        case 270: nx = y; ny = w - 1 - x; break;
        default: break;
      }
      std::copy_n(img.at(x, y), img.channels, out.at(nx, ny));
    }
  }
  out.id = img.id + "#rot" + std::to_string(degrees);
  return {std::move(out), {std::string(kRotateToolName), json{{"degrees", degrees}}, img.id}};
}

/// Observation tool name used when the requested tool does not exist.
inline constexpr std::string_view kToolErrorName = "tool_error";

/// Outcome of executing one call: an image, or a textual note explaining why not.
struct DispatchOutcome {
  std::string tool_name;  // registered tool, or kToolErrorName
  std::optional<ToolResult> result;
  std::string note;
  std::optional<Errc> error;
};

/// Executes a call against the original image. Never throws for tool-level
/// failures; those come back as notes so the rollout can continue.
inline DispatchOutcome dispatch(const ToolCall& call, const RasterImage& original,
                                const ToolSet& tools = ToolSet::zoom_and_rotate(),
                                double min_side = kDefaultMinSide) {
  DispatchOutcome out;
  auto fail = [&](Errc code, std::string note) {
    out.error = code;
    out.note = std::move(note);
    return out;
  };
  if (!tools.contains(call.name)) {
    out.tool_name = std::string(kToolErrorName);
    return fail(Errc::UnknownTool, "unknown tool \"" + call.name + "\"");
  }
  out.tool_name = call.name;
  const auto problems = check_call(call, tools);
  if (!problems.empty()) return fail(Errc::InvalidArgument, "invalid arguments: " + problems.front().detail);

  try {
    if (call.name == kZoomToolName) {
      BBox b = call.arguments.at("bbox_2d").get<BBox>();
      BBox n = normalize_and_clamp(b, original.width, original.height, min_side);
      out.result = crop(original, n);
      out.result->provenance.parameters["requested"] = b;
      if (auto label = call.arguments.find("label"); label != call.arguments.end())
        out.result->provenance.parameters["label"] = *label;
    } else if (call.name == kRotateToolName) {
      out.result = rotate(original, static_cast<int>(call.arguments.at("degrees").get<double>()));
    } else {
      return fail(Errc::UnknownTool, "no executor for tool \"" + call.name + "\"");
    }
  } catch (const Error& e) {
    if (e.code() == Errc::DegenerateBox) return fail(e.code(), "empty region");
    if (e.code() == Errc::UnsupportedAngle) return fail(e.code(), "unsupported angle");
    return fail(e.code(), e.what());
  }
  return out;
}

}  // namespace zoomrl
