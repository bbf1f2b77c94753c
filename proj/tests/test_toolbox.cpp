// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "support.hpp"

using namespace zoomrl;
using namespace zoomrl::testing;

namespace {

RasterImage gradient(int w, int h) {
  RasterImage img(w, h, 3, "src");
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto* p = img.at(x, y);
      p[0] = static_cast<std::uint8_t>(x);
      p[1] = static_cast<std::uint8_t>(y);
      p[2] = static_cast<std::uint8_t>(x + y);
    }
  return img;
}

}  // namespace

TEST(Toolbox, IouHandCase) { EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {5, 0, 15, 10}), 1.0 / 3.0); }

TEST(Toolbox, IouMatchesRaster) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 300; ++i) {
    const int g = 2 + static_cast<int>(rng() % 120);
    const BBox a = random_int_box(rng, g), b = random_int_box(rng, g);
    EXPECT_NEAR(iou(a, b), raster_iou(a, b, g), 1e-12);
    EXPECT_DOUBLE_EQ(iou(a, b), iou(b, a));
  }
  EXPECT_EQ(iou({0, 0, 5, 5}, {5, 5, 9, 9}), 0.0);
  EXPECT_EQ(iou({3, 3, 9, 9}, {3, 3, 9, 9}), 1.0);
}

TEST(Toolbox, ClampExamples) {
  EXPECT_EQ(normalize_and_clamp({-10, -10, 50, 50}, 100, 100), (BBox{0, 0, 50, 50}));
  EXPECT_EQ(normalize_and_clamp({50, 60, 10, 20}, 100, 100), (BBox{10, 20, 50, 60}));
  const BBox small = normalize_and_clamp({40, 40, 42, 41}, 100, 100);
  EXPECT_DOUBLE_EQ(small.width(), 10);
  EXPECT_DOUBLE_EQ(small.height(), 10);
  EXPECT_DOUBLE_EQ((small.x1 + small.x2) / 2, 41);
  const BBox edge = normalize_and_clamp({0, 0, 2, 2}, 100, 100);
  EXPECT_EQ(edge, (BBox{0, 0, 10, 10}));
  try {
    normalize_and_clamp({200, 200, 300, 300}, 100, 100);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DegenerateBox);
  }
  EXPECT_THROW(normalize_and_clamp({5, 5, 5, 50}, 100, 100), Error);
  EXPECT_THROW(normalize_and_clamp({0, 0, NAN, 5}, 100, 100), Error);
}

TEST(Toolbox, ClampedBoxesStayInFrame) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-100, 300);
  for (int i = 0; i < 2000; ++i) {
    const int w = 1 + static_cast<int>(rng() % 200), h = 1 + static_cast<int>(rng() % 200);
    BBox b{u(rng), u(rng), u(rng), u(rng)};
    try {
      const BBox n = normalize_and_clamp(b, w, h);
      EXPECT_GE(n.x1, 0);
      EXPECT_GE(n.y1, 0);
      EXPECT_LE(n.x2, w);
      EXPECT_LE(n.y2, h);
      EXPECT_GE(n.width(), std::min(10.0, double(w)) - 1e-9);
      EXPECT_GE(n.height(), std::min(10.0, double(h)) - 1e-9);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::DegenerateBox);
    }
  }
}

TEST(Toolbox, CropPixelsMatchSource) {
  const RasterImage img = gradient(64, 48);
  const ToolResult r = crop(img, {10.5, 4, 30, 20.2});
  EXPECT_EQ(r.image.width, 20);
  EXPECT_EQ(r.image.height, 17);
  for (int y = 0; y < r.image.height; ++y)
    for (int x = 0; x < r.image.width; ++x)
      ASSERT_EQ(std::memcmp(r.image.at(x, y), img.at(x + 10, y + 4), 3), 0);
  EXPECT_EQ(r.image.id, "src#crop[10.0,4.0,30.0,21.0]");
  EXPECT_EQ(r.provenance.parent_id, "src");
}

TEST(Toolbox, FullCropIsIdentity) {
  const RasterImage img = gradient(33, 17);
  EXPECT_TRUE(crop(img, {0, 0, 33, 17}).image.same_pixels(img));
}

TEST(Toolbox, RotateClockwise) {
  const RasterImage img = gradient(5, 3);
  const RasterImage r90 = rotate(img, 90).image;
  ASSERT_EQ(r90.width, 3);
  ASSERT_EQ(r90.height, 5);
  // Clockwise: source (x, y) lands at (h - 1 - y, x).
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 5; ++x) EXPECT_EQ(std::memcmp(r90.at(2 - y, x), img.at(x, y), 3), 0);
  RasterImage four = img;
  for (int i = 0; i < 4; ++i) four = rotate(four, 90).image;
  EXPECT_TRUE(four.same_pixels(img));
  EXPECT_TRUE(rotate(rotate(img, 180).image, 180).image.same_pixels(img));
  EXPECT_TRUE(rotate(img, 0).image.same_pixels(img));
  try {
    rotate(img, 45);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnsupportedAngle);
  }
}

TEST(Toolbox, DispatchNotes) {
  const RasterImage img = gradient(50, 50);
  const auto unknown = dispatch({"magic", {}, {}}, img);
  EXPECT_EQ(unknown.tool_name, kToolErrorName);
  EXPECT_EQ(unknown.error, Errc::UnknownTool);
  const auto empty = dispatch({std::string(kZoomToolName), {{"bbox_2d", {80, 80, 90, 90}}}, {}}, img);
  EXPECT_FALSE(empty.result);
  EXPECT_EQ(empty.note, "empty region");
  const auto ok = dispatch({std::string(kZoomToolName), {{"bbox_2d", {0, 0, 20, 20}}, {"label", "x"}}, {}}, img);
  ASSERT_TRUE(ok.result);
  EXPECT_EQ(ok.result->image.width, 20);
  const auto not_offered = dispatch({std::string(kRotateToolName), {{"degrees", 90}}, {}}, img, ToolSet::zoom_only());
  EXPECT_EQ(not_offered.tool_name, kToolErrorName);
}

TEST(Toolbox, PngRoundTrip) {
  const RasterImage img = gradient(23, 19);
  const auto bytes = encode_png(img);
  EXPECT_TRUE(looks_like_png(bytes));
  EXPECT_TRUE(decode_png(bytes).same_pixels(img));
  EXPECT_THROW(decode_png({1, 2, 3}), Error);
}
