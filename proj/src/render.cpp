#include "upa/render.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace upa::render {

namespace {

struct Affine {
  double cos_t, sin_t, skew;
};

void check_frame_tensor(const Tensor& x, FrameSize frame) {
  if (x.rank() != 3 || x.dim(0) != frame.height || x.dim(1) != frame.width || x.dim(2) != 3)
    throw std::invalid_argument("image shape " + shape_string(x.shape()) + " does not match frame " +
                                std::to_string(frame.height) + "x" + std::to_string(frame.width) + "x3");
}

}  // namespace

PatchTexture::PatchTexture(Tensor texels) : texels_(std::move(texels)) {
  if (texels_.rank() != 3 || texels_.dim(2) != 3)
    throw std::invalid_argument("patch texels must be h x w x 3, got " + shape_string(texels_.shape()));
  for (double v : texels_.values())
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("patch texel outside [0,1]");
}

PatchTexture PatchTexture::filled(std::size_t height, std::size_t width, double value) {
  return PatchTexture(Tensor({height, width, 3}, value));
}

PatchTexture PatchTexture::uniform_random(std::size_t height, std::size_t width, Rng& rng) {
  Tensor t({height, width, 3});
  for (auto& v : t.values()) v = rng.uniform();
  return PatchTexture(std::move(t));
}

Extent footprint_extent(std::size_t patch_h, std::size_t patch_w, double rotation, double skew) {
  const double c = std::cos(rotation), s = std::sin(rotation);
  double ex = 0.0, ey = 0.0;
  for (double sx : {-1.0, 1.0})
    for (double sy : {-1.0, 1.0}) {
      // shear then rotate the centred corner
      const double qx = sx * patch_w / 2.0 + skew * sy * patch_h / 2.0;
      const double qy = sy * patch_h / 2.0;
      ex = std::max(ex, std::abs(c * qx - s * qy));
      ey = std::max(ey, std::abs(s * qx + c * qy));
    }
  auto to_int = [](double e) { return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(2.0 * e - 1e-9))); };
  return {to_int(ex), to_int(ey)};
}

Extent worst_case_extent(std::size_t patch_h, std::size_t patch_w, const TransformLimits& limits) {
  Extent worst = footprint_extent(patch_h, patch_w, 0.0, 0.0);
  constexpr int kSteps = 2048;
  const double skews[] = {-limits.max_skew, 0.0, limits.max_skew};
  for (int i = 0; i <= kSteps; ++i) {
    const double theta = -limits.max_rotation + 2.0 * limits.max_rotation * i / kSteps;
    for (double sk : skews) {
      const Extent e = footprint_extent(patch_h, patch_w, theta, sk);
      worst.width = std::max(worst.width, e.width);
      worst.height = std::max(worst.height, e.height);
    }
  }
  return worst;
}

TransformSample sample_transform(Rng& rng, FrameSize frame, std::size_t patch_h, std::size_t patch_w,
                                 const TransformLimits& limits) {
  if (limits.max_rotation < 0.0 || limits.max_skew < 0.0)
    throw std::invalid_argument("transform limits must be non-negative");
  const Extent worst = worst_case_extent(patch_h, patch_w, limits);
  if (worst.width > frame.width || worst.height > frame.height)
    throw std::invalid_argument("patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w) +
                                " cannot be placed inside a " + std::to_string(frame.height) + "x" +
                                std::to_string(frame.width) + " frame under the rotation/skew limits");
  TransformSample t;
  t.rotation = limits.max_rotation > 0.0 ? rng.uniform(-limits.max_rotation, limits.max_rotation) : 0.0;
  t.skew = limits.max_skew > 0.0 ? rng.uniform(-limits.max_skew, limits.max_skew) : 0.0;
  const Extent e = footprint_extent(patch_h, patch_w, t.rotation, t.skew);
  t.dx = static_cast<long>(rng.index(frame.width - e.width + 1));
  t.dy = static_cast<long>(rng.index(frame.height - e.height + 1));
  return t;
}

void check_feasible(const TransformSample& t, FrameSize frame, std::size_t patch_h, std::size_t patch_w) {
  const Extent e = footprint_extent(patch_h, patch_w, t.rotation, t.skew);
  if (t.dx < 0 || t.dy < 0 || static_cast<std::size_t>(t.dx) + e.width > frame.width ||
      static_cast<std::size_t>(t.dy) + e.height > frame.height)
    throw std::invalid_argument("transform places the patch footprint outside the frame");
}

Raster rasterize_geometry(std::size_t patch_h, std::size_t patch_w, const TransformSample& t, FrameSize frame) {
  check_feasible(t, frame, patch_h, patch_w);
  const Extent e = footprint_extent(patch_h, patch_w, t.rotation, t.skew);
  const double cx = static_cast<double>(t.dx) + e.width / 2.0;
  const double cy = static_cast<double>(t.dy) + e.height / 2.0;
  const double c = std::cos(t.rotation), s = std::sin(t.rotation);

  Raster r{Tensor({frame.height, frame.width, 3}), Tensor({frame.height, frame.width}),
           std::vector<long>(frame.height * frame.width * 3, -1)};
  for (std::size_t y = static_cast<std::size_t>(t.dy); y < t.dy + e.height; ++y)
    for (std::size_t x = static_cast<std::size_t>(t.dx); x < t.dx + e.width; ++x) {
      const double px = x + 0.5 - cx, py = y + 0.5 - cy;
      // inverse rotation, then inverse shear
      const double ux = c * px + s * py;
      const double uy = -s * px + c * py;
      const double qx = ux - t.skew * uy + patch_w / 2.0;
      const double qy = uy + patch_h / 2.0;
      const double col = std::floor(qx), row = std::floor(qy);
      if (col < 0.0 || row < 0.0 || col >= static_cast<double>(patch_w) || row >= static_cast<double>(patch_h))
        continue;
      const std::size_t texel = static_cast<std::size_t>(row) * patch_w + static_cast<std::size_t>(col);
      r.mask.at(y, x) = 1.0;
      for (std::size_t ch = 0; ch < 3; ++ch)
        r.source[(y * frame.width + x) * 3 + ch] = static_cast<long>(texel * 3 + ch);
    }
  return r;
}

Raster rasterize(const PatchTexture& patch, const TransformSample& t, FrameSize frame) {
  Raster r = rasterize_geometry(patch.height(), patch.width(), t, frame);
  const Tensor& tex = patch.texels();
  for (std::size_t i = 0; i < r.source.size(); ++i)
    if (r.source[i] >= 0) r.rendered[i] = tex[static_cast<std::size_t>(r.source[i])];
  return r;
}

Tensor paste(const Tensor& x, const Raster& raster) {
  const FrameSize frame{raster.mask.dim(0), raster.mask.dim(1)};
  check_frame_tensor(x, frame);
  Tensor out = x;
  for (std::size_t p = 0; p < frame.height * frame.width; ++p) {
    const double m = raster.mask[p];
    for (std::size_t ch = 0; ch < 3; ++ch)
      out[p * 3 + ch] = (1.0 - m) * x[p * 3 + ch] + m * raster.rendered[p * 3 + ch];
  }
  return out;
}

Tensor paste(const Tensor& x, const PatchTexture& patch, const TransformSample& t) {
  if (x.rank() != 3) throw std::invalid_argument("paste: image must be H x W x 3");
  return paste(x, rasterize(patch, t, FrameSize{x.dim(0), x.dim(1)}));
}

ad::Var paste(ad::Graph& g, ad::Var x, ad::Var texels, const Raster& raster) {
  const Tensor& xv = g.value(x);
  const FrameSize frame{raster.mask.dim(0), raster.mask.dim(1)};
  check_frame_tensor(xv, frame);
  Tensor keep(xv.shape());
  for (std::size_t p = 0; p < frame.height * frame.width; ++p)
    for (std::size_t ch = 0; ch < 3; ++ch) keep[p * 3 + ch] = 1.0 - raster.mask[p];
  ad::Var background = g.mask_mul(x, keep);
  ad::Var rendered = g.gather(texels, raster.source, xv.shape());
  return g.add(background, rendered);
}

Tensor token_mask(const Tensor& pixel_mask, std::size_t grid) {
  if (pixel_mask.rank() != 2) throw std::invalid_argument("token_mask: pixel mask must be H x W");
  const std::size_t h = pixel_mask.dim(0), w = pixel_mask.dim(1);
  if (grid == 0 || h % grid != 0 || w % grid != 0)
    throw std::invalid_argument("token_mask: frame " + std::to_string(h) + "x" + std::to_string(w) +
                                " is not divisible by grid " + std::to_string(grid));
  const std::size_t ch = h / grid, cw = w / grid;
  Tensor out({grid * grid});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) out[(y / ch) * grid + x / cw] += pixel_mask.at(y, x);
  for (auto& v : out.values()) v /= static_cast<double>(ch * cw);
  return out;
}

std::size_t area(const PatchTexture& patch) { return patch.height() * patch.width(); }

void check_area_budget(std::size_t a, double budget) {
  if (!(static_cast<double>(a) < budget))
    throw std::invalid_argument("patch area " + std::to_string(a) + " violates area budget " +
                                std::to_string(static_cast<long long>(std::ceil(budget))) + " (must be strictly below)");
}

}  // namespace upa::render
