#pragma once

// Patch pasting: x_tilde = (1 - M) * x + M * R(delta; T).
//
// Rendering uses nearest-neighbour inverse mapping, so the placement mask is
// binary and every covered pixel copies exactly one source texel. The
// pixel -> texel correspondence is kept so gradients route back to delta.

#include <cstddef>
#include <vector>

#include "upa/autodiff.hpp"
#include "upa/rng.hpp"
#include "upa/tensor.hpp"

namespace upa::render {

struct FrameSize {
  std::size_t height = 32;
  std::size_t width = 32;
};

// Universal patch texture, h x w x 3 with values in [0, 1].
class PatchTexture {
 public:
  explicit PatchTexture(Tensor texels);
  static PatchTexture filled(std::size_t height, std::size_t width, double value);
  static PatchTexture uniform_random(std::size_t height, std::size_t width, Rng& rng);

  std::size_t height() const { return texels_.dim(0); }
  std::size_t width() const { return texels_.dim(1); }
  const Tensor& texels() const { return texels_; }

 private:
  Tensor texels_;
};

struct TransformLimits {
  double max_rotation = 0.0;  // radians
  double max_skew = 0.0;      // shear factor; 0 disables skew
};

struct TransformSample {
  long dx = 0;  // top-left of the footprint bounding box, pixels
  long dy = 0;
  double rotation = 0.0;
  double skew = 0.0;

  friend bool operator==(const TransformSample&, const TransformSample&) = default;
};

struct Extent {
  std::size_t width = 0;
  std::size_t height = 0;
};

// Integer bounding box of the patch after rotation and shear.
Extent footprint_extent(std::size_t patch_h, std::size_t patch_w, double rotation, double skew);

// Largest bounding box over the whole limit range.
Extent worst_case_extent(std::size_t patch_h, std::size_t patch_w, const TransformLimits& limits);

TransformSample sample_transform(Rng& rng, FrameSize frame, std::size_t patch_h, std::size_t patch_w,
                                 const TransformLimits& limits);

void check_feasible(const TransformSample& t, FrameSize frame, std::size_t patch_h, std::size_t patch_w);

struct Raster {
  Tensor rendered;            // H x W x 3, zero off the footprint
  Tensor mask;                // H x W, binary
  std::vector<long> source;   // per (pixel, channel): flat texel index, or -1 off the footprint
};

// Correspondence only; texel values are filled in by rasterize().
Raster rasterize_geometry(std::size_t patch_h, std::size_t patch_w, const TransformSample& t, FrameSize frame);
Raster rasterize(const PatchTexture& patch, const TransformSample& t, FrameSize frame);

// Composites a raster over x. Accepts hand-built rasters, which is how tests
// inject masks that no transform can produce.
Tensor paste(const Tensor& x, const Raster& raster);
Tensor paste(const Tensor& x, const PatchTexture& patch, const TransformSample& t);

// Differentiable paste w.r.t. both x and the texel tensor.
ad::Var paste(ad::Graph& g, ad::Var x, ad::Var texels, const Raster& raster);

// Per-token mean of the pixel mask over a grid x grid partition, row-major.
Tensor token_mask(const Tensor& pixel_mask, std::size_t grid);

std::size_t area(const PatchTexture& patch);

// Throws unless area < budget.
void check_area_budget(std::size_t area, double budget);

}  // namespace upa::render
