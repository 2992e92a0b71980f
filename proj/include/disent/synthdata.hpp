#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "disent/rng.hpp"
#include "disent/tensor.hpp"

namespace disent {

// Factors of variation: glyph class (DC), texture class (BC), location (DL).
constexpr std::size_t kGlyphClasses = 10;
constexpr std::size_t kTextureClasses = 10;
constexpr std::size_t kLocations = 8;
constexpr std::size_t kGlyphSize = 28;
constexpr std::size_t kImageSize = 64;
constexpr std::size_t kImageChannels = 3;

struct FactorTuple {
  std::size_t glyph_class = 0;
  std::size_t texture_class = 0;
  std::size_t location = 0;

  void validate() const;
  bool operator==(const FactorTuple&) const = default;
};

// 10 * glyph + texture; location deliberately excluded
std::size_t joint_label(const FactorTuple& f);

enum class Factor { glyph, texture, location };
std::size_t factor_cardinality(Factor f);
std::size_t factor_value(const FactorTuple& f, Factor which);
std::string to_string(Factor f);  // task short names: DC, BC, DL

enum class VariantKind { dc_bc, dc_dl, bc_dl };
VariantKind variant_kind_from_string(const std::string& s);
std::string to_string(VariantKind k);

// the factor resampled per view; the other two are shared across views
Factor varied_factor(VariantKind k);
// the two shared factors, in canonical order (glyph < texture < location);
// these are also the probe tasks for the variant
std::pair<Factor, Factor> variant_tasks(VariantKind k);

struct DatasetVariant {
  VariantKind kind = VariantKind::dc_bc;
  std::size_t train_size = 20000;
  std::size_t test_size = 2000;
};

// Channel-major (planes) byte image; 255 encodes intensity 1.0. Images are
// quantized at generation so serialization round-trips bit for bit.
struct Image {
  std::size_t height = 0, width = 0, channels = 0;
  std::vector<std::uint8_t> pix;

  static Image blank(std::size_t h, std::size_t w, std::size_t c) {
    return Image{h, w, c, std::vector<std::uint8_t>(h * w * c, 0)};
  }
  std::uint8_t& byte(std::size_t c, std::size_t y, std::size_t x) {
    return pix[(c * height + y) * width + x];
  }
  std::uint8_t byte(std::size_t c, std::size_t y, std::size_t x) const {
    return pix[(c * height + y) * width + x];
  }
  double value(std::size_t c, std::size_t y, std::size_t x) const {
    return byte(c, y, x) / 255.0;
  }
  double mean() const;
  bool operator==(const Image&) const = default;
};

struct GridPoint {
  std::size_t x = 0, y = 0;
  bool operator==(const GridPoint&) const = default;
};

// 2 rows x 4 columns of glyph centers, row-major. List position p is cell
// p+1 in the 1-based figure numbering; factor values index positions 0..7.
std::vector<GridPoint> location_grid(std::size_t image_size,
                                     std::size_t glyph_size);

// procedural instances; deterministic in (class, rng)
Image render_glyph(std::size_t glyph_class, Rng rng);      // 28x28, 1 channel
Image render_texture(std::size_t texture_class, Rng rng);  // 64x64, 3 channels

// per-pixel max of the glyph (broadcast over channels) onto the texture
// inside the location's bounding box; texture untouched elsewhere
Image composite(const Image& glyph, const Image& texture, std::size_t location);

// mean over factor x factor blocks; used for coarse texture probes
Image block_downsample(const Image& img, std::size_t factor);

struct ViewPair {
  Image view0, view1;
  FactorTuple factors0, factors1;
  std::size_t joint = 0;  // joint_label(factors0)
};

// Externally supplied instance pool keyed by class; substitutes for the
// procedural renderers so real image data can be dropped in.
struct ImageBank {
  std::size_t height = 0, width = 0, channels = 0;
  std::vector<std::uint8_t> labels;
  std::vector<Image> images;

  void validate() const;
};

void save_image_bank(const ImageBank& bank, const std::string& path);
ImageBank load_image_bank(const std::string& path);

struct RenderSources {
  const ImageBank* glyphs = nullptr;    // null -> procedural seven-segment
  const ImageBank* textures = nullptr;  // null -> procedural gratings
};

ViewPair sample_view_pair(const DatasetVariant& variant, Rng rng,
                          const RenderSources& src = {});

struct Dataset {
  DatasetVariant variant;
  std::uint64_t seed = 0;
  std::vector<ViewPair> train, test;
};

Dataset generate_dataset(const DatasetVariant& variant, std::uint64_t seed,
                         const RenderSources& src = {});
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);
void build_dataset(const DatasetVariant& variant, std::uint64_t seed,
                   const std::string& path, const RenderSources& src = {});

// flattened [n, channels*height*width] rows scaled to [0,1]
Tensor image_rows(const std::vector<Image>& images);
Tensor image_rows(const std::vector<ViewPair>& pairs, std::size_t view);
Tensor image_rows(const std::vector<ViewPair>& pairs, std::size_t view,
                  const std::vector<std::size_t>& idx);

// labels drawn from factors0 (equal across views for shared factors)
std::vector<std::size_t> factor_labels(const std::vector<ViewPair>& pairs,
                                       Factor which);
std::vector<std::size_t> factor_labels(const std::vector<ViewPair>& pairs,
                                       Factor which,
                                       const std::vector<std::size_t>& idx);
std::vector<std::size_t> joint_labels(const std::vector<ViewPair>& pairs);

}  // namespace disent
