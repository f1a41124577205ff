#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "kv/core/image.hpp"
#include "kv/geometry.hpp"
#include "kv/phantom.hpp"

namespace kv {

// Forward-projected intensity image, inverted and min-max normalized to
// [0, 1] (bone bright). Dimensions match the detector.
struct Projection {
    ImageF pixels;
    CArmPose pose;
};

// Binary occupancy masks aligned pixel-for-pixel with the paired Projection.
// A channel may merge several voxel labels (the a.-p. view uses a single
// femur channel); channels overlap freely under projective superposition.
struct MaskChannelSpec {
    std::string name;
    std::vector<std::uint8_t> labels;
};

struct MaskStack {
    std::vector<ImageU8> channels;
    std::vector<std::string> names;
    CArmPose pose;

    int channel_index(const std::string& name) const;  // -1 when absent
};

// Channel layout per standard view: the lateral view keeps the two condyle
// halves separate, the a.-p. view merges them into one femur channel.
std::vector<MaskChannelSpec> view_channels(ViewKind view);

class EmptyProjectionError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct RenderOptions {
    double step_scale = 0.5;  // ray-march step, in units of the min voxel spacing
    int threads = 0;          // 0 = process default
};

// Raw transmission exp(-integral of mu ds), before inversion/normalization.
ImageF render_transmission(const PhantomVolume& vol, const CArmPose& pose,
                           const ProjectionGeometry& geom, const RenderOptions& opts = {});

Projection render_drr(const PhantomVolume& vol, const CArmPose& pose,
                      const ProjectionGeometry& geom, const RenderOptions& opts = {});

MaskStack render_masks(const PhantomVolume& vol, const CArmPose& pose,
                       const ProjectionGeometry& geom,
                       const std::vector<MaskChannelSpec>& channels,
                       const RenderOptions& opts = {});

// DRR and masks from one shared ray march (identical geometry by
// construction).
std::pair<Projection, MaskStack> render_sample(const PhantomVolume& vol, const CArmPose& pose,
                                               const ProjectionGeometry& geom,
                                               const std::vector<MaskChannelSpec>& channels,
                                               const RenderOptions& opts = {});

// Default mobile C-arm intrinsics with the phantom's standard plane for the
// requested view.
ProjectionGeometry default_geometry(const PhantomVolume& vol, ViewKind view);
ProjectionGeometry default_geometry(const Plane& reference);

void save_projection_png(const Projection& proj, const std::string& path);
void save_mask_pngs(const MaskStack& masks, const std::string& dir_prefix);

}  // namespace kv
