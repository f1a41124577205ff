#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "kv/core/image.hpp"
#include "kv/geometry.hpp"

namespace kv {

enum class Laterality : std::uint8_t { left = 0, right = 1 };
enum class ViewKind : std::uint8_t { ap = 0, lateral = 1 };

std::string to_string(Laterality l);
std::string to_string(ViewKind v);
Laterality laterality_from_string(const std::string& s);
ViewKind view_from_string(const std::string& s);

// Voxel label ids.
enum : std::uint8_t {
    kLabelBackground = 0,
    kLabelCondyleLeft = 1,
    kLabelCondyleRight = 2,
    kLabelTibia = 3,
    kLabelFibula = 4,
    kLabelPatella = 5,
};
constexpr int kNumBoneLabels = 5;
const char* label_name(std::uint8_t label);

struct AttenuationPresets {
    double soft = 0.02;   // mm^-1
    double bone = 0.05;
    double metal = 0.3;
};

struct ParamRange {
    double lo = 0, hi = 0;
};

// Procedural knee phantom specification. The seed fully determines the
// generated volume; all dimension parameters are drawn uniformly from their
// ranges in a fixed order.
struct PhantomSpec {
    std::uint64_t seed = 0;
    Laterality laterality = Laterality::left;
    double flexion_deg = 0.0;  // rigid tibia/fibula rotation about the condyle centre
    bool include_metal = false;
    int grid = 128;
    double spacing_mm = 1.5;
    double plane_skew_deg = 10.0;  // the two standard planes are non-orthogonal by this much
    AttenuationPresets atten;

    ParamRange shaft_radius{12.0, 14.0};
    ParamRange condyle_radius{17.0, 19.5};
    ParamRange condyle_half_sep{10.0, 12.0};
    ParamRange tibia_radius{14.0, 16.5};
    ParamRange plateau_radius{17.5, 19.5};
    ParamRange fibula_radius{4.5, 5.5};
    ParamRange fibula_head_radius{6.0, 7.0};
    ParamRange patella_rx{9.0, 11.5};
    ParamRange patella_ry{5.5, 6.5};
    ParamRange patella_rz{11.0, 14.0};
    ParamRange joint_gap{4.0, 6.5};
    ParamRange soft_radius{38.0, 44.0};
};

// Multilabel voxel phantom with its two standard reference planes. World
// coordinates: voxel (i, j, k) is centred at ((i+0.5)sx, (j+0.5)sy,
// (k+0.5)sz); +x is the medial-lateral axis, +y anterior, +z superior.
struct PhantomVolume {
    GridF atten;   // linear attenuation, mm^-1
    GridU8 labels;
    Vec3 spacing{1.5, 1.5, 1.5};
    Laterality laterality = Laterality::left;
    Plane plane_ap;
    Plane plane_lateral;
    std::uint64_t seed = 0;

    Vec3 extent() const {
        return {atten.nx * spacing.x, atten.ny * spacing.y, atten.nz * spacing.z};
    }
    const Plane& plane(ViewKind v) const { return v == ViewKind::ap ? plane_ap : plane_lateral; }
};

// Thrown when the sampled structures intersect; lists the colliding pair.
class PhantomGenerationError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Analytic solid set realized by a spec; exposed so tests can re-rasterize
// the same anatomy at a different resolution.
class PhantomSolids {
  public:
    explicit PhantomSolids(const PhantomSpec& spec);
    // Returns the bone label at a world point of the canonical (left) build,
    // 0 for background. `structure` (optional) receives an id for collision
    // reporting. Metal is attenuation-only and never labelled.
    std::uint8_t label_at(const Vec3& p) const;
    double atten_at(const Vec3& p) const;
    bool metal_at(const Vec3& p) const;
    Vec3 joint_center() const;
    Vec3 shaft_axis_point() const;
    Vec3 shaft_axis_dir() const;
    std::vector<std::string> colliding_structures(const Vec3& p) const;

  private:
    struct Impl;
    std::shared_ptr<const Impl> impl_;
};

PhantomVolume generate_phantom(const PhantomSpec& spec);

// Relabels femur voxels (labels 1/2) by the side of the plane that contains
// `axis_point`/`axis_dir` and is orthogonal to the medial-lateral direction
// projected off the axis. Throws std::invalid_argument on a degenerate axis.
GridU8 split_femur_condyles(const GridU8& labels, const Vec3& spacing, const Vec3& axis_point,
                            const Vec3& axis_dir);

// Crops to the labelled bounding box plus margin (mm); reference planes are
// re-expressed in the cropped frame and no labelled voxel is lost.
PhantomVolume crop_field_of_view(const PhantomVolume& vol, double margin_mm);

// Mirrors across the sagittal plane when the laterality differs from
// `target`: grids flipped along x, condyle labels swapped, planes mirrored.
PhantomVolume align_laterality(const PhantomVolume& vol, Laterality target);

// Raw little-endian float/byte grids plus a plain-text manifest.
void save_phantom(const PhantomVolume& vol, const std::string& dir);
PhantomVolume load_phantom(const std::string& dir);

}  // namespace kv
