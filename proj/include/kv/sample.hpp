#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kv/core/image.hpp"
#include "kv/geometry.hpp"
#include "kv/phantom.hpp"
#include "kv/projector.hpp"

namespace kv {

struct DropRect {
    int x = 0, y = 0, w = 0, h = 0;
};

struct EdgeLine {
    double px = 0, py = 0;  // a point on the line, pixel coords
    double nx = 1, ny = 0;  // normal; the side with (q-p).n > 0 is darkened
};

// Replayable record of the augmentations applied to one sample. Applying the
// same record to the same input reproduces the output bitwise.
struct AugmentRecord {
    std::uint64_t seed = 0;
    bool rotate = false;
    double rot_deg = 0;
    bool translate = false;
    int shift_x = 0, shift_y = 0;
    bool flip = false;
    std::vector<DropRect> dropouts;
    bool edge = false;
    EdgeLine edge_line;
    double edge_opacity = 0;
    bool border = false;
    int border_width = 0;
    float border_value = 0;

    bool any() const {
        return rotate || translate || flip || !dropouts.empty() || edge || border;
    }
    std::string serialize() const;
    static AugmentRecord parse(const std::string& text);
};

// One training / evaluation instance.
struct Sample {
    ImageF image;  // normalized [0, 1], bone bright
    MaskStack masks;
    ViewKind view = ViewKind::ap;
    Laterality laterality = Laterality::left;
    CArmPose pose_offset;    // sampled offset from the reference standard
    CArmPose target_update;  // correction the regressor must output
    int phantom_id = -1;
    std::string id;
    AugmentRecord augment;
};

}  // namespace kv
