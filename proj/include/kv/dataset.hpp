#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kv/augment.hpp"
#include "kv/sample.hpp"

namespace kv {

// Inclusive symmetric grid {-range, ..., -step, 0, step, ..., range}^2 over
// (alpha, beta); always contains (0, 0).
std::vector<std::array<double, 2>> sample_pose_grid(double range_deg, double step_deg);

struct SampleRecord {
    std::string id;
    int phantom_id = -1;
    ViewKind view = ViewKind::ap;
    Laterality laterality = Laterality::left;
    CArmPose pose_offset;
    std::string dir;       // sample directory, relative to the manifest
    std::string checksum;  // fnv over image.raw then each mask channel
    std::string augment = "-";
};

struct PhantomEntry {
    int id = -1;
    std::string split;  // train | val | test
    std::uint64_t seed = 0;
    Laterality source_laterality = Laterality::left;  // before canonical alignment
    std::string dir;  // phantom directory, relative to the manifest
};

struct DatasetManifest {
    double sdd = 1000.0, sid = 700.0;
    int det_w = 256, det_h = 256;
    double pitch_x = 1.2, pitch_y = 1.2;
    double grid_range = 40.0, grid_step = 10.0;
    std::string augment_desc;  // training-stage augmentation parameters
    std::vector<PhantomEntry> phantoms;
    std::vector<SampleRecord> records;
    int skipped = 0;
    std::string base_dir;  // directory of the manifest file (set on load/save)

    const PhantomEntry* phantom(int id) const;
};

void save_manifest(const DatasetManifest& m, const std::string& path);

// Rejects manifests without the final "end <count>" marker, so a crashed
// generation run is never accepted downstream.
DatasetManifest load_manifest(const std::string& path);

// Loads the rendered sample; optionally verifies the recorded checksum.
Sample load_sample(const DatasetManifest& m, const SampleRecord& rec, bool verify_checksum = false);

PhantomVolume load_manifest_phantom(const DatasetManifest& m, int phantom_id);

ProjectionGeometry manifest_geometry(const DatasetManifest& m, const PhantomVolume& vol,
                                     ViewKind view);

// Renders one dataset sample: DRR plus the view's mask channels, offset
// composed onto the phantom's standard plane, target = inverse offset.
Sample render_dataset_sample(const PhantomVolume& vol, ViewKind view, const CArmPose& offset,
                             const ProjectionGeometry& geom, int threads = 0);

std::string sample_checksum(const Sample& s);

struct SimulateOptions {
    std::string out_dir;
    int num_phantoms = 8;
    double range_deg = 40.0;
    double step_deg = 10.0;
    double eval_range_deg = 30.0;
    double eval_step_deg = 10.0;
    bool orbital_sequence = false;       // fixed beta per phantom, dense alpha
    double orbital_alpha_step_deg = 2.0;
    double eval_gamma_max_deg = 15.0;    // per-sample in-plane offset in the eval split
    double eval_shift_max_mm = 20.0;     // per-sample detector shift in the eval split
    std::uint64_t seed = 1;
    int det_size = 256;
    double pitch_mm = 1.2;
    double sdd = 1000.0, sid = 700.0;
    double fov_margin_mm = 14.0;
    bool include_metal = false;
    bool write_png = false;
    AugmentConfig augment;  // recorded in the manifest for the training stage
    int threads = 0;
};

struct SimulateResult {
    DatasetManifest train;          // train + val phantoms, grid sampling
    std::optional<DatasetManifest> eval;  // held-out phantoms, capture-range sampling
    int rendered = 0;
    int skipped = 0;
};

// End-to-end simulation: phantom generation -> FOV crop -> laterality
// alignment -> grid rendering -> manifests. Fails atomically: on error the
// partially written output directory is removed.
SimulateResult run_simulate(const SimulateOptions& opts);

// train/val/test phantom counts mirroring a 60-20-20 split by count.
std::array<int, 3> split_counts(int num_phantoms);

// Throws std::runtime_error when a phantom id appears in two splits.
void check_split_hygiene(const DatasetManifest& train, const DatasetManifest* eval);

}  // namespace kv
