#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "kv/dataset.hpp"
#include "kv/projector.hpp"

using namespace kv;
namespace fs = std::filesystem;

namespace {

SimulateOptions tiny_options(const std::string& dir, int phantoms = 1) {
    SimulateOptions o;
    o.out_dir = dir;
    o.num_phantoms = phantoms;
    o.range_deg = 40;
    o.step_deg = 40;
    o.eval_range_deg = 30;
    o.eval_step_deg = 30;
    o.det_size = 64;
    o.pitch_mm = 3.0;
    o.seed = 5;
    return o;
}

}  // namespace

TEST_CASE("pose grid shapes") {
    CHECK(sample_pose_grid(40, 40).size() == 9);
    CHECK(sample_pose_grid(40, 4).size() == 441);   // x2 views x4 phantoms = 3528
    CHECK(sample_pose_grid(30, 30).size() == 9);
    CHECK(sample_pose_grid(30, 10).size() == 49);
    bool has_origin = false;
    for (const auto& ab : sample_pose_grid(40, 10))
        if (ab[0] == 0 && ab[1] == 0) has_origin = true;
    CHECK(has_origin);
    CHECK_THROWS_AS(sample_pose_grid(10, 0), std::invalid_argument);
    CHECK_THROWS_AS(sample_pose_grid(10, 20), std::invalid_argument);
}

TEST_CASE("split_counts mirrors 60-20-20 by phantom count") {
    CHECK(split_counts(8) == std::array<int, 3>{5, 2, 1});
    CHECK(split_counts(1) == std::array<int, 3>{1, 0, 0});
    CHECK(split_counts(5) == std::array<int, 3>{3, 1, 1});
    CHECK(split_counts(24) == std::array<int, 3>{14, 5, 5});
    for (int n = 1; n <= 24; ++n) {
        const auto c = split_counts(n);
        CHECK(c[0] + c[1] + c[2] == n);
        CHECK(c[0] >= 1);
    }
}

TEST_CASE("single-phantom 3x3 grid simulation produces 18 train samples") {
    const auto dir = fs::temp_directory_path() / "kv_sim_tiny";
    fs::remove_all(dir);
    const SimulateResult res = run_simulate(tiny_options(dir.string()));
    CHECK(res.train.records.size() == 18);
    CHECK_FALSE(res.eval.has_value());
    CHECK(res.train.skipped == 0);

    // offset (0, 0) sample has the identity target
    bool found_center = false;
    for (const auto& r : res.train.records)
        if (r.pose_offset.alpha == 0 && r.pose_offset.beta == 0) {
            found_center = true;
            const CArmPose target = pose_inverse(r.pose_offset);
            CHECK(target.is_identity(1e-12));
        }
    CHECK(found_center);
    fs::remove_all(dir);
}

TEST_CASE("manifest round-trip, checksums, and atomicity marker") {
    const auto dir = fs::temp_directory_path() / "kv_sim_manifest";
    fs::remove_all(dir);
    const SimulateResult res = run_simulate(tiny_options(dir.string()));
    const DatasetManifest m = load_manifest((dir / "manifest.txt").string());
    CHECK(m.records.size() == res.train.records.size());
    CHECK(m.det_w == 64);
    CHECK(m.phantoms.size() == 1);

    // every sample loads and verifies its checksum
    for (const auto& r : m.records) {
        const Sample s = load_sample(m, r, /*verify_checksum=*/true);
        CHECK(s.image.w == 64);
        CHECK(s.masks.channels.size() == view_channels(r.view).size());
        // stored target composed onto the offset is the identity
        const CArmPose residual = compose_correction(s.pose_offset, s.target_update);
        const auto g = manifest_geometry(m, load_manifest_phantom(m, r.phantom_id), r.view);
        const double theta =
            ray_angle(principal_ray(residual, g), PrincipalRay{g.reference_plane.n});
        CHECK(theta < 1e-6);
    }

    // a manifest without the end marker is rejected
    {
        std::ifstream in(dir / "manifest.txt");
        std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        const auto pos = all.rfind("end ");
        std::ofstream out(dir / "broken.txt", std::ios::trunc);
        out << all.substr(0, pos);
    }
    CHECK_THROWS_AS(load_manifest((dir / "broken.txt").string()), std::runtime_error);
    fs::remove_all(dir);
}

TEST_CASE("re-rendering from recorded poses reproduces stored images bit-exactly") {
    const auto dir = fs::temp_directory_path() / "kv_sim_rerender";
    fs::remove_all(dir);
    run_simulate(tiny_options(dir.string()));
    const DatasetManifest m = load_manifest((dir / "manifest.txt").string());
    const PhantomVolume vol = load_manifest_phantom(m, m.phantoms[0].id);
    int checked = 0;
    for (const auto& r : m.records) {
        if (++checked > 5) break;
        const Sample stored = load_sample(m, r, true);
        const auto g = manifest_geometry(m, vol, r.view);
        const Sample fresh = render_dataset_sample(vol, r.view, r.pose_offset, g, 2);
        CHECK(fresh.image.px == stored.image.px);
        for (std::size_t c = 0; c < fresh.masks.channels.size(); ++c)
            CHECK(fresh.masks.channels[c].px == stored.masks.channels[c].px);
        CHECK(sample_checksum(fresh) == r.checksum);
    }
    fs::remove_all(dir);
}

TEST_CASE("regenerating with the same seed gives identical manifests") {
    const auto d1 = fs::temp_directory_path() / "kv_sim_rep1";
    const auto d2 = fs::temp_directory_path() / "kv_sim_rep2";
    fs::remove_all(d1);
    fs::remove_all(d2);
    run_simulate(tiny_options(d1.string()));
    run_simulate(tiny_options(d2.string()));
    std::ifstream f1(d1 / "manifest.txt"), f2(d2 / "manifest.txt");
    const std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("multi-phantom run: splits are disjoint and the eval split exists") {
    const auto dir = fs::temp_directory_path() / "kv_sim_multi";
    fs::remove_all(dir);
    SimulateOptions o = tiny_options(dir.string(), 5);
    o.step_deg = 40;  // keep it fast: 9 poses x 2 views per phantom
    const SimulateResult res = run_simulate(o);
    REQUIRE(res.eval.has_value());
    CHECK_NOTHROW(check_split_hygiene(res.train, &*res.eval));

    // counts: 4 phantoms (3 train + 1 val) x 18; eval: 1 phantom x 2 views x 9
    CHECK(res.train.records.size() == 4 * 18);
    CHECK(res.eval->records.size() == 18);

    std::set<int> train_ids;
    for (const auto& r : res.train.records) train_ids.insert(r.phantom_id);
    for (const auto& r : res.eval->records) CHECK(train_ids.count(r.phantom_id) == 0);

    // eval samples carry per-sample gamma/t/laterality variation
    bool any_gamma = false, any_right = false;
    for (const auto& r : res.eval->records) {
        any_gamma = any_gamma || std::fabs(r.pose_offset.gamma) > 1.0;
        any_right = any_right || r.laterality == Laterality::right;
    }
    CHECK(any_gamma);
    CHECK(any_right);

    // eval manifest loads from its own directory and samples verify
    const DatasetManifest ev = load_manifest((dir / "eval" / "manifest.txt").string());
    REQUIRE(!ev.records.empty());
    const Sample s = load_sample(ev, ev.records[0], true);
    CHECK(s.image.w == 64);
    CHECK_NOTHROW(load_manifest_phantom(ev, ev.records[0].phantom_id));
    fs::remove_all(dir);
}

TEST_CASE("orbital-sequence mode covers alpha densely with fixed beta") {
    const auto dir = fs::temp_directory_path() / "kv_sim_orbital";
    fs::remove_all(dir);
    SimulateOptions o = tiny_options(dir.string(), 5);
    o.orbital_sequence = true;
    o.orbital_alpha_step_deg = 2.0;
    o.eval_range_deg = 30.0;
    const SimulateResult res = run_simulate(o);
    REQUIRE(res.eval.has_value());
    // 31 alphas per view per phantom
    CHECK(res.eval->records.size() == 2 * 31);
    std::set<double> betas;
    for (const auto& r : res.eval->records) betas.insert(r.pose_offset.beta);
    CHECK(betas.size() == 1);  // constant within the phantom's sequence
    fs::remove_all(dir);
}

TEST_CASE("existing dataset directory is refused") {
    const auto dir = fs::temp_directory_path() / "kv_sim_refuse";
    fs::remove_all(dir);
    run_simulate(tiny_options(dir.string()));
    CHECK_THROWS_AS(run_simulate(tiny_options(dir.string())), std::runtime_error);
    fs::remove_all(dir);
}
