#include "kv/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "kv/core/png_io.hpp"
#include "kv/core/utils.hpp"
#include "kv/projector.hpp"

namespace fs = std::filesystem;

namespace kv {

std::vector<std::array<double, 2>> sample_pose_grid(double range_deg, double step_deg) {
    if (!(step_deg > 0.0) || step_deg > range_deg + 1e-12)
        throw std::invalid_argument("sample_pose_grid: require 0 < step <= range");
    std::vector<double> axis;
    const int n = int(std::floor(range_deg / step_deg + 1e-9));
    for (int i = -n; i <= n; ++i) axis.push_back(i * step_deg);
    std::vector<std::array<double, 2>> grid;
    grid.reserve(axis.size() * axis.size());
    for (const double a : axis)
        for (const double b : axis) grid.push_back({a, b});
    return grid;
}

const PhantomEntry* DatasetManifest::phantom(int id) const {
    for (const auto& p : phantoms)
        if (p.id == id) return &p;
    return nullptr;
}

// ---------------------------------------------------------------------------
// manifest I/O

void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write manifest: " + path);
    f.precision(17);
    f << "kneeview-dataset v1\n";
    f << "intrinsics sdd " << m.sdd << " sid " << m.sid << " det " << m.det_w << " " << m.det_h
      << " pitch " << m.pitch_x << " " << m.pitch_y << "\n";
    f << "grid range " << m.grid_range << " step " << m.grid_step << "\n";
    if (!m.augment_desc.empty()) f << "augment " << m.augment_desc << "\n";
    for (const auto& p : m.phantoms)
        f << "phantom " << p.id << " split " << p.split << " seed " << p.seed << " laterality "
          << to_string(p.source_laterality) << " dir " << p.dir << "\n";
    for (const auto& r : m.records)
        f << "sample " << r.id << " phantom " << r.phantom_id << " view " << to_string(r.view)
          << " laterality " << to_string(r.laterality) << " alpha " << r.pose_offset.alpha
          << " beta " << r.pose_offset.beta << " gamma " << r.pose_offset.gamma << " t "
          << r.pose_offset.t.x << " " << r.pose_offset.t.y << " " << r.pose_offset.t.z << " dir "
          << r.dir << " checksum " << r.checksum << " augment " << r.augment << "\n";
    f << "skipped " << m.skipped << "\n";
    f << "end " << m.records.size() << "\n";
    if (!f) throw std::runtime_error("manifest write failed: " + path);
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open manifest: " + path);
    DatasetManifest m;
    m.base_dir = fs::path(path).parent_path().string();
    std::string line;
    std::getline(f, line);
    if (line != "kneeview-dataset v1") throw std::runtime_error("bad manifest header: " + path);
    bool have_end = false;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto tok = split_ws(line);
        if (tok[0] == "intrinsics") {
            m.sdd = std::stod(tok[2]);
            m.sid = std::stod(tok[4]);
            m.det_w = std::stoi(tok[6]);
            m.det_h = std::stoi(tok[7]);
            m.pitch_x = std::stod(tok[9]);
            m.pitch_y = std::stod(tok[10]);
        } else if (tok[0] == "grid") {
            m.grid_range = std::stod(tok[2]);
            m.grid_step = std::stod(tok[4]);
        } else if (tok[0] == "augment") {
            m.augment_desc = trim(line.substr(std::string("augment").size()));
        } else if (tok[0] == "phantom") {
            PhantomEntry p;
            p.id = std::stoi(tok[1]);
            p.split = tok[3];
            p.seed = std::stoull(tok[5]);
            p.source_laterality = laterality_from_string(tok[7]);
            p.dir = tok[9];
            m.phantoms.push_back(p);
        } else if (tok[0] == "sample") {
            SampleRecord r;
            r.id = tok[1];
            r.phantom_id = std::stoi(tok[3]);
            r.view = view_from_string(tok[5]);
            r.laterality = laterality_from_string(tok[7]);
            r.pose_offset = CArmPose(std::stod(tok[9]), std::stod(tok[11]), std::stod(tok[13]),
                                     Vec3(std::stod(tok[15]), std::stod(tok[16]),
                                          std::stod(tok[17])));
            r.dir = tok[19];
            r.checksum = tok[21];
            r.augment = tok[23];
            m.records.push_back(std::move(r));
        } else if (tok[0] == "skipped") {
            m.skipped = std::stoi(tok[1]);
        } else if (tok[0] == "end") {
            if (std::stoul(tok[1]) != m.records.size())
                throw std::runtime_error("manifest record count mismatch: " + path);
            have_end = true;
        }
    }
    if (!have_end)
        throw std::runtime_error("manifest missing end marker (incomplete generation?): " + path);
    return m;
}

std::string sample_checksum(const Sample& s) {
    std::uint64_t h = fnv1a(s.image.px.data(), s.image.px.size() * sizeof(float));
    for (const auto& ch : s.masks.channels) h = fnv1a(ch.px.data(), ch.px.size(), h);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Sample load_sample(const DatasetManifest& m, const SampleRecord& rec, bool verify_checksum) {
    Sample s;
    const fs::path dir = fs::path(m.base_dir) / rec.dir;
    s.image = read_raw_f32((dir / "image.raw").string(), m.det_w, m.det_h);
    const auto channels = view_channels(rec.view);
    s.masks.pose = rec.pose_offset;
    for (const auto& ch : channels) {
        s.masks.names.push_back(ch.name);
        s.masks.channels.push_back(
            read_raw_u8((dir / ("mask_" + ch.name + ".raw")).string(), m.det_w, m.det_h));
    }
    s.view = rec.view;
    s.laterality = rec.laterality;
    s.pose_offset = rec.pose_offset;
    s.target_update = pose_inverse(rec.pose_offset);
    s.phantom_id = rec.phantom_id;
    s.id = rec.id;
    if (rec.augment != "-") s.augment = AugmentRecord::parse(rec.augment);
    if (verify_checksum && sample_checksum(s) != rec.checksum)
        throw std::runtime_error("sample checksum mismatch: " + rec.id);
    return s;
}

PhantomVolume load_manifest_phantom(const DatasetManifest& m, int phantom_id) {
    const PhantomEntry* e = m.phantom(phantom_id);
    if (!e) throw std::runtime_error("manifest has no phantom " + std::to_string(phantom_id));
    return load_phantom((fs::path(m.base_dir) / e->dir).string());
}

ProjectionGeometry manifest_geometry(const DatasetManifest& m, const PhantomVolume& vol,
                                     ViewKind view) {
    ProjectionGeometry g;
    g.source_to_detector = m.sdd;
    g.source_to_isocenter = m.sid;
    g.det_w = m.det_w;
    g.det_h = m.det_h;
    g.pitch_x = m.pitch_x;
    g.pitch_y = m.pitch_y;
    g.reference_plane = vol.plane(view);
    g.validate();
    return g;
}

Sample render_dataset_sample(const PhantomVolume& vol, ViewKind view, const CArmPose& offset,
                             const ProjectionGeometry& geom, int threads) {
    RenderOptions opts;
    opts.threads = threads > 0 ? threads : 1;
    auto [proj, masks] = render_sample(vol, offset, geom, view_channels(view), opts);
    Sample s;
    s.image = std::move(proj.pixels);
    s.masks = std::move(masks);
    s.view = view;
    s.laterality = vol.laterality;
    s.pose_offset = offset;
    s.target_update = pose_inverse(offset);
    return s;
}

// ---------------------------------------------------------------------------
// simulation driver

std::array<int, 3> split_counts(int n) {
    if (n <= 0) throw std::invalid_argument("split_counts: need at least one phantom");
    int train = std::max(1, int(std::llround(n * 0.6)));
    int val = 0, test = 0;
    int rest = n - train;
    if (rest >= 2) {
        val = std::max(1, int(std::llround(n * 0.2)));
        if (train + val >= n) val = std::max(0, n - train - 1);
        test = n - train - val;
    } else if (rest == 1) {
        val = 1;
    }
    return {train, val, test};
}

namespace {

struct PlannedSample {
    int phantom_id;
    ViewKind view;
    CArmPose offset;
    Laterality laterality;  // which mirrored copy of the phantom to render
    std::string id;
};

void write_sample_files(const Sample& s, const fs::path& dir, bool png) {
    fs::create_directories(dir);
    write_raw((dir / "image.raw").string(), s.image);
    for (std::size_t c = 0; c < s.masks.channels.size(); ++c)
        write_raw((dir / ("mask_" + s.masks.names[c] + ".raw")).string(), s.masks.channels[c]);
    if (png) {
        write_png_gray((dir / "image.png").string(), s.image);
        for (std::size_t c = 0; c < s.masks.channels.size(); ++c) {
            ImageU8 m(s.masks.channels[c].w, s.masks.channels[c].h);
            for (std::size_t i = 0; i < m.size(); ++i)
                m.px[i] = s.masks.channels[c].px[i] ? 255 : 0;
            write_png_gray((dir / ("mask_" + s.masks.names[c] + ".png")).string(), m);
        }
    }
}

// Renders planned samples in parallel; manifests stay in plan order so the
// output is independent of the worker count. fs_subdir is relative to the
// output root, rec_prefix to the manifest file's directory.
void render_plan(const std::vector<PlannedSample>& plan,
                 const std::vector<PhantomVolume>& vols_left,
                 const std::vector<PhantomVolume>& vols_right, const SimulateOptions& opts,
                 const std::string& fs_subdir, const std::string& rec_prefix,
                 DatasetManifest& manifest) {
    const fs::path base = fs::path(opts.out_dir);
    std::vector<int> ok(plan.size(), 0);
    std::vector<std::string> checksums(plan.size());
    const int threads = opts.threads > 0 ? opts.threads : default_workers();

    parallel_for(std::int64_t(plan.size()), threads, [&](std::int64_t i) {
        const PlannedSample& ps = plan[i];
        const PhantomVolume& vol =
            ps.laterality == Laterality::left ? vols_left[ps.phantom_id] : vols_right[ps.phantom_id];
        ProjectionGeometry geom;
        geom.source_to_detector = opts.sdd;
        geom.source_to_isocenter = opts.sid;
        geom.det_w = opts.det_size;
        geom.det_h = opts.det_size;
        geom.pitch_x = opts.pitch_mm;
        geom.pitch_y = opts.pitch_mm;
        geom.reference_plane = vol.plane(ps.view);
        try {
            Sample s = render_dataset_sample(vol, ps.view, ps.offset, geom, 1);
            s.id = ps.id;
            s.phantom_id = ps.phantom_id;
            write_sample_files(s, base / fs_subdir / ps.id, opts.write_png);
            checksums[i] = sample_checksum(s);
            ok[i] = 1;
        } catch (const EmptyProjectionError& e) {
            log_warn("skipping " + ps.id + ": " + e.what());
            ok[i] = 0;
        }
    });

    for (std::size_t i = 0; i < plan.size(); ++i) {
        if (!ok[i]) {
            ++manifest.skipped;
            continue;
        }
        SampleRecord r;
        r.id = plan[i].id;
        r.phantom_id = plan[i].phantom_id;
        r.view = plan[i].view;
        r.laterality = plan[i].laterality;
        r.pose_offset = plan[i].offset;
        r.dir = rec_prefix + "/" + plan[i].id;
        r.checksum = checksums[i];
        manifest.records.push_back(std::move(r));
    }
}

DatasetManifest make_base_manifest(const SimulateOptions& opts) {
    DatasetManifest m;
    m.sdd = opts.sdd;
    m.sid = opts.sid;
    m.det_w = opts.det_size;
    m.det_h = opts.det_size;
    m.pitch_x = opts.pitch_mm;
    m.pitch_y = opts.pitch_mm;
    m.grid_range = opts.range_deg;
    m.grid_step = opts.step_deg;
    m.augment_desc = opts.augment.describe();
    m.base_dir = opts.out_dir;
    return m;
}

}  // namespace

SimulateResult run_simulate(const SimulateOptions& opts) {
    if (opts.out_dir.empty()) throw std::invalid_argument("run_simulate: out_dir required");
    const fs::path base(opts.out_dir);
    if (fs::exists(base / "manifest.txt"))
        throw std::runtime_error("output directory already contains a dataset: " + opts.out_dir);
    const bool created = fs::create_directories(base);

    try {
        // Phantoms: generate, crop to the labelled field of view, align to the
        // canonical (left) laterality.
        std::vector<PhantomVolume> vols_left(opts.num_phantoms);
        std::vector<PhantomVolume> vols_right(opts.num_phantoms);
        std::vector<PhantomEntry> entries(opts.num_phantoms);
        const auto counts = split_counts(opts.num_phantoms);
        parallel_for(opts.num_phantoms, opts.threads > 0 ? opts.threads : default_workers(),
                     [&](std::int64_t i) {
                         PhantomSpec spec;
                         spec.seed = mix_seed(opts.seed, 1000 + i);
                         std::mt19937_64 lat_rng(mix_seed(opts.seed, 2000 + i));
                         spec.laterality =
                             (lat_rng() & 1) ? Laterality::right : Laterality::left;
                         spec.include_metal = opts.include_metal && (i % 3 == 0);
                         PhantomVolume vol = generate_phantom(spec);
                         vol = crop_field_of_view(vol, opts.fov_margin_mm);
                         vol = align_laterality(vol, Laterality::left);
                         const std::string dir = "phantoms/p" + std::to_string(i);
                         save_phantom(vol, (base / dir).string());
                         vols_right[i] = align_laterality(vol, Laterality::right);
                         vols_left[i] = std::move(vol);
                         PhantomEntry e;
                         e.id = int(i);
                         e.seed = spec.seed;
                         e.source_laterality = spec.laterality;
                         e.dir = dir;
                         e.split = i < counts[0] ? "train"
                                   : i < counts[0] + counts[1] ? "val"
                                                               : "test";
                         entries[i] = e;
                     });

        SimulateResult result;
        result.train = make_base_manifest(opts);
        for (const auto& e : entries)
            if (e.split != "test") result.train.phantoms.push_back(e);

        // Train/val plan: full (alpha, beta) grid, canonical laterality.
        std::vector<PlannedSample> plan;
        const auto grid = sample_pose_grid(opts.range_deg, opts.step_deg);
        int counter = 0;
        for (const auto& e : result.train.phantoms)
            for (const ViewKind view : {ViewKind::ap, ViewKind::lateral})
                for (const auto& ab : grid) {
                    PlannedSample ps;
                    ps.phantom_id = e.id;
                    ps.view = view;
                    ps.offset = CArmPose(ab[0], ab[1], 0.0);
                    ps.laterality = Laterality::left;
                    char buf[16];
                    std::snprintf(buf, sizeof(buf), "s%06d", counter++);
                    ps.id = buf;
                    plan.push_back(ps);
                }
        render_plan(plan, vols_left, vols_right, opts, "samples", "samples", result.train);
        save_manifest(result.train, (base / "manifest.txt").string());

        // Eval split on held-out phantoms: capture-range sampling with
        // per-sample in-plane rotation, detector shift, and laterality.
        std::vector<PhantomEntry> test_entries;
        for (const auto& e : entries)
            if (e.split == "test") test_entries.push_back(e);
        if (!test_entries.empty()) {
            DatasetManifest ev = make_base_manifest(opts);
            ev.grid_range = opts.eval_range_deg;
            ev.grid_step = opts.orbital_sequence ? opts.orbital_alpha_step_deg : opts.eval_step_deg;
            ev.augment_desc.clear();  // evaluation data is never augmented
            ev.phantoms = test_entries;
            for (auto& p : ev.phantoms) p.dir = "../" + p.dir;  // manifest lives in eval/
            std::vector<PlannedSample> eplan;
            int ecounter = 0;
            for (const auto& e : test_entries) {
                std::mt19937_64 beta_rng(mix_seed(opts.seed, 3000 + e.id));
                const double fixed_beta = uniform_in(beta_rng, -20.0, 20.0);
                for (const ViewKind view : {ViewKind::ap, ViewKind::lateral}) {
                    std::vector<std::array<double, 2>> poses;
                    if (opts.orbital_sequence) {
                        for (double a = -opts.eval_range_deg;
                             a <= opts.eval_range_deg + 1e-9; a += opts.orbital_alpha_step_deg)
                            poses.push_back({a, fixed_beta});
                    } else {
                        poses = sample_pose_grid(opts.eval_range_deg, opts.eval_step_deg);
                    }
                    for (const auto& ab : poses) {
                        PlannedSample ps;
                        ps.phantom_id = e.id;
                        ps.view = view;
                        std::mt19937_64 rng(
                            mix_seed(opts.seed, 4000 + ecounter));
                        const double gamma =
                            uniform_in(rng, -opts.eval_gamma_max_deg, opts.eval_gamma_max_deg);
                        const double tx =
                            uniform_in(rng, -opts.eval_shift_max_mm, opts.eval_shift_max_mm);
                        const double ty =
                            uniform_in(rng, -opts.eval_shift_max_mm, opts.eval_shift_max_mm);
                        ps.offset = CArmPose(ab[0], ab[1], gamma, Vec3(tx, ty, 0.0));
                        ps.laterality = (rng() & 1) ? Laterality::right : Laterality::left;
                        char buf[16];
                        std::snprintf(buf, sizeof(buf), "e%06d", ecounter++);
                        ps.id = buf;
                        eplan.push_back(ps);
                    }
                }
            }
            fs::create_directories(base / "eval");
            render_plan(eplan, vols_left, vols_right, opts, "eval/samples", "samples", ev);
            ev.base_dir = (base / "eval").string();
            save_manifest(ev, (base / "eval" / "manifest.txt").string());
            result.eval = std::move(ev);
            result.skipped = result.train.skipped + result.eval->skipped;
        }
        result.rendered = int(result.train.records.size()) +
                          (result.eval ? int(result.eval->records.size()) : 0);
        check_split_hygiene(result.train, result.eval ? &*result.eval : nullptr);
        return result;
    } catch (...) {
        // partial-output cleanup so downstream commands never see half a dataset
        std::error_code ec;
        if (created) fs::remove_all(base, ec);
        else {
            fs::remove_all(base / "samples", ec);
            fs::remove_all(base / "eval", ec);
            fs::remove_all(base / "phantoms", ec);
            fs::remove(base / "manifest.txt", ec);
        }
        throw;
    }
}

void check_split_hygiene(const DatasetManifest& train, const DatasetManifest* eval) {
    std::set<int> train_ids, val_ids;
    for (const auto& p : train.phantoms)
        (p.split == "train" ? train_ids : val_ids).insert(p.id);
    for (const int id : train_ids)
        if (val_ids.count(id))
            throw std::runtime_error("phantom " + std::to_string(id) + " in train and val");
    if (eval) {
        for (const auto& p : eval->phantoms) {
            if (train_ids.count(p.id) || val_ids.count(p.id))
                throw std::runtime_error("phantom " + std::to_string(p.id) +
                                         " appears in both training and eval splits");
        }
    }
}

}  // namespace kv
