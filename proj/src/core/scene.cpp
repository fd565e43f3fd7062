#include "core/scene.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "core/decoder.hpp"
#include "core/image_io.hpp"
#include "core/metrics.hpp"

namespace ods::scene {

namespace fs = std::filesystem;
using nlohmann::json;

const char* motion_kind_name(MotionKind k) {
    switch (k) {
        case MotionKind::Rotation: return "rotation";
        case MotionKind::Translation: return "translation";
        case MotionKind::FallingBall: return "falling_ball";
        case MotionKind::Compound: return "compound";
    }
    return "?";
}

MotionKind motion_kind_from(const std::string& name) {
    if (name == "rotation") return MotionKind::Rotation;
    if (name == "translation") return MotionKind::Translation;
    if (name == "falling_ball") return MotionKind::FallingBall;
    if (name == "compound") return MotionKind::Compound;
    throw ContractViolation("unknown scene kind: " + name);
}

void SceneSpec::validate() const {
    ODS_REQUIRE(n_gaussians >= 1, "scene: n_gaussians must be >= 1");
    ODS_REQUIRE(n_cameras >= 1, "scene: n_cameras must be >= 1");
    ODS_REQUIRE(n_timesteps >= 2, "scene: n_timesteps must be >= 2");
    ODS_REQUIRE(resolution >= 8, "scene: resolution must be >= 8");
    ODS_REQUIRE(split_threshold > 0.0 && split_threshold < 1.0,
                "scene: split threshold must be in (0,1)");
    ODS_REQUIRE(axis.norm() > 1e-9, "scene: rotation axis must be nonzero");
}

namespace {

json vec3_to_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d vec3_from_json(const json& j) {
    ODS_REQUIRE(j.is_array() && j.size() == 3, "expected a 3-vector");
    return Eigen::Vector3d(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json spec_to_json_obj(const SceneSpec& s) {
    json j;
    j["kind"] = motion_kind_name(s.kind);
    j["template"] = s.template_shape;
    j["omega"] = s.omega;
    j["axis"] = vec3_to_json(s.axis);
    j["pivot"] = vec3_to_json(s.pivot);
    j["velocity"] = vec3_to_json(s.velocity);
    j["gravity"] = s.gravity;
    j["height"] = s.height;
    j["n_gaussians"] = s.n_gaussians;
    j["n_cameras"] = s.n_cameras;
    j["n_timesteps"] = s.n_timesteps;
    j["resolution"] = s.resolution;
    j["fov_deg"] = s.fov_deg;
    j["camera_radius"] = s.camera_radius;
    j["split_threshold"] = s.split_threshold;
    j["train_includes_threshold"] = s.train_includes_threshold;
    return j;
}

SceneSpec spec_from_json_obj(const json& j) {
    SceneSpec s;
    if (j.contains("kind")) s.kind = motion_kind_from(j.at("kind").get<std::string>());
    if (j.contains("template")) s.template_shape = j.at("template").get<std::string>();
    if (j.contains("omega")) s.omega = j.at("omega").get<double>();
    if (j.contains("axis")) s.axis = vec3_from_json(j.at("axis"));
    if (j.contains("pivot")) s.pivot = vec3_from_json(j.at("pivot"));
    if (j.contains("velocity")) s.velocity = vec3_from_json(j.at("velocity"));
    if (j.contains("gravity")) s.gravity = j.at("gravity").get<double>();
    if (j.contains("height")) s.height = j.at("height").get<double>();
    if (j.contains("n_gaussians")) s.n_gaussians = j.at("n_gaussians").get<int>();
    if (j.contains("n_cameras")) s.n_cameras = j.at("n_cameras").get<int>();
    if (j.contains("n_timesteps")) s.n_timesteps = j.at("n_timesteps").get<int>();
    if (j.contains("resolution")) s.resolution = j.at("resolution").get<int>();
    if (j.contains("fov_deg")) s.fov_deg = j.at("fov_deg").get<double>();
    if (j.contains("camera_radius")) s.camera_radius = j.at("camera_radius").get<double>();
    if (j.contains("split_threshold")) s.split_threshold = j.at("split_threshold").get<double>();
    if (j.contains("train_includes_threshold"))
        s.train_includes_threshold = j.at("train_includes_threshold").get<bool>();
    s.validate();
    return s;
}

}  // namespace

std::string SceneSpec::to_json() const { return spec_to_json_obj(*this).dump(2); }

SceneSpec SceneSpec::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("scene spec: invalid JSON: ") + e.what());
    }
    return spec_from_json_obj(j);
}

void advect(const SceneSpec& spec, const Eigen::Vector3d& mu0, const Eigen::Vector4d& rot0,
            double t, Eigen::Vector3d& mu, Eigen::Vector4d& rot) {
    mu = mu0;
    rot = rot0;
    const auto rotate = [&](double angle) {
        const Eigen::Vector3d axis = spec.axis.normalized();
        const Eigen::Matrix3d r = dec::rotation_about(axis, angle);
        mu = spec.pivot + r * (mu - spec.pivot);
        rot = gs::quat_mul(gs::rot_to_quat(r), rot);
    };
    switch (spec.kind) {
        case MotionKind::Rotation: rotate(spec.omega * t); break;
        case MotionKind::Translation: mu += spec.velocity * t; break;
        case MotionKind::FallingBall:
            mu.z() -= 0.5 * spec.gravity * t * t;
            break;
        case MotionKind::Compound:
            rotate(spec.omega * t);
            mu += spec.velocity * t;
            break;
    }
}

std::pair<std::vector<int64_t>, std::vector<int64_t>> split_dataset(const Dataset& ds,
                                                                    double threshold,
                                                                    bool include_threshold) {
    ODS_REQUIRE(threshold > 0.0 && threshold < 1.0, "split: threshold must be in (0,1)");
    std::vector<int64_t> train, extrap;
    for (size_t i = 0; i < ds.frames.size(); ++i) {
        const double t = ds.frames[i].t;
        const bool is_train = include_threshold ? (t <= threshold) : (t < threshold);
        (is_train ? train : extrap).push_back(static_cast<int64_t>(i));
    }
    ODS_REQUIRE(!train.empty(), "split: no training frames below threshold");
    ODS_REQUIRE(!extrap.empty(), "split: no extrapolation frames beyond threshold");
    return {std::move(train), std::move(extrap)};
}

std::vector<int64_t> Dataset::train_indices() const {
    return split_dataset(*this, split_threshold, train_includes_threshold).first;
}

std::vector<int64_t> Dataset::extrapolation_indices() const {
    return split_dataset(*this, split_threshold, train_includes_threshold).second;
}

namespace {

json camera_to_json(const render::Camera& c) {
    json j;
    j["fx"] = c.fx;
    j["fy"] = c.fy;
    j["cx"] = c.cx;
    j["cy"] = c.cy;
    j["width"] = c.width;
    j["height"] = c.height;
    j["near"] = c.near;
    json view = json::array();
    for (int r = 0; r < 4; ++r)
        for (int col = 0; col < 4; ++col) view.push_back(c.view(r, col));
    j["view"] = view;
    return j;
}

render::Camera camera_from_json(const json& j) {
    render::Camera c;
    c.fx = j.at("fx").get<double>();
    c.fy = j.at("fy").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    c.near = j.at("near").get<double>();
    const auto& view = j.at("view");
    ODS_REQUIRE(view.is_array() && view.size() == 16, "camera: view must hold 16 numbers");
    for (int r = 0; r < 4; ++r)
        for (int col = 0; col < 4; ++col)
            c.view(r, col) = view[static_cast<size_t>(r * 4 + col)].get<double>();
    c.validate();
    return c;
}

}  // namespace

void Dataset::write(const std::string& dir) const {
    fs::create_directories(fs::path(dir) / "images");
    json j;
    j["version"] = 1;
    j["split_threshold"] = split_threshold;
    j["train_includes_threshold"] = train_includes_threshold;
    if (spec) j["scene_spec"] = json::parse(spec->to_json());
    json cams = json::array();
    for (const auto& c : cameras) cams.push_back(camera_to_json(c));
    j["cameras"] = cams;
    json fr = json::array();
    for (size_t i = 0; i < frames.size(); ++i) {
        const Frame& f = frames[i];
        char base[32];
        std::snprintf(base, sizeof(base), "images/f_%05zu", i);
        const std::string png = std::string(base) + ".png";
        const std::string f64 = std::string(base) + ".f64";
        img::write_png((fs::path(dir) / png).string(), f.image);
        img::write_f64((fs::path(dir) / f64).string(), f.image);
        json jf;
        jf["camera"] = f.camera;
        jf["t"] = f.t;
        jf["png"] = png;
        jf["f64"] = f64;
        fr.push_back(jf);
    }
    j["frames"] = fr;
    if (points_t0.size() > 0) {
        json pts = json::array();
        for (int64_t i = 0; i < points_t0.dim(0); ++i)
            pts.push_back(json::array(
                {points_t0.at(i, 0), points_t0.at(i, 1), points_t0.at(i, 2)}));
        j["points_t0"] = pts;
    }
    std::ofstream os(fs::path(dir) / "cameras.json");
    if (!os) throw IoError("cannot write cameras.json under " + dir);
    os << j.dump(2) << "\n";
}

Dataset Dataset::load(const std::string& dir) {
    const fs::path root(dir);
    std::ifstream is(root / "cameras.json");
    if (!is) throw IoError("cannot open dataset: " + (root / "cameras.json").string());
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw IoError(std::string("cameras.json: invalid JSON: ") + e.what());
    }
    Dataset ds;
    ds.split_threshold = j.at("split_threshold").get<double>();
    ds.train_includes_threshold = j.value("train_includes_threshold", false);
    if (j.contains("scene_spec")) ds.spec = SceneSpec::from_json(j.at("scene_spec").dump());
    for (const auto& jc : j.at("cameras")) ds.cameras.push_back(camera_from_json(jc));
    for (const auto& jf : j.at("frames")) {
        Frame f;
        f.camera = jf.at("camera").get<int>();
        f.t = jf.at("t").get<double>();
        f.png_path = jf.at("png").get<std::string>();
        f.f64_path = jf.at("f64").get<std::string>();
        ODS_REQUIRE(f.camera >= 0 && f.camera < static_cast<int>(ds.cameras.size()),
                    "dataset: frame camera index out of range");
        f.image = img::read_f64((root / f.f64_path).string());
        ds.frames.push_back(std::move(f));
    }
    if (j.contains("points_t0")) {
        const auto& pts = j.at("points_t0");
        ds.points_t0 = Tensor({static_cast<int64_t>(pts.size()), 3});
        for (size_t i = 0; i < pts.size(); ++i)
            for (int c = 0; c < 3; ++c)
                ds.points_t0.at(static_cast<int64_t>(i), c) = pts[i][static_cast<size_t>(c)];
    }
    return ds;
}

namespace {

// canonical particle sample on the template shape
struct TemplateSample {
    Tensor pos, scale, color;  // Nx3 each
    Tensor opacity;            // Nx1
    Tensor rot;                // Nx4 (identity)
};

TemplateSample sample_template(const SceneSpec& spec, Rng& rng) {
    const int64_t n = spec.n_gaussians;
    TemplateSample s{Tensor({n, 3}), Tensor({n, 3}), Tensor({n, 3}), Tensor({n, 1}),
                     Tensor({n, 4})};
    for (int64_t i = 0; i < n; ++i) {
        Eigen::Vector3d p;
        if (spec.template_shape == "ball") {
            // uniform in a sphere, lifted to the start height
            do {
                p = Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
            } while (p.squaredNorm() > 1.0);
            p *= 0.25;
            p.z() += spec.height;
        } else if (spec.template_shape == "two_blobs") {
            const bool second = (i % 2) == 1;
            const Eigen::Vector3d c =
                second ? Eigen::Vector3d(0.3, 0.1, 0.0) : Eigen::Vector3d(-0.3, -0.1, 0.05);
            p = c + 0.12 * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
        } else {  // box (default): elongated so rotation is visible
            p = Eigen::Vector3d(rng.uniform(-0.35, 0.35), rng.uniform(-0.15, 0.15),
                                rng.uniform(-0.10, 0.10));
        }
        for (int c = 0; c < 3; ++c) s.pos.at(i, c) = p[c];
        for (int c = 0; c < 3; ++c) s.color.at(i, c) = rng.uniform(0.05, 0.95);
        s.opacity.at(i, 0) = 0.85;
        s.rot.at(i, 0) = 1.0;
    }
    // isotropic scale: mean distance to the 3 nearest neighbors
    for (int64_t i = 0; i < n; ++i) {
        std::vector<double> d2;
        d2.reserve(static_cast<size_t>(n - 1));
        for (int64_t k = 0; k < n; ++k) {
            if (k == i) continue;
            double acc = 0;
            for (int c = 0; c < 3; ++c) {
                const double d = s.pos.at(i, c) - s.pos.at(k, c);
                acc += d * d;
            }
            d2.push_back(acc);
        }
        std::sort(d2.begin(), d2.end());
        double mean = 0.0;
        const size_t kn = std::min<size_t>(3, d2.size());
        for (size_t k = 0; k < kn; ++k) mean += std::sqrt(d2[k]);
        mean = kn > 0 ? mean / static_cast<double>(kn) : 0.05;
        const double sc = std::clamp(mean, 1e-3, 0.3);
        for (int c = 0; c < 3; ++c) s.scale.at(i, c) = sc;
    }
    return s;
}

std::vector<render::Camera> make_cameras(const SceneSpec& spec) {
    std::vector<render::Camera> cams;
    const double fov = spec.fov_deg * 3.14159265358979323846 / 180.0;
    for (int i = 0; i < spec.n_cameras; ++i) {
        const double azim = 2.0 * 3.14159265358979323846 * i / spec.n_cameras;
        const double elevations[3] = {-0.15, 0.25, 0.55};
        const double elev = elevations[i % 3];
        const Eigen::Vector3d eye(spec.camera_radius * std::cos(elev) * std::cos(azim),
                                  spec.camera_radius * std::cos(elev) * std::sin(azim),
                                  spec.camera_radius * std::sin(elev));
        cams.push_back(render::Camera::look_at(eye, Eigen::Vector3d::Zero(),
                                               Eigen::Vector3d::UnitZ(), fov, spec.resolution,
                                               spec.resolution));
    }
    return cams;
}

}  // namespace

Dataset generate_scene(const SceneSpec& spec, uint64_t seed, const std::string& out_dir) {
    spec.validate();
    Rng rng(seed ^ 0x736365656eull);
    const TemplateSample tpl = sample_template(spec, rng);
    const int64_t n = spec.n_gaussians;

    Dataset ds;
    ds.split_threshold = spec.split_threshold;
    ds.train_includes_threshold = spec.train_includes_threshold;
    ds.spec = spec;
    ds.cameras = make_cameras(spec);
    ds.points_t0 = tpl.pos;

    Tensor pos_t({n, 3}), rot_t({n, 4});
    for (int ti = 0; ti < spec.n_timesteps; ++ti) {
        const double t = static_cast<double>(ti) / (spec.n_timesteps - 1);
        for (int64_t i = 0; i < n; ++i) {
            Eigen::Vector3d mu0(tpl.pos.at(i, 0), tpl.pos.at(i, 1), tpl.pos.at(i, 2));
            Eigen::Vector4d q0(tpl.rot.at(i, 0), tpl.rot.at(i, 1), tpl.rot.at(i, 2),
                               tpl.rot.at(i, 3));
            Eigen::Vector3d mu;
            Eigen::Vector4d q;
            advect(spec, mu0, q0, t, mu, q);
            for (int c = 0; c < 3; ++c) pos_t.at(i, c) = mu[c];
            for (int c = 0; c < 4; ++c) rot_t.at(i, c) = q[c];
        }
        render::SplatArrays arrays{pos_t, rot_t, tpl.scale, tpl.opacity, tpl.color};
        for (size_t ci = 0; ci < ds.cameras.size(); ++ci) {
            Frame f;
            f.camera = static_cast<int>(ci);
            f.t = t;
            f.image = render::render_fast(arrays, ds.cameras[ci]);
            ds.frames.push_back(std::move(f));
        }
    }
    if (!out_dir.empty()) ds.write(out_dir);
    return ds;
}

double EvalSummary::mean_psnr() const {
    return frames() ? (mean_psnr_train * n_train + mean_psnr_extrap * n_extrap) / frames() : 0;
}
double EvalSummary::mean_ssim() const {
    return frames() ? (mean_ssim_train * n_train + mean_ssim_extrap * n_extrap) / frames() : 0;
}
double EvalSummary::mean_l1() const {
    return frames() ? (mean_l1_train * n_train + mean_l1_extrap * n_extrap) / frames() : 0;
}

EvalSummary evaluate(Pipeline& model, const Dataset& ds, const std::string& split,
                     const std::string& csv_path, const std::string& plot_prefix) {
    ODS_REQUIRE(split == "train" || split == "extrapolation" || split == "all",
                "evaluate: split must be train|extrapolation|all");
    auto [train_idx, extrap_idx] =
        split_dataset(ds, ds.split_threshold, ds.train_includes_threshold);
    std::vector<int64_t> indices;
    if (split == "train" || split == "all")
        indices.insert(indices.end(), train_idx.begin(), train_idx.end());
    if (split == "extrapolation" || split == "all")
        indices.insert(indices.end(), extrap_idx.begin(), extrap_idx.end());
    std::sort(indices.begin(), indices.end());
    ODS_REQUIRE(!indices.empty(), "evaluate: no frames in the requested split");

    std::vector<char> is_train_flag(ds.frames.size(), 0);
    for (int64_t i : train_idx) is_train_flag[static_cast<size_t>(i)] = 1;

    std::string csv = "frame_id,t,split,psnr,ssim,l1\n";
    EvalSummary sum;
    img::ChartSeries psnr_train, psnr_extrap, ssim_train, ssim_extrap;
    psnr_train.rgb = {0.1, 0.3, 0.85};
    ssim_train.rgb = {0.1, 0.3, 0.85};
    psnr_extrap.rgb = {0.85, 0.2, 0.1};
    ssim_extrap.rgb = {0.85, 0.2, 0.1};

    for (int64_t fi : indices) {
        const Frame& f = ds.frames[static_cast<size_t>(fi)];
        ODS_REQUIRE(f.image.size() > 0, "evaluate: frame image missing");
        const Tensor rendered = model.render_at(f.t, ds.cameras[static_cast<size_t>(f.camera)]);
        const double p = metrics::psnr(rendered, f.image);
        const double s = metrics::ssim(rendered, f.image);
        const double e = metrics::l1(rendered, f.image);
        const bool tr = is_train_flag[static_cast<size_t>(fi)] != 0;
        char row[160];
        std::snprintf(row, sizeof(row), "%lld,%.10g,%s,%.6f,%.6f,%.8f\n",
                      static_cast<long long>(fi), f.t, tr ? "train" : "extrapolation", p, s, e);
        csv += row;
        if (tr) {
            sum.mean_psnr_train += p;
            sum.mean_ssim_train += s;
            sum.mean_l1_train += e;
            sum.n_train += 1;
            psnr_train.x.push_back(f.t);
            psnr_train.y.push_back(p);
            ssim_train.x.push_back(f.t);
            ssim_train.y.push_back(s);
        } else {
            sum.mean_psnr_extrap += p;
            sum.mean_ssim_extrap += s;
            sum.mean_l1_extrap += e;
            sum.n_extrap += 1;
            psnr_extrap.x.push_back(f.t);
            psnr_extrap.y.push_back(p);
            ssim_extrap.x.push_back(f.t);
            ssim_extrap.y.push_back(s);
        }
    }
    if (sum.n_train) {
        sum.mean_psnr_train /= sum.n_train;
        sum.mean_ssim_train /= sum.n_train;
        sum.mean_l1_train /= sum.n_train;
    }
    if (sum.n_extrap) {
        sum.mean_psnr_extrap /= sum.n_extrap;
        sum.mean_ssim_extrap /= sum.n_extrap;
        sum.mean_l1_extrap /= sum.n_extrap;
    }

    if (!csv_path.empty()) {
        std::ofstream os(csv_path);
        if (!os) throw IoError("cannot write metrics csv: " + csv_path);
        os << csv;
    }
    if (!plot_prefix.empty()) {
        img::write_png(plot_prefix + "_psnr.png",
                       img::draw_line_chart({psnr_train, psnr_extrap}));
        img::write_png(plot_prefix + "_ssim.png",
                       img::draw_line_chart({ssim_train, ssim_extrap}));
    }
    return sum;
}

double trajectory_error(Pipeline& model, const Dataset& ds, double t, double opacity_floor) {
    ODS_REQUIRE(ds.spec.has_value(), "trajectory_error: dataset has no analytic motion");
    const Tensor predicted = model.predicted_positions(t);
    const gs::ParticleSet& parts = model.particles();
    double err = 0.0;
    int64_t used = 0;
    for (int64_t i = 0; i < parts.size(); ++i) {
        if (gs::sigmoid(parts.opacity_raw.at(i, 0)) < opacity_floor) continue;
        const Eigen::Vector3d mu0(parts.pos.at(i, 0), parts.pos.at(i, 1), parts.pos.at(i, 2));
        Eigen::Vector3d mu;
        Eigen::Vector4d q;
        advect(*ds.spec, mu0, Eigen::Vector4d(1, 0, 0, 0), t, mu, q);
        const Eigen::Vector3d pred(predicted.at(i, 0), predicted.at(i, 1), predicted.at(i, 2));
        err += (pred - mu).norm();
        used += 1;
    }
    ODS_REQUIRE(used > 0, "trajectory_error: no particles above the opacity floor");
    return err / static_cast<double>(used);
}

}  // namespace ods::scene
