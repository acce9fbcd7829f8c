#include "ngc/world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "ngc/rng.hpp"
#include "nlohmann/json.hpp"

namespace ngc::world {

using json = nlohmann::ordered_json;

void validate(const WorldConfig& cfg) {
    if (cfg.height < 8 || cfg.width < 8)
        throw std::invalid_argument("world extents must be >= 8");
    if (cfg.height % 4 != 0 || cfg.width % 4 != 0)
        throw std::invalid_argument("world extents must be multiples of 4 (dither tile)");
    if (cfg.seg_classes < 2)
        throw std::invalid_argument("seg_classes must be >= 2");
    if (!(cfg.rgb_noise >= 0.0))
        throw std::invalid_argument("rgb_noise must be >= 0");
}

const Tensor& Scene::layer(const std::string& name) const {
    auto it = layers.find(name);
    if (it == layers.end())
        throw std::out_of_range("scene has no layer: " + name);
    return it->second;
}

namespace {

using Field = std::vector<double>;  // row-major height*width

// Smooth scalar field in [0,1]: three octaves of bilinear value noise with a
// smoothstep fade, then min-max normalised.
Field latent_field(const WorldConfig& cfg, std::uint64_t scene_id) {
    const int h = cfg.height, w = cfg.width;
    Rng rng(mix_seed(cfg.master_seed, scene_id));
    Field z(static_cast<size_t>(h) * w, 0.0);
    double amp = 1.0, total = 0.0;
    for (int cells : {4, 8, 16}) {
        std::vector<double> lat(static_cast<size_t>(cells + 1) * (cells + 1));
        for (auto& v : lat) v = rng.uniform();
        auto at = [&](int yy, int xx) { return lat[static_cast<size_t>(yy) * (cells + 1) + xx]; };
        for (int y = 0; y < h; ++y) {
            double fy = static_cast<double>(y) * cells / h;
            int yi = static_cast<int>(fy);
            double yf = fy - yi;
            double sy = yf * yf * (3.0 - 2.0 * yf);
            for (int x = 0; x < w; ++x) {
                double fx = static_cast<double>(x) * cells / w;
                int xi = static_cast<int>(fx);
                double xf = fx - xi;
                double sx = xf * xf * (3.0 - 2.0 * xf);
                double top = at(yi, xi) * (1.0 - sx) + at(yi, xi + 1) * sx;
                double bot = at(yi + 1, xi) * (1.0 - sx) + at(yi + 1, xi + 1) * sx;
                z[static_cast<size_t>(y) * w + x] += amp * (top * (1.0 - sy) + bot * sy);
            }
        }
        total += amp;
        amp *= 0.5;
    }
    double zmin = z[0], zmax = z[0];
    for (double& v : z) {
        v /= total;
        zmin = std::min(zmin, v);
        zmax = std::max(zmax, v);
    }
    double range = std::max(zmax - zmin, 1e-9);
    for (double& v : z) v = (v - zmin) / range;
    return z;
}

// Central differences inside, one-sided at the borders; scaled so the field
// is differentiated over a unit domain.
void field_gradients(const Field& z, int h, int w, Field& gx, Field& gy) {
    gx.assign(z.size(), 0.0);
    gy.assign(z.size(), 0.0);
    auto at = [&](int y, int x) { return z[static_cast<size_t>(y) * w + x]; };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double dy = (y == 0)       ? at(1, x) - at(0, x)
                        : (y == h - 1) ? at(h - 1, x) - at(h - 2, x)
                                       : 0.5 * (at(y + 1, x) - at(y - 1, x));
            double dx = (x == 0)       ? at(y, 1) - at(y, 0)
                        : (x == w - 1) ? at(y, w - 1) - at(y, w - 2)
                                       : 0.5 * (at(y, x + 1) - at(y, x - 1));
            gy[static_cast<size_t>(y) * w + x] = dy * h;
            gx[static_cast<size_t>(y) * w + x] = dx * w;
        }
    }
}

constexpr double kBayer4[4][4] = {
    {0.0 / 16 + 1.0 / 32, 8.0 / 16 + 1.0 / 32, 2.0 / 16 + 1.0 / 32, 10.0 / 16 + 1.0 / 32},
    {12.0 / 16 + 1.0 / 32, 4.0 / 16 + 1.0 / 32, 14.0 / 16 + 1.0 / 32, 6.0 / 16 + 1.0 / 32},
    {3.0 / 16 + 1.0 / 32, 11.0 / 16 + 1.0 / 32, 1.0 / 16 + 1.0 / 32, 9.0 / 16 + 1.0 / 32},
    {15.0 / 16 + 1.0 / 32, 7.0 / 16 + 1.0 / 32, 13.0 / 16 + 1.0 / 32, 5.0 / 16 + 1.0 / 32},
};

}  // namespace

Scene generate_scene(const WorldConfig& cfg, std::uint64_t scene_id) {
    validate(cfg);
    const int h = cfg.height, w = cfg.width;
    const size_t n = static_cast<size_t>(h) * w;
    const Field z = latent_field(cfg, scene_id);

    Scene scene;
    scene.id = scene_id;

    // Clean render of the latent field: three spectrally distinct channels.
    Field cr(n), cg(n), cb(n);
    for (size_t i = 0; i < n; ++i) {
        cr[i] = z[i];
        cg[i] = 0.25 + 0.5 * z[i] * z[i];
        cb[i] = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * (0.75 * z[i] + 0.1));
    }

    // The sensor observes the render through additive Gaussian noise.
    Tensor rgb = Tensor::zeros_f32({static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w), 3});
    {
        Rng noise(mix_seed(cfg.master_seed, scene_id, 0x6F15E));
        for (size_t i = 0; i < n; ++i) {
            double v[3] = {cr[i], cg[i], cb[i]};
            for (int c = 0; c < 3; ++c) {
                double obs = std::clamp(v[c] + cfg.rgb_noise * noise.normal(), 0.0, 1.0);
                rgb.f[i * 3 + c] = static_cast<float>(obs);
            }
        }
    }
    scene.layers["rgb"] = std::move(rgb);

    Tensor depth = Tensor::zeros_f32({static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w), 1});
    for (size_t i = 0; i < n; ++i)
        depth.f[i] = static_cast<float>(2.0 + 48.0 * std::pow(z[i], 1.5));
    scene.layers["depth"] = std::move(depth);

    Field gx, gy;
    field_gradients(z, h, w, gx, gy);

    // Camera-frame normals: unit normals of the surface with slope 1.5.
    Tensor normC = Tensor::zeros_f32({static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w), 2});
    Field ncz(n);
    for (size_t i = 0; i < n; ++i) {
        double nx = -1.5 * gx[i], ny = -1.5 * gy[i], nz = 1.0;
        double nrm = std::sqrt(nx * nx + ny * ny + nz * nz);
        normC.f[i * 2 + 0] = static_cast<float>(nx / nrm);
        normC.f[i * 2 + 1] = static_cast<float>(ny / nrm);
        ncz[i] = nz / nrm;
    }

    // World-frame encoding: gradient direction rotated 35 degrees, smoothed by
    // delta, with in-plane magnitude carrying the absolute field value.
    Tensor normW = Tensor::zeros_f32({static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w), 2});
    {
        const double rot = 35.0 * std::numbers::pi / 180.0;
        const double cr_ = std::cos(rot), sr_ = std::sin(rot);
        const double delta = 0.5, m_lo = 0.15, m_hi = 0.95;
        for (size_t i = 0; i < n; ++i) {
            double gxr = cr_ * gx[i] - sr_ * gy[i];
            double gyr = sr_ * gx[i] + cr_ * gy[i];
            double s = std::sqrt(gxr * gxr + gyr * gyr + delta * delta);
            double m = m_lo + (m_hi - m_lo) * z[i];
            normW.f[i * 2 + 0] = static_cast<float>(m * gxr / s);
            normW.f[i * 2 + 1] = static_cast<float>(m * gyr / s);
        }
    }
    scene.layers["normW"] = std::move(normW);

    const int C = cfg.seg_classes;
    Tensor seg = Tensor::zeros_u16({static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w)});
    for (size_t i = 0; i < n; ++i)
        seg.u[i] = static_cast<std::uint16_t>(std::min(static_cast<int>(z[i] * C), C - 1));

    // 4-neighbourhood band boundaries.
    Tensor wire = Tensor::zeros_u16({static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w)});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            std::uint16_t s = seg.u[static_cast<size_t>(y) * w + x];
            bool edge = (y > 0 && seg.u[static_cast<size_t>(y - 1) * w + x] != s) ||
                        (y + 1 < h && seg.u[static_cast<size_t>(y + 1) * w + x] != s) ||
                        (x > 0 && seg.u[static_cast<size_t>(y) * w + x - 1] != s) ||
                        (x + 1 < w && seg.u[static_cast<size_t>(y) * w + x + 1] != s);
            wire.u[static_cast<size_t>(y) * w + x] = edge ? 1 : 0;
        }
    }
    scene.layers["seg"] = std::move(seg);
    scene.layers["wire"] = std::move(wire);

    // Ordered-dither binarisation of the clean render's luma.
    Tensor half = Tensor::zeros_u16({static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w)});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            size_t i = static_cast<size_t>(y) * w + x;
            double luma = 0.299 * cr[i] + 0.587 * cg[i] + 0.114 * cb[i];
            half.u[i] = luma > kBayer4[y % 4][x % 4] ? 1 : 0;
        }
    }
    scene.layers["half"] = std::move(half);

    // Scene-level pose: field mean, weighted centroid, mean normal stats.
    {
        double zsum = 0.0, xw = 0.0, yw = 0.0, nxm = 0.0, nym = 0.0, tilt = 0.0;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                size_t i = static_cast<size_t>(y) * w + x;
                zsum += z[i];
                xw += x * z[i];
                yw += y * z[i];
                nxm += normC.f[i * 2 + 0];
                nym += normC.f[i * 2 + 1];
                tilt += 1.0 - ncz[i];
            }
        }
        double denom = std::max(zsum, 1e-9);
        Tensor pose = Tensor::zeros_f32({6});
        pose.f[0] = static_cast<float>(50.0 * zsum / n);
        pose.f[1] = static_cast<float>(50.0 * (xw / denom) / w);
        pose.f[2] = static_cast<float>(50.0 * (yw / denom) / h);
        pose.f[3] = static_cast<float>(90.0 * nxm / n);
        pose.f[4] = static_cast<float>(90.0 * nym / n);
        pose.f[5] = static_cast<float>(45.0 * tilt / n);
        scene.layers["pose"] = std::move(pose);
    }
    scene.layers["normC"] = std::move(normC);
    return scene;
}

DatasetPlan DatasetPlan::defaults() {
    DatasetPlan plan;
    plan.splits = {
        {"train", 0, 800, true},
        {"val", 800, 200, true},
        {"unlabeled1", 1000, 1000, false},
        {"unlabeled2", 2000, 1000, false},
        {"eval", 3000, 1000, false},
    };
    return plan;
}

void validate(const DatasetPlan& plan) {
    if (plan.splits.empty()) throw std::invalid_argument("dataset plan has no splits");
    for (size_t i = 0; i < plan.splits.size(); ++i) {
        const auto& s = plan.splits[i];
        if (s.name.empty() || s.name.find('/') != std::string::npos || s.name == "sealed")
            throw std::invalid_argument("bad split name: '" + s.name + "'");
        if (s.count <= 0)
            throw std::invalid_argument("split '" + s.name + "' has non-positive count");
        for (size_t j = 0; j < i; ++j) {
            const auto& t = plan.splits[j];
            if (t.name == s.name)
                throw std::invalid_argument("duplicate split name: '" + s.name + "'");
            bool disjoint = s.first_id + s.count <= t.first_id || t.first_id + t.count <= s.first_id;
            if (!disjoint)
                throw std::invalid_argument("scene id ranges overlap between '" + t.name +
                                            "' and '" + s.name + "'");
        }
    }
}

const SplitManifest& DatasetManifest::split(const std::string& name) const {
    for (const auto& s : splits)
        if (s.name == name) return s;
    throw std::out_of_range("manifest has no split: " + name);
}

bool DatasetManifest::has_split(const std::string& name) const {
    for (const auto& s : splits)
        if (s.name == name) return true;
    return false;
}

namespace {

std::string scene_dirname(std::uint64_t id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%06llu", static_cast<unsigned long long>(id));
    return buf;
}

json config_to_json(const WorldConfig& cfg) {
    return json{{"height", cfg.height},
                {"width", cfg.width},
                {"seg_classes", cfg.seg_classes},
                {"rgb_noise", cfg.rgb_noise},
                {"master_seed", cfg.master_seed}};
}

WorldConfig config_from_json(const json& j) {
    WorldConfig cfg;
    cfg.height = j.at("height").get<int>();
    cfg.width = j.at("width").get<int>();
    cfg.seg_classes = j.at("seg_classes").get<int>();
    cfg.rgb_noise = j.at("rgb_noise").get<double>();
    cfg.master_seed = j.at("master_seed").get<std::uint64_t>();
    return cfg;
}

}  // namespace

DatasetManifest make_dataset(const WorldConfig& cfg, const DatasetPlan& plan,
                             const std::filesystem::path& root) {
    validate(cfg);
    validate(plan);
    namespace fs = std::filesystem;
    if (fs::exists(root / "manifest.json"))
        throw std::runtime_error("dataset already exists at " + root.string());

    DatasetManifest manifest;
    manifest.world = cfg;
    for (const auto& split : plan.splits) {
        SplitManifest sm;
        sm.name = split.name;
        sm.labeled = split.labeled;
        for (int k = 0; k < split.count; ++k) {
            const std::uint64_t id = split.first_id + k;
            Scene scene = generate_scene(cfg, id);
            SceneEntry entry;
            entry.id = id;
            const std::string dir = split.name + "/" + scene_dirname(id);
            const std::string sealed_dir = "sealed/" + dir;
            fs::create_directories(root / dir);
            if (!split.labeled) fs::create_directories(root / sealed_dir);
            for (const auto& [name, tensor] : scene.layers) {
                const bool open = split.labeled || name == "rgb";
                const std::string rel = (open ? dir : sealed_dir) + "/" + name + ".ngct";
                if (fs::exists(root / rel))
                    throw std::runtime_error("path collision: " + rel);
                write_tensor(root / rel, tensor);
                (open ? entry.files : entry.sealed)[name] = rel;
            }
            sm.scenes.push_back(std::move(entry));
        }
        manifest.splits.push_back(std::move(sm));
    }
    write_manifest(manifest, root / "manifest.json");
    return manifest;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& file) {
    json j;
    j["world"] = config_to_json(m.world);
    j["splits"] = json::array();
    for (const auto& s : m.splits) {
        json js;
        js["name"] = s.name;
        js["labeled"] = s.labeled;
        js["scenes"] = json::array();
        for (const auto& e : s.scenes) {
            json je;
            je["id"] = e.id;
            je["files"] = e.files;
            if (!e.sealed.empty()) je["sealed"] = e.sealed;
            js["scenes"].push_back(std::move(je));
        }
        j["splits"].push_back(std::move(js));
    }
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << j.dump(1) << "\n";
}

DatasetManifest read_manifest(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot read " + file.string());
    json j = json::parse(in);
    DatasetManifest m;
    m.world = config_from_json(j.at("world"));
    for (const auto& js : j.at("splits")) {
        SplitManifest s;
        s.name = js.at("name").get<std::string>();
        s.labeled = js.at("labeled").get<bool>();
        for (const auto& je : js.at("scenes")) {
            SceneEntry e;
            e.id = je.at("id").get<std::uint64_t>();
            e.files = je.at("files").get<std::map<std::string, std::string>>();
            if (je.contains("sealed"))
                e.sealed = je.at("sealed").get<std::map<std::string, std::string>>();
            s.scenes.push_back(std::move(e));
        }
        m.splits.push_back(std::move(s));
    }
    return m;
}

}  // namespace ngc::world
