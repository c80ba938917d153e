#include "stylealign/domains.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "stylealign/config.hpp"
#include "stylealign/csv.hpp"
#include "stylealign/thread_pool.hpp"

namespace stylealign {

namespace {

namespace fs = std::filesystem;

constexpr int kSub = 4;  // supersampling grid per pixel axis

// Region ids for the face families (priority: higher id wins).
enum FaceRegion { kBackground = 0, kBody = 1, kEars = 2, kEyes = 3 };
enum SceneRegion { kSky = 0, kGround = 1, kSun = 2 };

struct Rgb {
    double r, g, b;
};

constexpr Rgb kFaceBg = {-0.85, -0.85, -0.80};

Rgb hsv(double h, double s, double v) {
    h = h - std::floor(h);
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    const double m = v - c;
    // map [0,1] to [-1,1]
    return {2 * (r + m) - 1, 2 * (g + m) - 1, 2 * (b + m) - 1};
}

double texture_mult(int texture_id, double u, double v) {
    switch (texture_id) {
        case 1: return 1.0 - 0.22 * (0.5 + 0.5 * std::sin(9.0 * v));
        case 2: return 1.0 - 0.22 * (0.5 + 0.5 * std::sin(13.0 * std::sqrt(u * u + v * v)));
        case 3: return 1.0 - 0.25 * (0.5 + 0.5 * std::cos(11.0 * u) * std::cos(11.0 * v));
        default: return 1.0;
    }
}

struct Shaded {
    int region;
    Rgb color;
};

// Face families share the part layout; boxface renders every part angular.
Shaded shade_face(bool angular, const FactorVector& f, double u, double v) {
    const double se = f.part_scale[0], sa = f.part_scale[1], sb = f.part_scale[2];

    // Eyes (dark), highest priority.
    {
        const double r = 0.10 * se;
        for (double cx : {-0.22, 0.22}) {
            const double du = u - cx, dv = v + 0.12;
            const bool hit = angular ? (std::fabs(du) < r && std::fabs(dv) < r)
                                     : (du * du + dv * dv < r * r);
            if (hit) return {kEyes, {-0.75, -0.75, -0.70}};
        }
    }
    // Ears.
    {
        const double r = 0.17 * sa;
        for (double cx : {-0.42, 0.42}) {
            const double du = u - cx, dv = v + 0.50;
            bool hit;
            if (angular) {
                // upward-pointing triangle
                const double t = (dv + r) / (2 * r);  // 0 at top, 1 at base
                hit = dv > -r && dv < r && std::fabs(du) < r * std::max(0.0, t);
            } else {
                hit = du * du + dv * dv < r * r;
            }
            if (hit) {
                Rgb c = hsv(f.hue + 0.10, 0.70, 0.62);
                return {kEars, c};
            }
        }
    }
    // Body with mouth bar and texture.
    {
        const double dv = v - 0.05;
        bool hit;
        if (angular) {
            const double rx = (f.shape_family ? 0.60 : 0.52) * sb;
            const double ry = (f.shape_family ? 0.42 : 0.50) * sb;
            hit = std::fabs(u) < rx && std::fabs(dv) < ry;
        } else {
            const double rx = 0.55 * sb;
            const double ry = (f.shape_family ? 0.45 : 0.55) * sb;
            hit = (u * u) / (rx * rx) + (dv * dv) / (ry * ry) < 1.0;
        }
        if (hit) {
            Rgb c = hsv(f.hue, 0.75, angular ? 0.95 : 0.85);
            const double m = texture_mult(f.texture_id, u, v);
            c.r = (c.r + 1) * m - 1;
            c.g = (c.g + 1) * m - 1;
            c.b = (c.b + 1) * m - 1;
            if (std::fabs(u) < 0.18 && std::fabs(v - 0.34) < 0.05) {
                c.r = (c.r + 1) * 0.40 - 1;
                c.g = (c.g + 1) * 0.40 - 1;
                c.b = (c.b + 1) * 0.40 - 1;
            }
            return {kBody, c};
        }
    }
    return {kBackground, kFaceBg};
}

Shaded shade_scene(const FactorVector& f, double u, double v) {
    // Sun, drawn above everything.
    {
        const double r = 0.16 * f.part_scale[0];
        const double du = u - 0.42, dv = v + 0.42;
        if (du * du + dv * dv < r * r) return {kSun, {0.95, 0.75, -0.2}};
    }
    // Ground below a (rotated) horizon; family 1 adds a hill bump.
    double horizon = 0.10;
    if (f.shape_family) horizon += -0.25 * std::exp(-8.0 * u * u);
    if (v > horizon) {
        Rgb c = hsv(0.30, 0.55, 0.45);
        const double m = texture_mult(f.texture_id, u, v);
        c.r = (c.r + 1) * m - 1;
        c.g = (c.g + 1) * m - 1;
        c.b = (c.b + 1) * m - 1;
        return {kGround, c};
    }
    Rgb sky = hsv(f.hue, 0.45, 0.70);
    return {kSky, sky};
}

Shaded shade(const std::string& family, const FactorVector& f, double u, double v) {
    // Rotate into shape space (image rotates by `rotation` degrees).
    const double th = f.rotation * M_PI / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    const double ru = c * u + s * v;
    const double rv = -s * u + c * v;
    if (family == "roundface") return shade_face(false, f, ru, rv);
    if (family == "boxface") return shade_face(true, f, ru, rv);
    if (family == "scene") return shade_scene(f, ru, rv);
    throw std::invalid_argument("unknown domain family: " + family);
}

} // namespace

const std::vector<std::string>& face_regions() {
    static const std::vector<std::string> r = {"background", "body", "ears", "eyes"};
    return r;
}

const std::vector<std::string>& scene_regions() {
    static const std::vector<std::string> r = {"background", "ground", "sun"};
    return r;
}

bool hue_is_red(double hue) {
    hue -= std::floor(hue);
    return hue < 1.0 / 6.0;
}

bool hue_is_blue(double hue) {
    hue -= std::floor(hue);
    return hue >= 0.5 && hue < 2.0 / 3.0;
}

Image render_image(const std::string& family, const FactorVector& f, int res) {
    Image img{Tensor<Real>({3, res, res})};
    Real* p = img.pixels.data();
    const int64_t plane = static_cast<int64_t>(res) * res;
    const double inv = 2.0 / res;  // pixel units -> [-1, 1]
    for (int y = 0; y < res; ++y) {
        for (int x = 0; x < res; ++x) {
            double r = 0, g = 0, b = 0;
            for (int sy = 0; sy < kSub; ++sy)
                for (int sx = 0; sx < kSub; ++sx) {
                    const double px = x + (sx + 0.5) / kSub;
                    const double py = y + (sy + 0.5) / kSub;
                    const double u = (px - res / 2.0) * inv;
                    const double v = (py - res / 2.0) * inv;
                    const Shaded sh = shade(family, f, u, v);
                    r += sh.color.r;
                    g += sh.color.g;
                    b += sh.color.b;
                }
            const double n = kSub * kSub;
            p[0 * plane + y * res + x] = static_cast<Real>(r / n);
            p[1 * plane + y * res + x] = static_cast<Real>(g / n);
            p[2 * plane + y * res + x] = static_cast<Real>(b / n);
        }
    }
    return img;
}

Tensor<uint8_t> render_mask(const std::string& family, const FactorVector& f, int res) {
    Tensor<uint8_t> mask({res, res});
    const double inv = 2.0 / res;
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            const double u = (x + 0.5 - res / 2.0) * inv;
            const double v = (y + 0.5 - res / 2.0) * inv;
            mask[y * res + x] = static_cast<uint8_t>(shade(family, f, u, v).region);
        }
    return mask;
}

FactorDataset gen_domain(const DomainSpec& spec, int64_t count, uint64_t seed) {
    if (spec.family != "roundface" && spec.family != "boxface" && spec.family != "scene")
        throw std::invalid_argument("unknown domain family: " + spec.family);
    FactorDataset ds;
    ds.domain_id = spec.family;
    ds.family = spec.family;
    ds.resolution = spec.resolution;
    ds.seed = seed;
    ds.regions = spec.family == "scene" ? scene_regions() : face_regions();
    ds.images.resize(static_cast<size_t>(count));
    ds.factors.resize(static_cast<size_t>(count));
    ds.masks.resize(static_cast<size_t>(count));
    // Per-index factor streams, so count extensions keep earlier samples.
    for (int64_t i = 0; i < count; ++i) {
        Rng rng = Rng::keyed(seed, {rng_tag::dataset, static_cast<uint64_t>(i)});
        FactorVector f;
        f.rotation = rng.uniform(-40.0, 40.0);
        f.hue = rng.uniform();
        for (auto& s : f.part_scale) s = rng.uniform(0.5, 1.5);
        f.texture_id = static_cast<int>(rng.below(4));
        f.shape_family = static_cast<int>(rng.below(2));
        ds.factors[static_cast<size_t>(i)] = f;
    }
    parallel_for(count, [&](int64_t i) {
        const auto& f = ds.factors[static_cast<size_t>(i)];
        ds.images[static_cast<size_t>(i)] = render_image(spec.family, f, spec.resolution);
        ds.masks[static_cast<size_t>(i)] = render_mask(spec.family, f, spec.resolution);
    });
    return ds;
}

Image transform_image(const Image& img, const std::string& transform, int k) {
    const int64_t H = img.height(), W = img.width();
    Image out{Tensor<Real>({3, H, W})};
    const Real bg[3] = {static_cast<Real>(kFaceBg.r), static_cast<Real>(kFaceBg.g),
                        static_cast<Real>(kFaceBg.b)};
    const Real* src = img.pixels.data();
    Real* dst = out.pixels.data();
    for (int c = 0; c < 3; ++c)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                int64_t sy = y, sx = x;
                bool inside = true;
                if (transform == "shift_right") {
                    sx = x - k;
                    inside = sx >= 0;
                } else if (transform == "shift_down") {
                    sy = y - k;
                    inside = sy >= 0;
                } else if (transform == "flip_updown") {
                    sy = H - 1 - y;
                } else {
                    throw std::invalid_argument("unknown transform: " + transform);
                }
                dst[(c * H + y) * W + x] =
                    inside ? src[(c * H + sy) * W + sx] : bg[c];
            }
    return out;
}

Tensor<uint8_t> transform_mask(const Tensor<uint8_t>& mask, const std::string& transform, int k) {
    const int64_t H = mask.dim(0), W = mask.dim(1);
    Tensor<uint8_t> out({H, W});
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            int64_t sy = y, sx = x;
            bool inside = true;
            if (transform == "shift_right") {
                sx = x - k;
                inside = sx >= 0;
            } else if (transform == "shift_down") {
                sy = y - k;
                inside = sy >= 0;
            } else if (transform == "flip_updown") {
                sy = H - 1 - y;
            } else {
                throw std::invalid_argument("unknown transform: " + transform);
            }
            out[y * W + x] = inside ? mask[sy * W + sx] : uint8_t(0);
        }
    return out;
}

FactorDataset transform_dataset(const FactorDataset& ds, const std::string& transform, int k) {
    if (transform != "shift_right" && transform != "shift_down" && transform != "flip_updown")
        throw std::invalid_argument("unknown transform: " + transform);
    if (k >= ds.resolution) throw std::invalid_argument("transform shift exceeds image width");
    FactorDataset out = ds;
    out.transform = transform;
    out.transform_k = k;
    out.domain_id = ds.domain_id + "+" + transform +
                    (transform == "flip_updown" ? "" : std::to_string(k));
    parallel_for(ds.size(), [&](int64_t i) {
        out.images[static_cast<size_t>(i)] = transform_image(ds.images[static_cast<size_t>(i)], transform, k);
        out.masks[static_cast<size_t>(i)] = transform_mask(ds.masks[static_cast<size_t>(i)], transform, k);
    });
    return out;
}

void save_dataset(const FactorDataset& ds, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");
    char name[32];
    for (int64_t i = 0; i < ds.size(); ++i) {
        std::snprintf(name, sizeof(name), "%05lld.png", static_cast<long long>(i));
        write_png((fs::path(dir) / "images" / name).string(), ds.images[static_cast<size_t>(i)]);
        write_mask_png((fs::path(dir) / "masks" / name).string(), ds.masks[static_cast<size_t>(i)]);
    }
    CsvWriter fcsv;
    fcsv.row({"index", "rotation", "hue", "scale_eyes", "scale_ears", "scale_body", "texture_id",
              "shape_family"});
    for (int64_t i = 0; i < ds.size(); ++i) {
        const auto& f = ds.factors[static_cast<size_t>(i)];
        fcsv.row({std::to_string(i), CsvWriter::num(f.rotation, 10), CsvWriter::num(f.hue, 10),
                  CsvWriter::num(f.part_scale[0], 10), CsvWriter::num(f.part_scale[1], 10),
                  CsvWriter::num(f.part_scale[2], 10), std::to_string(f.texture_id),
                  std::to_string(f.shape_family)});
    }
    fcsv.save((fs::path(dir) / "factors.csv").string());

    CsvWriter rcsv;
    rcsv.row({"region_id", "name"});
    for (size_t r = 0; r < ds.regions.size(); ++r)
        rcsv.row({std::to_string(r), ds.regions[r]});
    rcsv.save((fs::path(dir) / "regions.csv").string());

    std::ofstream mf(fs::path(dir) / "manifest.txt");
    mf << "domain_id = " << ds.domain_id << "\n"
       << "family = " << ds.family << "\n"
       << "resolution = " << ds.resolution << "\n"
       << "count = " << ds.size() << "\n"
       << "seed = " << ds.seed << "\n"
       << "transform = " << ds.transform << "\n"
       << "transform_k = " << ds.transform_k << "\n";
}

FactorDataset load_dataset(const std::string& dir) {
    Config mf = Config::parse_file((fs::path(dir) / "manifest.txt").string());
    FactorDataset ds;
    ds.domain_id = mf.get_string("domain_id", "");
    ds.family = mf.get_string("family", "");
    ds.resolution = static_cast<int>(mf.get_int("resolution", 32));
    ds.seed = mf.get_u64("seed", 0);
    ds.transform = mf.get_string("transform", "none");
    ds.transform_k = static_cast<int>(mf.get_int("transform_k", 0));
    const int64_t count = mf.get_int("count", 0);
    mf.finish();

    auto rrows = read_csv((fs::path(dir) / "regions.csv").string());
    for (size_t i = 1; i < rrows.size(); ++i) ds.regions.push_back(rrows[i][1]);

    auto frows = read_csv((fs::path(dir) / "factors.csv").string());
    char name[32];
    for (int64_t i = 0; i < count; ++i) {
        const auto& row = frows[static_cast<size_t>(i + 1)];
        FactorVector f;
        f.rotation = std::stod(row[1]);
        f.hue = std::stod(row[2]);
        f.part_scale = {std::stod(row[3]), std::stod(row[4]), std::stod(row[5])};
        f.texture_id = std::stoi(row[6]);
        f.shape_family = std::stoi(row[7]);
        ds.factors.push_back(f);
        std::snprintf(name, sizeof(name), "%05lld.png", static_cast<long long>(i));
        ds.images.push_back(read_png((fs::path(dir) / "images" / name).string()));
        ds.masks.push_back(read_mask_png((fs::path(dir) / "masks" / name).string()));
    }
    return ds;
}

} // namespace stylealign
