#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "boulderseg/common.hpp"
#include "boulderseg/metrics.hpp"
#include "boulderseg/rng.hpp"
#include "boulderseg/tensor.hpp"

namespace bseg {

// Procedural stand-in for the rendered environments. Two scene modes:
//   single_boulder: one boulder on a quasi-spherical procedural terrain,
//     with CoB regression labels and masks with/without cast shadows.
//   multi_boulder: an ellipsoidal body against black background with a
//     scattered boulder population and a union mask.
// Shading is Lambertian with a small ambient term; cast shadows come from
// 2.5-D heightfield ray-marching toward the light.

constexpr int kPhaseBuckets = 6;

enum class SceneMode { SingleBoulder, MultiBoulder };

struct SceneConfig {
    SceneMode mode = SceneMode::SingleBoulder;
    std::size_t image_size = 256;
    int n_boulder_archetypes = 30;

    // multi mode population
    int min_boulders = 26;
    int max_boulders = 46;
    bool drop_limb_labels = false;

    // illumination: when vary_light is set, the per-sample obliquity (angle
    // from the view axis) is drawn from the range below with uniform azimuth;
    // otherwise light_direction is used as-is.
    bool vary_light = true;
    std::array<double, 3> light_direction = {0.0, 0.0, 1.0};
    double light_obliquity_lo_deg = 10.0;
    double light_obliquity_hi_deg = 62.0;

    // albedos
    double surface_albedo_lo = 0.30;
    double surface_albedo_hi = 0.65;
    double boulder_albedo_lo = 0.45;
    double boulder_albedo_hi = 0.95;

    // geometry, relative to image_size
    double terrain_relief = 0.035;      // heightfield amplitude
    double terrain_roughness = 0.55;    // octave amplitude falloff
    double boulder_radius_lo = 0.055;   // single-mode boulder radius
    double boulder_radius_hi = 0.135;
    double multi_radius_lo = 0.040;     // multi-mode boulder radius
    double multi_radius_hi = 0.105;

    double ambient = 0.06;
    std::uint64_t seed = 0;

    void validate() const {
        check_arg(image_size >= 8, "scene: image_size too small");
        check_arg(n_boulder_archetypes >= 1, "scene: need at least one archetype");
        check_arg(min_boulders >= 0 && max_boulders >= min_boulders, "scene: bad boulder count range");
        check_arg(light_obliquity_lo_deg <= light_obliquity_hi_deg, "scene: bad obliquity range");
        check_arg(light_obliquity_hi_deg < 90.0, "scene: light must stay above the horizon");
        check_arg(surface_albedo_lo <= surface_albedo_hi && boulder_albedo_lo <= boulder_albedo_hi,
                  "scene: albedo ranges must be ordered");
        check_arg(boulder_radius_lo <= boulder_radius_hi && multi_radius_lo <= multi_radius_hi,
                  "scene: radius ranges must be ordered");
        const double n2 = light_direction[0] * light_direction[0] + light_direction[1] * light_direction[1] +
                          light_direction[2] * light_direction[2];
        check_arg(std::abs(n2 - 1.0) < 1e-9, "scene: light direction must be a unit vector");
        check_arg(light_direction[2] > 0.0, "scene: light direction must point toward the camera side");
    }
};

struct SampleMeta {
    std::uint64_t seed = 0;
    double phase_deg = 0.0;  // angle between light and view axis
    int phase_bucket = 0;
    int n_boulders = 0;
};

struct Sample {
    Tensor image;            // (H,W) grayscale in [0,1]
    Tensor mask_shadowed;    // (H,W) 0/1; boulder labels nullified by shadows
    Tensor mask_unshadowed;  // (H,W) 0/1
    Tensor mask_body;        // (H,W) 0/1 body silhouette (multi mode only)
    std::optional<CoB> cob;
    SampleMeta meta;
};

struct SplitIndices {
    std::vector<std::size_t> tr, v, te1, te2;
    bool empty() const { return tr.empty() && v.empty() && te1.empty() && te2.empty(); }
};

struct Dataset {
    SceneMode mode = SceneMode::SingleBoulder;
    std::vector<Sample> samples;
    SplitIndices splits;

    std::size_t size() const { return samples.size(); }
    std::size_t height() const { return samples.empty() ? 0 : samples[0].image.shape[0]; }
    std::size_t width() const { return samples.empty() ? 0 : samples[0].image.shape[1]; }
};

// ---------------------------------------------------------------------------
// Scene building blocks
// ---------------------------------------------------------------------------

namespace scene {

// Multi-octave value noise on a seeded lattice, bilinear between nodes.
class ValueNoise {
public:
    ValueNoise(Rng& rng, int base_cells, int octaves, double falloff) : falloff_(falloff) {
        int cells = base_cells;
        for (int o = 0; o < octaves; ++o) {
            Lattice l;
            l.cells = cells;
            l.values.resize(static_cast<std::size_t>(cells + 1) * (cells + 1));
            for (double& v : l.values) v = rng.uniform(-1.0, 1.0);
            lattices_.push_back(std::move(l));
            cells *= 2;
        }
    }

    // u, v in [0,1]
    double at(double u, double v) const {
        double acc = 0.0, amp = 1.0, norm = 0.0;
        for (const auto& l : lattices_) {
            acc += amp * l.sample(u, v);
            norm += amp;
            amp *= falloff_;
        }
        return acc / norm;
    }

private:
    struct Lattice {
        int cells = 1;
        std::vector<double> values;
        double sample(double u, double v) const {
            const double x = std::clamp(u, 0.0, 1.0) * cells;
            const double y = std::clamp(v, 0.0, 1.0) * cells;
            const int x0 = std::min(static_cast<int>(x), cells - 1);
            const int y0 = std::min(static_cast<int>(y), cells - 1);
            const double fx = x - x0, fy = y - y0;
            auto val = [&](int xi, int yi) { return values[static_cast<std::size_t>(yi) * (cells + 1) + xi]; };
            const double a = val(x0, y0) * (1 - fx) + val(x0 + 1, y0) * fx;
            const double b = val(x0, y0 + 1) * (1 - fx) + val(x0 + 1, y0 + 1) * fx;
            return a * (1 - fy) + b * fy;
        }
    };
    std::vector<Lattice> lattices_;
    double falloff_;
};

// Star-convex boulder outline: radial modulation of an ellipse. The 30
// archetype shapes are derived from the dataset seed only, so every sample
// draws from the same shape pool.
struct Archetype {
    std::array<double, 5> amp{};    // harmonics 2..6
    std::array<double, 5> phase{};
    double elongation = 1.0;        // minor/major axis ratio
    double height_ratio = 0.7;      // peak height / mean radius

    static Archetype make(std::uint64_t dataset_seed, int index) {
        Rng r = Rng::stream(dataset_seed, "archetype", static_cast<std::uint64_t>(index));
        Archetype a;
        for (std::size_t m = 0; m < a.amp.size(); ++m) {
            a.amp[m] = r.uniform(-0.30, 0.30) / static_cast<double>(m + 2);
            a.phase[m] = r.uniform(0.0, 2.0 * M_PI);
        }
        a.elongation = r.uniform(0.62, 1.0);
        a.height_ratio = r.uniform(0.45, 0.85);
        return a;
    }

    double radius(double theta) const {
        double m = 1.0;
        for (std::size_t k = 0; k < amp.size(); ++k) {
            m += amp[k] * std::cos(static_cast<double>(k + 2) * theta + phase[k]);
        }
        return std::max(0.25, m);
    }
};

struct PlacedBoulder {
    Archetype shape;
    double cx = 0.0, cy = 0.0;  // pixel coordinates
    double scale = 1.0;         // mean radius in pixels
    double rotation = 0.0;
    double albedo = 0.7;
};

// Heights, albedo and label geometry for one scene, ready to be shaded under
// any light direction.
struct Geometry {
    std::size_t size = 0;
    std::vector<double> height;      // row-major S*S
    std::vector<double> albedo;
    std::vector<std::uint8_t> boulder;  // footprint labels
    std::vector<std::uint8_t> body;     // body silhouette (multi); all-ones for single mode

    double h(std::size_t x, std::size_t y) const { return height[y * size + x]; }

    double h_bilinear(double x, double y) const {
        const double cx = std::clamp(x, 0.0, static_cast<double>(size - 1));
        const double cy = std::clamp(y, 0.0, static_cast<double>(size - 1));
        const std::size_t x0 = std::min(static_cast<std::size_t>(cx), size - 2);
        const std::size_t y0 = std::min(static_cast<std::size_t>(cy), size - 2);
        const double fx = cx - static_cast<double>(x0), fy = cy - static_cast<double>(y0);
        const double a = h(x0, y0) * (1 - fx) + h(x0 + 1, y0) * fx;
        const double b = h(x0, y0 + 1) * (1 - fx) + h(x0 + 1, y0 + 1) * fx;
        return a * (1 - fy) + b * fy;
    }
};

inline void stamp_boulder(Geometry& g, const PlacedBoulder& b, bool clip_to_body) {
    const double s = static_cast<double>(g.size);
    const double reach = b.scale * 1.6;
    const long x_lo = std::max(0L, static_cast<long>(std::floor(b.cx - reach)));
    const long x_hi = std::min(static_cast<long>(g.size) - 1, static_cast<long>(std::ceil(b.cx + reach)));
    const long y_lo = std::max(0L, static_cast<long>(std::floor(b.cy - reach)));
    const long y_hi = std::min(static_cast<long>(g.size) - 1, static_cast<long>(std::ceil(b.cy + reach)));
    (void)s;
    for (long y = y_lo; y <= y_hi; ++y) {
        for (long x = x_lo; x <= x_hi; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * g.size + static_cast<std::size_t>(x);
            if (clip_to_body && !g.body[i]) continue;
            const double dx = static_cast<double>(x) - b.cx;
            const double dy = static_cast<double>(y) - b.cy;
            const double theta = std::atan2(dy, dx) - b.rotation;
            // elliptical distance with star-convex modulation
            const double ca = std::cos(b.rotation), sa = std::sin(b.rotation);
            const double ex = (dx * ca + dy * sa);
            const double ey = (-dx * sa + dy * ca) / b.shape.elongation;
            const double d = std::sqrt(ex * ex + ey * ey);
            const double rim = b.scale * b.shape.radius(theta);
            if (d >= rim) continue;
            const double rr = d / rim;
            const double z = b.shape.height_ratio * b.scale * std::sqrt(std::max(0.0, 1.0 - rr * rr));
            g.height[i] += z;
            g.boulder[i] = 1;
            g.albedo[i] = b.albedo;
        }
    }
}

// True when the surface point (x, y) sees the light: marches toward the
// light along the heightfield; a sample above the ray occludes. Vertical
// light never occludes. For a fixed scene this is monotone in obliquity:
// a more oblique ray sits lower at every sampled position.
inline bool lit(const Geometry& g, std::size_t x, std::size_t y, const std::array<double, 3>& light) {
    const double rho = std::hypot(light[0], light[1]);
    if (rho < 1e-12) return true;
    const double ux = light[0] / rho, uy = light[1] / rho;
    const double slope = light[2] / rho;  // height gained per horizontal pixel
    const double h0 = g.h(x, y);
    const double bias = 1e-6 + 0.02;
    const double hmax = *std::max_element(g.height.begin(), g.height.end());
    const double s = static_cast<double>(g.size);
    for (double t = 1.0; t < s; t += 1.0) {
        const double z = h0 + slope * t + bias;
        if (z > hmax) return true;
        const double px = static_cast<double>(x) + ux * t;
        const double py = static_cast<double>(y) + uy * t;
        if (px < 0.0 || py < 0.0 || px > s - 1.0 || py > s - 1.0) return true;
        if (g.h_bilinear(px, py) > z) return false;
    }
    return true;
}

struct Shaded {
    Tensor image;                 // (S,S)
    std::vector<std::uint8_t> lit_mask;
};

// Lambertian shading with an ambient floor; cast shadows drop the direct
// term. Pixels outside the body stay black.
inline Shaded shade(const Geometry& g, const std::array<double, 3>& light, double ambient) {
    const std::size_t s = g.size;
    Shaded out;
    out.image = Tensor::zeros({s, s});
    out.lit_mask.assign(s * s, 0);
    auto h_ext = [&](long x, long y, std::size_t fallback_i) -> double {
        if (x < 0 || y < 0 || x >= static_cast<long>(s) || y >= static_cast<long>(s)) return g.height[fallback_i];
        const std::size_t i = static_cast<std::size_t>(y) * s + static_cast<std::size_t>(x);
        return g.body[i] ? g.height[i] : g.height[fallback_i];  // flat extension across the limb
    };
    for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) {
            const std::size_t i = y * s + x;
            if (!g.body[i]) continue;
            const double gx = 0.5 * (h_ext(static_cast<long>(x) + 1, static_cast<long>(y), i) -
                                     h_ext(static_cast<long>(x) - 1, static_cast<long>(y), i));
            const double gy = 0.5 * (h_ext(static_cast<long>(x), static_cast<long>(y) + 1, i) -
                                     h_ext(static_cast<long>(x), static_cast<long>(y) - 1, i));
            const double inv = 1.0 / std::sqrt(gx * gx + gy * gy + 1.0);
            const double ndotl = std::max(0.0, (-gx * light[0] - gy * light[1] + light[2]) * inv);
            const bool is_lit = lit(g, x, y, light);
            out.lit_mask[i] = is_lit ? 1 : 0;
            const double direct = is_lit ? ndotl : 0.0;
            out.image.data[i] = std::clamp(g.albedo[i] * (ambient + (1.0 - ambient) * direct), 0.0, 1.0);
        }
    }
    return out;
}

inline std::array<double, 3> sample_light(const SceneConfig& cfg, Rng& rng, double& phase_deg) {
    if (!cfg.vary_light) {
        phase_deg = std::acos(std::clamp(cfg.light_direction[2], -1.0, 1.0)) * 180.0 / M_PI;
        return cfg.light_direction;
    }
    const double obliq = rng.uniform(cfg.light_obliquity_lo_deg, cfg.light_obliquity_hi_deg);
    const double az = rng.uniform(0.0, 2.0 * M_PI);
    phase_deg = obliq;
    const double a = obliq * M_PI / 180.0;
    return {std::sin(a) * std::cos(az), std::sin(a) * std::sin(az), std::cos(a)};
}

inline int phase_bucket(const SceneConfig& cfg, double phase_deg) {
    if (!cfg.vary_light || cfg.light_obliquity_hi_deg <= cfg.light_obliquity_lo_deg) return 0;
    const double f = (phase_deg - cfg.light_obliquity_lo_deg) /
                     (cfg.light_obliquity_hi_deg - cfg.light_obliquity_lo_deg);
    return std::clamp(static_cast<int>(f * kPhaseBuckets), 0, kPhaseBuckets - 1);
}

// Quasi-spherical procedural terrain plus one boulder near the frame centre
// (ideal attitude: the camera points at the boulder).
inline Geometry build_single_scene(const SceneConfig& cfg, Rng& rng, PlacedBoulder* placed = nullptr) {
    const std::size_t s = cfg.image_size;
    const double sd = static_cast<double>(s);
    Geometry g;
    g.size = s;
    g.height.assign(s * s, 0.0);
    g.albedo.assign(s * s, 0.5);
    g.boulder.assign(s * s, 0);
    g.body.assign(s * s, 1);

    ValueNoise relief(rng, 6, 4, cfg.terrain_roughness);
    ValueNoise albedo_noise(rng, 5, 3, 0.5);
    const double base_albedo = rng.uniform(cfg.surface_albedo_lo, cfg.surface_albedo_hi);
    const double relief_amp = cfg.terrain_relief * sd;
    const double dome_amp = 0.05 * sd;
    const double half = 0.5 * (sd - 1.0);
    for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) {
            const double u = static_cast<double>(x) / (sd - 1.0);
            const double v = static_cast<double>(y) / (sd - 1.0);
            const double rx = (static_cast<double>(x) - half) / (1.35 * half);
            const double ry = (static_cast<double>(y) - half) / (1.35 * half);
            const double dome = dome_amp * std::sqrt(std::max(0.0, 1.0 - rx * rx - ry * ry));
            g.height[y * s + x] = relief_amp * relief.at(u, v) + dome;
            g.albedo[y * s + x] = std::clamp(base_albedo + 0.12 * albedo_noise.at(u, v), 0.05, 0.95);
        }
    }

    PlacedBoulder b;
    b.shape = Archetype::make(cfg.seed, static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_boulder_archetypes))));
    b.scale = rng.uniform(cfg.boulder_radius_lo, cfg.boulder_radius_hi) * sd;
    b.cx = half + rng.uniform(-0.06, 0.06) * sd;
    b.cy = half + rng.uniform(-0.06, 0.06) * sd;
    b.rotation = rng.uniform(0.0, 2.0 * M_PI);
    b.albedo = rng.uniform(cfg.boulder_albedo_lo, cfg.boulder_albedo_hi);
    stamp_boulder(g, b, false);
    if (placed) *placed = b;
    return g;
}

// Ellipsoidal body against black background with a scattered population.
inline Geometry build_multi_scene(const SceneConfig& cfg, Rng& rng, int& n_boulders) {
    const std::size_t s = cfg.image_size;
    const double sd = static_cast<double>(s);
    Geometry g;
    g.size = s;
    g.height.assign(s * s, -1e9);
    g.albedo.assign(s * s, 0.0);
    g.boulder.assign(s * s, 0);
    g.body.assign(s * s, 0);

    const double half = 0.5 * (sd - 1.0);
    const double cx = half + rng.uniform(-0.04, 0.04) * sd;
    const double cy = half + rng.uniform(-0.04, 0.04) * sd;
    const double a = rng.uniform(0.30, 0.42) * sd;
    const double bb = rng.uniform(0.30, 0.42) * sd;
    const double psi = rng.uniform(0.0, M_PI);
    const double hb = 0.45 * std::min(a, bb);

    ValueNoise relief(rng, 6, 4, cfg.terrain_roughness);
    ValueNoise albedo_noise(rng, 5, 3, 0.5);
    const double base_albedo = rng.uniform(cfg.surface_albedo_lo, cfg.surface_albedo_hi);
    const double ca = std::cos(psi), sa = std::sin(psi);
    for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) {
            const double dx = static_cast<double>(x) - cx;
            const double dy = static_cast<double>(y) - cy;
            const double ex = (dx * ca + dy * sa) / a;
            const double ey = (-dx * sa + dy * ca) / bb;
            const double q2 = ex * ex + ey * ey;
            if (q2 >= 1.0) continue;
            const std::size_t i = y * s + x;
            g.body[i] = 1;
            const double u = static_cast<double>(x) / (sd - 1.0);
            const double v = static_cast<double>(y) / (sd - 1.0);
            g.height[i] = hb * std::sqrt(1.0 - q2) + cfg.terrain_relief * sd * 0.6 * relief.at(u, v);
            g.albedo[i] = std::clamp(base_albedo + 0.12 * albedo_noise.at(u, v), 0.05, 0.95);
        }
    }

    n_boulders = cfg.min_boulders +
                 static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_boulders - cfg.min_boulders + 1)));
    for (int k = 0; k < n_boulders; ++k) {
        PlacedBoulder b;
        b.shape = Archetype::make(cfg.seed,
                                  static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_boulder_archetypes))));
        b.scale = rng.uniform(cfg.multi_radius_lo, cfg.multi_radius_hi) * sd;
        // uniform over the ellipse, allowing limb-straddling placements
        const double rad = std::sqrt(rng.uniform());
        const double ang = rng.uniform(0.0, 2.0 * M_PI);
        const double lx = rad * std::cos(ang) * a;
        const double ly = rad * std::sin(ang) * bb;
        b.cx = cx + lx * ca - ly * sa;
        b.cy = cy + lx * sa + ly * ca;
        b.rotation = rng.uniform(0.0, 2.0 * M_PI);
        b.albedo = rng.uniform(cfg.boulder_albedo_lo, cfg.boulder_albedo_hi);
        stamp_boulder(g, b, true);
    }
    return g;
}

}  // namespace scene

// ---------------------------------------------------------------------------
// Sample generation
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor mask_from(const std::vector<std::uint8_t>& m, std::size_t s) {
    Tensor t = Tensor::zeros({s, s});
    for (std::size_t i = 0; i < m.size(); ++i) t.data[i] = m[i] ? 1.0 : 0.0;
    return t;
}

inline CoB mask_centroid(const Tensor& mask) {
    double su = 0.0, sv = 0.0, n = 0.0;
    const std::size_t h = mask.shape[0], w = mask.shape[1];
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            if (mask.data[y * w + x] > 0.5) {
                su += static_cast<double>(x);
                sv += static_cast<double>(y);
                n += 1.0;
            }
    check_arg(n > 0.0, "mask_centroid: empty mask");
    return {su / n, sv / n};
}

}  // namespace detail

// One single-boulder sample; resamples degenerate scenes (boulder shadowed
// away or outside the frame) up to 100 times.
inline Sample generate_single_sample(const SceneConfig& cfg, std::size_t index) {
    check_arg(cfg.mode == SceneMode::SingleBoulder, "generate_single: config mode mismatch");
    for (int attempt = 0; attempt < 100; ++attempt) {
        Rng rng = Rng::stream(cfg.seed, "datagen", index * 128 + static_cast<std::uint64_t>(attempt));
        double phase_deg = 0.0;
        const std::array<double, 3> light = scene::sample_light(cfg, rng, phase_deg);
        scene::PlacedBoulder placed;
        scene::Geometry g = scene::build_single_scene(cfg, rng, &placed);
        scene::Shaded sh = scene::shade(g, light, cfg.ambient);

        Sample s;
        s.image = std::move(sh.image);
        s.mask_unshadowed = detail::mask_from(g.boulder, g.size);
        std::vector<std::uint8_t> shadowed(g.size * g.size, 0);
        for (std::size_t i = 0; i < shadowed.size(); ++i) shadowed[i] = g.boulder[i] && sh.lit_mask[i];
        s.mask_shadowed = detail::mask_from(shadowed, g.size);

        double labeled = 0.0;
        for (double v : s.mask_shadowed.data) labeled += v;
        if (labeled < 4.0) continue;  // fully shadowed boulder: retry

        s.cob = detail::mask_centroid(s.mask_shadowed);
        s.meta.seed = cfg.seed;
        s.meta.phase_deg = phase_deg;
        s.meta.phase_bucket = scene::phase_bucket(cfg, phase_deg);
        s.meta.n_boulders = 1;
        return s;
    }
    throw DataError("generate_single: no valid scene after 100 attempts at index " + std::to_string(index));
}

inline Sample generate_multi_sample(const SceneConfig& cfg, std::size_t index) {
    check_arg(cfg.mode == SceneMode::MultiBoulder, "generate_multi: config mode mismatch");
    Rng rng = Rng::stream(cfg.seed, "datagen", index * 128);
    double phase_deg = 0.0;
    const std::array<double, 3> light = scene::sample_light(cfg, rng, phase_deg);
    int n_boulders = 0;
    scene::Geometry g = scene::build_multi_scene(cfg, rng, n_boulders);
    scene::Shaded sh = scene::shade(g, light, cfg.ambient);

    Sample s;
    s.image = std::move(sh.image);
    s.mask_unshadowed = detail::mask_from(g.boulder, g.size);
    std::vector<std::uint8_t> shadowed(g.size * g.size, 0);
    for (std::size_t i = 0; i < shadowed.size(); ++i) shadowed[i] = g.boulder[i] && sh.lit_mask[i];
    s.mask_shadowed = detail::mask_from(shadowed, g.size);
    s.mask_body = detail::mask_from(g.body, g.size);

    if (cfg.drop_limb_labels) {
        // remove labels 8-adjacent to background (off-body or off-frame)
        auto drop = [&](Tensor& mask) {
            Tensor out = mask;
            const long sz = static_cast<long>(g.size);
            for (long y = 0; y < sz; ++y) {
                for (long x = 0; x < sz; ++x) {
                    if (mask.data[static_cast<std::size_t>(y * sz + x)] < 0.5) continue;
                    bool edge = false;
                    for (long dy = -1; dy <= 1 && !edge; ++dy) {
                        for (long dx = -1; dx <= 1 && !edge; ++dx) {
                            if (dx == 0 && dy == 0) continue;
                            const long nx = x + dx, ny = y + dy;
                            if (nx < 0 || ny < 0 || nx >= sz || ny >= sz ||
                                !g.body[static_cast<std::size_t>(ny * sz + nx)]) {
                                edge = true;
                            }
                        }
                    }
                    if (edge) out.data[static_cast<std::size_t>(y * sz + x)] = 0.0;
                }
            }
            mask = std::move(out);
        };
        drop(s.mask_unshadowed);
        drop(s.mask_shadowed);
    }

    s.meta.seed = cfg.seed;
    s.meta.phase_deg = phase_deg;
    s.meta.phase_bucket = scene::phase_bucket(cfg, phase_deg);
    s.meta.n_boulders = n_boulders;
    return s;
}

// Deterministic per-index sub-streams make generation order-independent, so
// samples are produced in parallel.
inline Dataset generate(const SceneConfig& cfg, std::size_t n_samples, std::size_t jobs = 1) {
    cfg.validate();
    Dataset ds;
    ds.mode = cfg.mode;
    ds.samples.resize(n_samples);
    const std::size_t workers = std::max<std::size_t>(1, jobs);
    std::atomic<std::size_t> next{0};
    std::vector<std::string> errors(workers);
    auto work = [&](std::size_t w) {
        try {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n_samples) return;
                ds.samples[i] = cfg.mode == SceneMode::SingleBoulder ? generate_single_sample(cfg, i)
                                                                     : generate_multi_sample(cfg, i);
            }
        } catch (const std::exception& e) {
            errors[w] = e.what();
        }
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors) {
        if (!e.empty()) throw DataError("generate: " + e);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Post-processing: random crop + artificial noise
// ---------------------------------------------------------------------------

struct NoiseConfig {
    double gaussian_sigma = 0.01;
    bool blur3x3 = false;
};

// Crops image, masks and CoB identically (offset drawn so the boulder mask
// stays inside the crop), then adds Gaussian noise (and optional 3x3 blur)
// to the image only, re-clamped to [0,1].
inline Sample postprocess(const Sample& in, std::size_t crop_to, const NoiseConfig& noise, Rng& rng) {
    const std::size_t h = in.image.shape[0], w = in.image.shape[1];
    check_arg(crop_to >= 1 && crop_to <= h && crop_to <= w,
              "postprocess: crop size " + std::to_string(crop_to) + " exceeds image " + in.image.shape_str());

    Sample out;
    out.meta = in.meta;

    std::size_t ox = 0, oy = 0;
    if (crop_to < w || crop_to < h) {
        // keep every labeled pixel inside the crop when possible
        std::size_t x_lo = 0, x_hi = w - crop_to, y_lo = 0, y_hi = h - crop_to;
        double minx = 1e18, maxx = -1.0, miny = 1e18, maxy = -1.0;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                if (in.mask_unshadowed.data[y * w + x] > 0.5) {
                    minx = std::min(minx, static_cast<double>(x));
                    maxx = std::max(maxx, static_cast<double>(x));
                    miny = std::min(miny, static_cast<double>(y));
                    maxy = std::max(maxy, static_cast<double>(y));
                }
        if (maxx >= 0.0) {
            if (maxx >= static_cast<double>(crop_to)) x_lo = static_cast<std::size_t>(maxx) + 1 - crop_to;
            x_hi = std::min(x_hi, static_cast<std::size_t>(minx));
            if (maxy >= static_cast<double>(crop_to)) y_lo = static_cast<std::size_t>(maxy) + 1 - crop_to;
            y_hi = std::min(y_hi, static_cast<std::size_t>(miny));
            if (x_lo > x_hi) x_lo = x_hi;  // oversized mask: clamp, partial crop
            if (y_lo > y_hi) y_lo = y_hi;
        }
        ox = x_lo + rng.below(x_hi - x_lo + 1);
        oy = y_lo + rng.below(y_hi - y_lo + 1);
    }

    auto crop = [&](const Tensor& t) {
        if (t.data.empty()) return Tensor();
        Tensor c = Tensor::zeros({crop_to, crop_to});
        for (std::size_t y = 0; y < crop_to; ++y)
            for (std::size_t x = 0; x < crop_to; ++x) c.data[y * crop_to + x] = t.data[(y + oy) * w + (x + ox)];
        return c;
    };
    out.image = crop(in.image);
    out.mask_shadowed = crop(in.mask_shadowed);
    out.mask_unshadowed = crop(in.mask_unshadowed);
    out.mask_body = crop(in.mask_body);
    if (in.cob) {
        out.cob = CoB{in.cob->u - static_cast<double>(ox), in.cob->v - static_cast<double>(oy)};
    }

    if (noise.blur3x3) {
        Tensor blurred = out.image;
        const long sz = static_cast<long>(crop_to);
        for (long y = 0; y < sz; ++y)
            for (long x = 0; x < sz; ++x) {
                double acc = 0.0;
                int cnt = 0;
                for (long dy = -1; dy <= 1; ++dy)
                    for (long dx = -1; dx <= 1; ++dx) {
                        const long nx = x + dx, ny = y + dy;
                        if (nx < 0 || ny < 0 || nx >= sz || ny >= sz) continue;
                        acc += out.image.data[static_cast<std::size_t>(ny * sz + nx)];
                        ++cnt;
                    }
                blurred.data[static_cast<std::size_t>(y * sz + x)] = acc / cnt;
            }
        out.image = std::move(blurred);
    }
    if (noise.gaussian_sigma > 0.0) {
        for (double& v : out.image.data) v = std::clamp(v + noise.gaussian_sigma * rng.normal(), 0.0, 1.0);
    }
    return out;
}

inline void postprocess_dataset(Dataset& ds, std::size_t crop_to, const NoiseConfig& noise, std::uint64_t seed) {
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        Rng rng = Rng::stream(seed, "postprocess", i);
        ds.samples[i] = postprocess(ds.samples[i], crop_to, noise, rng);
    }
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

// Fractions of the dataset going to each split. Sizes are fractions rounded
// by largest remainder so they exhaust the dataset exactly.
struct SplitSpec {
    double tr = 0.70;
    double v = 0.10;
    double te1 = 0.10;
    double te2 = 0.10;
};

// Disjoint, exhaustive, seeded. Te1 is stratified over the phase buckets
// (balanced counts per bucket); Te2, V and Tr are drawn without
// stratification from the remainder.
inline SplitIndices split_dataset(const Dataset& ds, const SplitSpec& spec, std::uint64_t seed) {
    const std::size_t n = ds.size();
    check_data(n > 0, "split: empty dataset");
    const double fsum = spec.tr + spec.v + spec.te1 + spec.te2;
    check_arg(spec.tr >= 0 && spec.v >= 0 && spec.te1 >= 0 && spec.te2 >= 0 && std::abs(fsum - 1.0) < 1e-9,
              "split: fractions must be non-negative and sum to 1");

    // largest-remainder apportionment
    const std::array<double, 4> fr = {spec.tr, spec.v, spec.te1, spec.te2};
    std::array<std::size_t, 4> counts{};
    std::array<double, 4> rem{};
    std::size_t assigned = 0;
    for (int i = 0; i < 4; ++i) {
        const double exact = fr[static_cast<std::size_t>(i)] * static_cast<double>(n);
        counts[static_cast<std::size_t>(i)] = static_cast<std::size_t>(exact);
        rem[static_cast<std::size_t>(i)] = exact - std::floor(exact);
        assigned += counts[static_cast<std::size_t>(i)];
    }
    while (assigned < n) {
        int best = 0;
        for (int i = 1; i < 4; ++i)
            if (rem[static_cast<std::size_t>(i)] > rem[static_cast<std::size_t>(best)]) best = i;
        ++counts[static_cast<std::size_t>(best)];
        rem[static_cast<std::size_t>(best)] = -1.0;
        ++assigned;
    }

    // Te1: balanced over the phase buckets present in the data
    std::map<int, std::vector<std::size_t>> buckets;
    for (std::size_t i = 0; i < n; ++i) buckets[ds.samples[i].meta.phase_bucket].push_back(i);
    Rng rng = Rng::stream(seed, "split");
    for (auto& [b, idx] : buckets) rng.shuffle(idx);

    SplitIndices out;
    const std::size_t nb = buckets.size();
    std::vector<std::size_t> per_bucket(nb, counts[2] / nb);
    for (std::size_t i = 0; i < counts[2] % nb; ++i) ++per_bucket[i];
    std::vector<std::uint8_t> taken(n, 0);
    std::size_t bi = 0;
    for (auto& [b, idx] : buckets) {
        check_data(idx.size() >= per_bucket[bi],
                   "split: phase bucket " + std::to_string(b) + " has too few samples for a balanced Te1");
        for (std::size_t k = 0; k < per_bucket[bi]; ++k) {
            out.te1.push_back(idx[k]);
            taken[idx[k]] = 1;
        }
        ++bi;
    }

    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i)
        if (!taken[i]) rest.push_back(i);
    rng.shuffle(rest);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < counts[3]; ++k) out.te2.push_back(rest[pos++]);
    for (std::size_t k = 0; k < counts[1]; ++k) out.v.push_back(rest[pos++]);
    while (pos < rest.size()) out.tr.push_back(rest[pos++]);

    std::sort(out.tr.begin(), out.tr.end());
    std::sort(out.v.begin(), out.v.end());
    std::sort(out.te1.begin(), out.te1.end());
    std::sort(out.te2.begin(), out.te2.end());
    return out;
}

}  // namespace bseg
