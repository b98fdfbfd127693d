#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "boulderseg/datagen.hpp"
#include "boulderseg/dataset_io.hpp"

using namespace bseg;
namespace fs = std::filesystem;

namespace {
SceneConfig desk_single(std::uint64_t seed = 1) {
    SceneConfig c;
    c.mode = SceneMode::SingleBoulder;
    c.image_size = 64;
    c.seed = seed;
    return c;
}

SceneConfig desk_multi(std::uint64_t seed = 1) {
    SceneConfig c;
    c.mode = SceneMode::MultiBoulder;
    c.image_size = 64;
    c.seed = seed;
    return c;
}

std::string tmp_dir(const std::string& name) {
    const fs::path p = fs::path("test_tmp") / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

double mask_sum(const Tensor& m) {
    double s = 0.0;
    for (double v : m.data) s += v;
    return s;
}
}  // namespace

TEST_CASE("generation is bitwise deterministic and parallelism independent") {
    SceneConfig cfg = desk_single(42);
    Dataset a = generate(cfg, 6, 1);
    Dataset b = generate(cfg, 6, 2);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.samples[i].image.data == b.samples[i].image.data);
        CHECK(a.samples[i].mask_shadowed.data == b.samples[i].mask_shadowed.data);
        CHECK(a.samples[i].cob->u == b.samples[i].cob->u);
        CHECK(a.samples[i].cob->v == b.samples[i].cob->v);
    }
    Dataset c = generate(desk_single(43), 6, 1);
    CHECK(a.samples[0].image.data != c.samples[0].image.data);
}

TEST_CASE("light at zenith casts no shadows") {
    SceneConfig cfg = desk_single(7);
    cfg.vary_light = false;
    cfg.light_direction = {0.0, 0.0, 1.0};
    Dataset ds = generate(cfg, 4);
    for (const auto& s : ds.samples) {
        CHECK(s.mask_shadowed.data == s.mask_unshadowed.data);
    }
}

TEST_CASE("shadowed labels are a subset of unshadowed labels") {
    Dataset ds = generate(desk_single(11), 12, 2);
    bool any_shadowing = false;
    for (const auto& s : ds.samples) {
        for (std::size_t i = 0; i < s.mask_shadowed.size(); ++i) {
            if (s.mask_shadowed.data[i] > 0.5) CHECK(s.mask_unshadowed.data[i] > 0.5);
        }
        if (mask_sum(s.mask_shadowed) < mask_sum(s.mask_unshadowed)) any_shadowing = true;
    }
    CHECK(any_shadowing);  // oblique lights do produce shadowed labels
}

TEST_CASE("CoB equals the shadowed-mask centroid") {
    Dataset ds = generate(desk_single(13), 30, 2);
    for (const auto& s : ds.samples) {
        REQUIRE(s.cob.has_value());
        double su = 0.0, sv = 0.0, n = 0.0;
        const std::size_t w = s.mask_shadowed.shape[1];
        for (std::size_t y = 0; y < s.mask_shadowed.shape[0]; ++y)
            for (std::size_t x = 0; x < w; ++x)
                if (s.mask_shadowed.data[y * w + x] > 0.5) {
                    su += static_cast<double>(x);
                    sv += static_cast<double>(y);
                    n += 1.0;
                }
        CHECK(std::abs(s.cob->u - su / n) < 1e-9);
        CHECK(std::abs(s.cob->v - sv / n) < 1e-9);
        CHECK(s.cob->u >= 0.0);
        CHECK(s.cob->u < 64.0);
    }
}

TEST_CASE("more oblique light never grows the shadowed mask") {
    SceneConfig cfg = desk_single(17);
    Rng rng = Rng::stream(cfg.seed, "datagen", 0);
    double unused = 0.0;
    (void)scene::sample_light(cfg, rng, unused);
    scene::Geometry g = scene::build_single_scene(cfg, rng);

    double prev = 1e18;
    for (double deg : {5.0, 20.0, 35.0, 50.0, 65.0, 75.0}) {
        const double a = deg * M_PI / 180.0;
        const std::array<double, 3> light = {std::sin(a), 0.0, std::cos(a)};
        scene::Shaded sh = scene::shade(g, light, cfg.ambient);
        double labeled = 0.0;
        for (std::size_t i = 0; i < sh.lit_mask.size(); ++i)
            if (g.boulder[i] && sh.lit_mask[i]) labeled += 1.0;
        CHECK(labeled <= prev);
        prev = labeled;
    }
}

TEST_CASE("multi mode: zero boulders give an empty mask") {
    SceneConfig cfg = desk_multi(19);
    cfg.min_boulders = 0;
    cfg.max_boulders = 0;
    Dataset ds = generate(cfg, 2);
    for (const auto& s : ds.samples) {
        CHECK(mask_sum(s.mask_unshadowed) == 0.0);
        CHECK_FALSE(s.cob.has_value());
        CHECK(mask_sum(s.mask_body) > 0.0);
    }
}

TEST_CASE("multi mode boulder pixel fraction lands in the configured band") {
    Dataset ds = generate(desk_multi(23), 40, 2);
    double labeled = 0.0, total = 0.0;
    for (const auto& s : ds.samples) {
        labeled += mask_sum(s.mask_shadowed);
        total += static_cast<double>(s.mask_shadowed.size());
    }
    const double frac = labeled / total;
    CHECK(frac > 0.20);
    CHECK(frac < 0.35);
}

TEST_CASE("drop_limb_labels removes labels touching the background") {
    SceneConfig cfg = desk_multi(29);
    cfg.drop_limb_labels = true;
    Dataset ds = generate(cfg, 6, 2);
    for (const auto& s : ds.samples) {
        const long sz = static_cast<long>(s.mask_shadowed.shape[0]);
        for (long y = 0; y < sz; ++y)
            for (long x = 0; x < sz; ++x) {
                if (s.mask_shadowed.data[static_cast<std::size_t>(y * sz + x)] < 0.5) continue;
                for (long dy = -1; dy <= 1; ++dy)
                    for (long dx = -1; dx <= 1; ++dx) {
                        const long nx = x + dx, ny = y + dy;
                        const bool background =
                            nx < 0 || ny < 0 || nx >= sz || ny >= sz ||
                            s.mask_body.data[static_cast<std::size_t>(ny * sz + nx)] < 0.5;
                        CHECK_FALSE(background);
                    }
            }
    }
    // without the flag, limb-adjacent labels do occur
    SceneConfig raw = desk_multi(29);
    Dataset ds2 = generate(raw, 6, 2);
    bool any_limb = false;
    for (const auto& s : ds2.samples) {
        const long sz = static_cast<long>(s.mask_shadowed.shape[0]);
        for (long y = 0; y < sz && !any_limb; ++y)
            for (long x = 0; x < sz && !any_limb; ++x) {
                if (s.mask_unshadowed.data[static_cast<std::size_t>(y * sz + x)] < 0.5) continue;
                for (long dy = -1; dy <= 1 && !any_limb; ++dy)
                    for (long dx = -1; dx <= 1 && !any_limb; ++dx) {
                        const long nx = x + dx, ny = y + dy;
                        if (nx < 0 || ny < 0 || nx >= sz || ny >= sz ||
                            s.mask_body.data[static_cast<std::size_t>(ny * sz + nx)] < 0.5)
                            any_limb = true;
                    }
            }
    }
    CHECK(any_limb);
}

TEST_CASE("postprocess: full-size crop with zero noise is the identity") {
    Dataset ds = generate(desk_single(31), 2);
    Rng rng(1);
    Sample out = postprocess(ds.samples[0], 64, {0.0, false}, rng);
    CHECK(out.image.data == ds.samples[0].image.data);
    CHECK(out.mask_shadowed.data == ds.samples[0].mask_shadowed.data);
    CHECK(out.cob->u == ds.samples[0].cob->u);
    CHECK(out.cob->v == ds.samples[0].cob->v);

    Rng rng2(2);
    CHECK_THROWS_AS(postprocess(ds.samples[0], 128, {0.0, false}, rng2), std::invalid_argument);
}

TEST_CASE("postprocess crop shifts CoB by exactly the negative offset") {
    Dataset ds = generate(desk_single(37), 6);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const Sample& in = ds.samples[i];
        Rng rng(100 + i);
        Sample out = postprocess(in, 48, {0.0, false}, rng);
        REQUIRE(out.image.shape == std::vector<std::size_t>{48, 48});
        // recover the offset by matching the first labeled pixel
        auto first_labeled = [](const Tensor& m) {
            for (std::size_t p = 0; p < m.size(); ++p)
                if (m.data[p] > 0.5) return std::make_pair(p % m.shape[1], p / m.shape[1]);
            return std::make_pair(std::size_t(0), std::size_t(0));
        };
        auto [ix, iy] = first_labeled(in.mask_shadowed);
        auto [ox, oy] = first_labeled(out.mask_shadowed);
        const double off_x = static_cast<double>(ix) - static_cast<double>(ox);
        const double off_y = static_cast<double>(iy) - static_cast<double>(oy);
        CHECK(out.cob->u == in.cob->u - off_x);
        CHECK(out.cob->v == in.cob->v - off_y);
        // the whole boulder survived the crop
        CHECK(mask_sum(out.mask_unshadowed) == mask_sum(in.mask_unshadowed));
    }
}

TEST_CASE("postprocess noise matches the configured sigma within 10 percent") {
    Sample s;
    s.image = Tensor::full({1000, 1000}, 0.5);
    s.mask_shadowed = Tensor::zeros({1000, 1000});
    s.mask_unshadowed = Tensor::zeros({1000, 1000});
    Rng rng(5);
    Sample out = postprocess(s, 1000, {0.02, false}, rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < out.image.size(); ++i) {
        const double d = out.image.data[i] - 0.5;
        acc += d * d;
    }
    const double sd = std::sqrt(acc / static_cast<double>(out.image.size()));
    CHECK(sd > 0.018);
    CHECK(sd < 0.022);
}

TEST_CASE("split: fractions land exactly and partitions are disjoint and exhaustive") {
    Dataset ds;
    ds.samples.resize(1000);
    Rng r(3);
    for (auto& s : ds.samples) s.meta.phase_bucket = static_cast<int>(r.below(kPhaseBuckets));
    SplitIndices sp = split_dataset(ds, {0.6, 0.1, 0.15, 0.15}, 9);
    CHECK(sp.tr.size() == 600);
    CHECK(sp.v.size() == 100);
    CHECK(sp.te1.size() == 150);
    CHECK(sp.te2.size() == 150);

    std::vector<int> seen(1000, 0);
    for (auto* v : {&sp.tr, &sp.v, &sp.te1, &sp.te2}) {
        for (std::size_t i : *v) seen[i]++;
    }
    for (int c : seen) CHECK(c == 1);

    // Te1 balanced within 10% per bucket
    std::map<int, int> per_bucket;
    for (std::size_t i : sp.te1) per_bucket[ds.samples[i].meta.phase_bucket]++;
    for (const auto& [b, cnt] : per_bucket) {
        CHECK(std::abs(cnt - 25) <= 2);  // 150 / 6 buckets = 25, < 10%
    }

    // deterministic
    SplitIndices sp2 = split_dataset(ds, {0.6, 0.1, 0.15, 0.15}, 9);
    CHECK(sp.te1 == sp2.te1);
    CHECK(sp.tr == sp2.tr);
    // different seed, different draw
    SplitIndices sp3 = split_dataset(ds, {0.6, 0.1, 0.15, 0.15}, 10);
    CHECK(sp.tr != sp3.tr);
}

TEST_CASE("pgm round trip: masks bitwise, images 8-bit idempotent") {
    const std::string dir = tmp_dir("pgm");
    Dataset ds = generate(desk_single(41), 3);
    const std::string p = dir + "/img.pgm";
    write_pgm(p, ds.samples[0].image, false);
    Tensor r1 = read_pgm(p, false);
    write_pgm(p, r1, false);
    Tensor r2 = read_pgm(p, false);
    CHECK(r1.data == r2.data);  // quantization is idempotent
    for (std::size_t i = 0; i < r1.size(); ++i) {
        CHECK(std::abs(r1.data[i] - ds.samples[0].image.data[i]) <= 0.5 / 255.0 + 1e-12);
    }

    const std::string mp = dir + "/mask.pgm";
    write_pgm(mp, ds.samples[0].mask_shadowed, true);
    Tensor m = read_pgm(mp, true);
    CHECK(m.data == ds.samples[0].mask_shadowed.data);

    // exact header bytes
    std::ifstream is(p, std::ios::binary);
    std::string head(9, '\0');
    is.read(head.data(), 9);
    CHECK(head == "P5\n64 64\n");

    CHECK_THROWS_AS(read_pgm(dir + "/nope.pgm", false), DataError);
}

TEST_CASE("dataset round trip is lossless for masks, CoB and splits") {
    const std::string dir = tmp_dir("roundtrip");
    SceneConfig cfg = desk_single(43);
    Dataset ds = generate(cfg, 8, 2);
    ds.splits = split_dataset(ds, {0.5, 0.25, 0.125, 0.125}, 4);
    write_dataset(ds, dir);
    Dataset rd = read_dataset(dir);
    REQUIRE(rd.size() == ds.size());
    CHECK(rd.mode == ds.mode);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(rd.samples[i].mask_shadowed.data == ds.samples[i].mask_shadowed.data);
        CHECK(rd.samples[i].mask_unshadowed.data == ds.samples[i].mask_unshadowed.data);
        CHECK(rd.samples[i].cob->u == ds.samples[i].cob->u);  // bitwise via JSON round trip
        CHECK(rd.samples[i].cob->v == ds.samples[i].cob->v);
        CHECK(rd.samples[i].meta.phase_bucket == ds.samples[i].meta.phase_bucket);
        CHECK(rd.samples[i].meta.phase_deg == ds.samples[i].meta.phase_deg);
    }
    CHECK(rd.splits.tr == ds.splits.tr);
    CHECK(rd.splits.te1 == ds.splits.te1);
}

TEST_CASE("hand-built two-sample fixture loads, including absent CoB") {
    const std::string dir = tmp_dir("fixture");
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");
    Tensor img = Tensor::full({4, 4}, 0.25);
    Tensor mask = Tensor::zeros({4, 4});
    mask.data[5] = 1.0;
    for (int i = 0; i < 2; ++i) {
        write_pgm(dir + "/images/0000" + std::to_string(i) + ".pgm", img, false);
        write_pgm(dir + "/masks/0000" + std::to_string(i) + "_s.pgm", mask, true);
        write_pgm(dir + "/masks/0000" + std::to_string(i) + "_u.pgm", mask, true);
    }
    std::ofstream os(dir + "/manifest.json");
    os << R"({"schema_version":1,"mode":"single_boulder","samples":[
      {"id":0,"image":"images/00000.pgm","mask_shadowed":"masks/00000_s.pgm",
       "mask_unshadowed":"masks/00000_u.pgm","cob":[1.0,1.0],
       "meta":{"seed":5,"phase_deg":30.5,"phase_bucket":2,"n_boulders":1}},
      {"id":1,"image":"images/00001.pgm","mask_shadowed":"masks/00001_s.pgm",
       "mask_unshadowed":"masks/00001_u.pgm","cob":null,
       "meta":{"seed":5,"phase_deg":10.0,"phase_bucket":0,"n_boulders":3}}]})";
    os.close();

    Dataset ds = read_dataset(dir);
    REQUIRE(ds.size() == 2);
    CHECK(ds.samples[0].cob.has_value());
    CHECK(ds.samples[0].cob->u == 1.0);
    CHECK(ds.samples[0].meta.phase_deg == 30.5);
    CHECK(ds.samples[0].meta.phase_bucket == 2);
    CHECK_FALSE(ds.samples[1].cob.has_value());  // DS3-style import: no CoB
    CHECK(ds.samples[1].meta.n_boulders == 3);

    // malformed manifest reports a line number
    std::ofstream bad(dir + "/manifest.json");
    bad << "{\n\"schema_version\": 1,\n\"mode\": oops\n}";
    bad.close();
    try {
        read_dataset(dir);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
}

TEST_CASE("regression view normalizes targets and rejects missing CoB") {
    Dataset ds = generate(desk_single(47), 4);
    RegressionData rd = to_regression_data(ds, {0, 1, 2, 3});
    REQUIRE(rd.targets.rows() == 4);
    CHECK(rd.scale_u == 64.0);
    for (Eigen::Index i = 0; i < 4; ++i) {
        CHECK(rd.targets(i, 0) >= 0.0);
        CHECK(rd.targets(i, 0) < 1.0);
        CHECK(rd.targets(i, 0) * 64.0 == ds.samples[static_cast<std::size_t>(i)].cob->u);
    }
    ds.samples[1].cob.reset();
    CHECK_THROWS_AS(to_regression_data(ds, {0, 1}), DataError);
}
