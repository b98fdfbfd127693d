#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "boulderseg/celm.hpp"
#include "boulderseg/common.hpp"
#include "boulderseg/datagen.hpp"
#include "boulderseg/tensor.hpp"

namespace bseg {

// Dataset container: <dir>/manifest.json + images/*.pgm + masks/*.pgm.
// Images are 8-bit binary PGM (P5, maxval 255); masks hold 0/255. Masks and
// CoB round-trip losslessly; images within 8-bit quantization.

// ---------------------------------------------------------------------------
// PGM
// ---------------------------------------------------------------------------

inline void write_pgm(const std::string& path, const Tensor& img, bool is_mask) {
    check_arg(img.rank() == 2, "write_pgm: image must be 2-D");
    std::ofstream os(path, std::ios::binary);
    check_data(os.good(), "cannot open for writing: " + path);
    os << "P5\n" << img.shape[1] << ' ' << img.shape[0] << "\n255\n";
    std::vector<unsigned char> bytes(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double v = img.data[i];
        bytes[i] = is_mask ? (v > 0.5 ? 255 : 0)
                           : static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    check_data(os.good(), "write failed: " + path);
}

inline Tensor read_pgm(const std::string& path, bool as_mask) {
    std::ifstream is(path, std::ios::binary);
    check_data(is.good(), "missing file: " + path);
    std::string magic;
    is >> magic;
    check_data(magic == "P5", path + ": not a binary PGM (want magic P5, got '" + magic + "')");
    std::size_t w = 0, h = 0;
    int maxval = 0;
    is >> w >> h >> maxval;
    check_data(is.good() && w > 0 && h > 0, path + ": malformed PGM header");
    check_data(maxval == 255, path + ": unsupported maxval " + std::to_string(maxval));
    is.get();  // the single whitespace after the header
    std::vector<unsigned char> bytes(w * h);
    is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    check_data(is.gcount() == static_cast<std::streamsize>(bytes.size()), path + ": truncated pixel data");
    Tensor img = Tensor::zeros({h, w});
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        img.data[i] = as_mask ? (bytes[i] >= 128 ? 1.0 : 0.0) : static_cast<double>(bytes[i]) / 255.0;
    }
    return img;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

namespace detail {

inline std::string sample_stem(std::size_t id) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05zu", id);
    return buf;
}

inline nlohmann::json split_to_json(const std::vector<std::size_t>& v) {
    nlohmann::json j = nlohmann::json::array();
    for (std::size_t i : v) j.push_back(i);
    return j;
}

inline std::vector<std::size_t> split_from_json(const nlohmann::json& j) {
    std::vector<std::size_t> v;
    for (const auto& e : j) v.push_back(e.get<std::size_t>());
    return v;
}

}  // namespace detail

inline void write_dataset(const Dataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");

    nlohmann::json manifest;
    manifest["schema_version"] = 1;
    manifest["mode"] = ds.mode == SceneMode::SingleBoulder ? "single_boulder" : "multi_boulder";
    nlohmann::json samples = nlohmann::json::array();
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const Sample& s = ds.samples[i];
        const std::string stem = detail::sample_stem(i);
        const std::string image_rel = "images/" + stem + ".pgm";
        const std::string mask_s_rel = "masks/" + stem + "_s.pgm";
        const std::string mask_u_rel = "masks/" + stem + "_u.pgm";
        write_pgm((fs::path(dir) / image_rel).string(), s.image, false);
        write_pgm((fs::path(dir) / mask_s_rel).string(), s.mask_shadowed, true);
        write_pgm((fs::path(dir) / mask_u_rel).string(), s.mask_unshadowed, true);

        nlohmann::json j;
        j["id"] = i;
        j["image"] = image_rel;
        j["mask_shadowed"] = mask_s_rel;
        j["mask_unshadowed"] = mask_u_rel;
        if (!s.mask_body.data.empty()) {
            const std::string mask_b_rel = "masks/" + stem + "_b.pgm";
            write_pgm((fs::path(dir) / mask_b_rel).string(), s.mask_body, true);
            j["mask_body"] = mask_b_rel;
        }
        if (s.cob) {
            j["cob"] = {s.cob->u, s.cob->v};
        } else {
            j["cob"] = nullptr;
        }
        j["meta"] = {{"seed", s.meta.seed},
                     {"phase_deg", s.meta.phase_deg},
                     {"phase_bucket", s.meta.phase_bucket},
                     {"n_boulders", s.meta.n_boulders}};
        samples.push_back(std::move(j));
    }
    manifest["samples"] = std::move(samples);
    manifest["splits"] = {{"tr", detail::split_to_json(ds.splits.tr)},
                          {"v", detail::split_to_json(ds.splits.v)},
                          {"te1", detail::split_to_json(ds.splits.te1)},
                          {"te2", detail::split_to_json(ds.splits.te2)}};

    std::ofstream os((fs::path(dir) / "manifest.json").string());
    check_data(os.good(), "cannot open for writing: " + dir + "/manifest.json");
    os << manifest.dump(1) << '\n';
    check_data(os.good(), "write failed: " + dir + "/manifest.json");
}

inline Dataset read_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
    std::ifstream is(manifest_path);
    check_data(is.good(), "missing file: " + manifest_path);
    std::stringstream buf;
    buf << is.rdbuf();
    const std::string text = buf.str();

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        // byte offset -> line number
        std::size_t line = 1;
        for (std::size_t i = 0; i < std::min(e.byte, text.size()); ++i) {
            if (text[i] == '\n') ++line;
        }
        throw DataError(manifest_path + ": parse error at line " + std::to_string(line) + ": " + e.what());
    }

    Dataset ds;
    try {
        check_data(manifest.at("schema_version").get<int>() == 1, manifest_path + ": unsupported schema version");
        ds.mode = manifest.at("mode").get<std::string>() == "multi_boulder" ? SceneMode::MultiBoulder
                                                                            : SceneMode::SingleBoulder;
        for (const auto& j : manifest.at("samples")) {
            Sample s;
            s.image = read_pgm((fs::path(dir) / j.at("image").get<std::string>()).string(), false);
            s.mask_shadowed = read_pgm((fs::path(dir) / j.at("mask_shadowed").get<std::string>()).string(), true);
            s.mask_unshadowed =
                read_pgm((fs::path(dir) / j.at("mask_unshadowed").get<std::string>()).string(), true);
            if (j.contains("mask_body") && !j.at("mask_body").is_null()) {
                s.mask_body = read_pgm((fs::path(dir) / j.at("mask_body").get<std::string>()).string(), true);
            }
            if (j.contains("cob") && !j.at("cob").is_null()) {
                s.cob = CoB{j.at("cob")[0].get<double>(), j.at("cob")[1].get<double>()};
            }
            if (j.contains("meta")) {
                const auto& m = j.at("meta");
                s.meta.seed = m.value("seed", std::uint64_t{0});
                s.meta.phase_deg = m.value("phase_deg", 0.0);
                s.meta.phase_bucket = m.value("phase_bucket", 0);
                s.meta.n_boulders = m.value("n_boulders", 0);
            }
            ds.samples.push_back(std::move(s));
        }
        if (manifest.contains("splits")) {
            const auto& sp = manifest.at("splits");
            ds.splits.tr = detail::split_from_json(sp.value("tr", nlohmann::json::array()));
            ds.splits.v = detail::split_from_json(sp.value("v", nlohmann::json::array()));
            ds.splits.te1 = detail::split_from_json(sp.value("te1", nlohmann::json::array()));
            ds.splits.te2 = detail::split_from_json(sp.value("te2", nlohmann::json::array()));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(manifest_path + ": invalid manifest: " + e.what());
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Batch conversion
// ---------------------------------------------------------------------------

// Images of the selected samples as an (N,H,W,1) batch tensor.
inline Tensor to_image_batch(const Dataset& ds, const std::vector<std::size_t>& idx) {
    check_data(!idx.empty(), "to_image_batch: empty selection");
    const std::size_t h = ds.samples[idx[0]].image.shape[0];
    const std::size_t w = ds.samples[idx[0]].image.shape[1];
    Tensor out = Tensor::zeros({idx.size(), h, w, 1});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const Sample& s = ds.samples[idx[r]];
        check_data(s.image.shape[0] == h && s.image.shape[1] == w, "to_image_batch: inconsistent image sizes");
        std::copy(s.image.data.begin(), s.image.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(r * h * w));
    }
    return out;
}

// Shadowed masks of the selected samples as an (N,H,W) class-index tensor.
inline Tensor to_mask_batch(const Dataset& ds, const std::vector<std::size_t>& idx) {
    check_data(!idx.empty(), "to_mask_batch: empty selection");
    const std::size_t h = ds.samples[idx[0]].mask_shadowed.shape[0];
    const std::size_t w = ds.samples[idx[0]].mask_shadowed.shape[1];
    Tensor out = Tensor::zeros({idx.size(), h, w});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const Tensor& m = ds.samples[idx[r]].mask_shadowed;
        std::copy(m.data.begin(), m.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(r * h * w));
    }
    return out;
}

// Regression view: images plus CoB targets normalized to [0,1] per axis.
// Errors are reported in pixels through scale_u/scale_v.
inline RegressionData to_regression_data(const Dataset& ds, const std::vector<std::size_t>& idx) {
    RegressionData d;
    d.images = to_image_batch(ds, idx);
    const double w = static_cast<double>(d.images.shape[2]);
    const double h = static_cast<double>(d.images.shape[1]);
    d.scale_u = w;
    d.scale_v = h;
    d.targets = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(idx.size()), 2);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const Sample& s = ds.samples[idx[r]];
        check_data(s.cob.has_value(), "to_regression_data: sample " + std::to_string(idx[r]) + " has no CoB label");
        d.targets(static_cast<Eigen::Index>(r), 0) = s.cob->u / w;
        d.targets(static_cast<Eigen::Index>(r), 1) = s.cob->v / h;
    }
    return d;
}

}  // namespace bseg
