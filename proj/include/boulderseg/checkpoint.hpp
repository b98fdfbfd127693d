#pragma once

#include <json.hpp>

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "boulderseg/common.hpp"
#include "boulderseg/model.hpp"
#include "boulderseg/unet.hpp"

namespace bseg {

// Checkpoint container: "BSCP" magic, format version, a JSON header with the
// architecture descriptor and the tensor directory, the raw little-endian
// 64-bit tensor payload, and a trailing CRC-32 over header + payload,
// verified on load. load(save(m)) reproduces every tensor bitwise and every
// frozen flag.

namespace detail {

inline std::uint32_t crc32(const unsigned char* data, std::size_t n, std::uint32_t crc = 0) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    crc ^= 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

constexpr char kMagic[4] = {'B', 'S', 'C', 'P'};
constexpr std::uint32_t kVersion = 1;

}  // namespace detail

struct CheckpointData {
    std::string kind;  // "celm" | "unet"
    nlohmann::json arch;
    ParamStore params;
};

inline void save_checkpoint(const std::string& path, const std::string& kind, const nlohmann::json& arch,
                            const ParamStore& params) {
    nlohmann::json header;
    header["kind"] = kind;
    header["arch"] = arch;
    nlohmann::json tensors = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& e : params.entries()) {
        tensors.push_back({{"name", e.name}, {"shape", e.value.shape}, {"frozen", e.frozen},
                           {"offset", offset}, {"count", e.value.size()}});
        offset += e.value.size();
    }
    header["tensors"] = std::move(tensors);
    const std::string htext = header.dump();

    std::ofstream os(path, std::ios::binary);
    check_data(os.good(), "cannot open for writing: " + path);
    os.write(detail::kMagic, 4);
    const std::uint32_t version = detail::kVersion;
    os.write(reinterpret_cast<const char*>(&version), 4);
    const std::uint64_t hlen = htext.size();
    os.write(reinterpret_cast<const char*>(&hlen), 8);
    os.write(htext.data(), static_cast<std::streamsize>(htext.size()));

    std::uint32_t crc = detail::crc32(reinterpret_cast<const unsigned char*>(htext.data()), htext.size());
    for (const auto& e : params.entries()) {
        const char* bytes = reinterpret_cast<const char*>(e.value.data.data());
        const std::size_t nbytes = e.value.size() * sizeof(double);
        os.write(bytes, static_cast<std::streamsize>(nbytes));
        crc = detail::crc32(reinterpret_cast<const unsigned char*>(bytes), nbytes, crc);
    }
    os.write(reinterpret_cast<const char*>(&crc), 4);
    check_data(os.good(), "write failed: " + path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check_data(is.good(), "missing file: " + path);

    char magic[4];
    std::uint32_t version = 0;
    std::uint64_t hlen = 0;
    is.read(magic, 4);
    is.read(reinterpret_cast<char*>(&version), 4);
    is.read(reinterpret_cast<char*>(&hlen), 8);
    check_data(is.good() && std::memcmp(magic, detail::kMagic, 4) == 0, path + ": not a checkpoint file");
    check_data(version == detail::kVersion, path + ": unsupported checkpoint version " + std::to_string(version));

    std::string htext(hlen, '\0');
    is.read(htext.data(), static_cast<std::streamsize>(hlen));
    check_data(is.good(), path + ": truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(htext);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(path + ": corrupt checkpoint header: " + e.what());
    }

    CheckpointData out;
    std::uint32_t crc = detail::crc32(reinterpret_cast<const unsigned char*>(htext.data()), htext.size());
    try {
        out.kind = header.at("kind").get<std::string>();
        out.arch = header.at("arch");
        for (const auto& t : header.at("tensors")) {
            const std::string name = t.at("name").get<std::string>();
            const std::vector<std::size_t> shape = t.at("shape").get<std::vector<std::size_t>>();
            const std::size_t count = t.at("count").get<std::size_t>();
            check_data(Tensor::numel(shape) == count, path + ": inconsistent shape for tensor " + name);
            Tensor v = Tensor::zeros(shape);
            is.read(reinterpret_cast<char*>(v.data.data()), static_cast<std::streamsize>(count * sizeof(double)));
            check_data(is.good(), path + ": truncated payload at tensor " + name);
            crc = detail::crc32(reinterpret_cast<const unsigned char*>(v.data.data()), count * sizeof(double), crc);
            out.params.add(name, std::move(v), t.at("frozen").get<bool>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": invalid checkpoint header: " + e.what());
    }
    std::uint32_t stored = 0;
    is.read(reinterpret_cast<char*>(&stored), 4);
    check_data(is.good(), path + ": missing checksum");
    check_data(stored == crc, path + ": checksum mismatch (file corrupt)");
    return out;
}

// ---------------------------------------------------------------------------
// Model adapters
// ---------------------------------------------------------------------------

inline nlohmann::json spec_to_json(const ArchSpec& s) {
    return {{"pooling", to_string(s.pooling)}, {"d0", s.d0},
            {"n_cells", s.n_cells},           {"activation", to_string(s.activation)},
            {"init", to_string(s.init)},      {"fc_neurons", s.fc_neurons},
            {"run_index", s.run_index}};
}

inline ArchSpec spec_from_json(const nlohmann::json& j) {
    ArchSpec s;
    s.pooling = pooling_from_string(j.at("pooling").get<std::string>());
    s.d0 = j.at("d0").get<int>();
    s.n_cells = j.at("n_cells").get<int>();
    s.activation = act_from_string(j.at("activation").get<std::string>());
    s.init = init_from_string(j.at("init").get<std::string>());
    s.fc_neurons = j.at("fc_neurons").get<int>();
    s.run_index = j.at("run_index").get<int>();
    return s;
}

inline void save_celm_checkpoint(const std::string& path, const CelmModel& m) {
    nlohmann::json arch;
    arch["spec"] = spec_to_json(m.spec);
    arch["input"] = {m.input_h, m.input_w, m.input_c};
    save_checkpoint(path, "celm", arch, m.params);
}

inline CelmModel load_celm_checkpoint(const std::string& path) {
    CheckpointData cp = load_checkpoint(path);
    check_data(cp.kind == "celm", path + ": expected a celm checkpoint, found kind '" + cp.kind + "'");
    CelmModel m;
    m.spec = spec_from_json(cp.arch.at("spec"));
    const auto input = cp.arch.at("input").get<std::vector<std::size_t>>();
    m.input_h = input[0];
    m.input_w = input[1];
    m.input_c = input[2];
    m.params = std::move(cp.params);
    return m;
}

inline void save_unet_checkpoint(const std::string& path, const UNetModel& u) {
    nlohmann::json arch;
    arch["spec"] = spec_to_json(u.enc_spec);
    arch["input"] = {u.input_h, u.input_w, u.input_c};
    arch["decoder_depths"] = u.decoder_depths;
    arch["decoder_act"] = to_string(u.decoder_act);
    save_checkpoint(path, "unet", arch, u.params);
}

inline UNetModel load_unet_checkpoint(const std::string& path) {
    CheckpointData cp = load_checkpoint(path);
    check_data(cp.kind == "unet", path + ": expected a unet checkpoint, found kind '" + cp.kind + "'");
    UNetModel u;
    u.enc_spec = spec_from_json(cp.arch.at("spec"));
    const auto input = cp.arch.at("input").get<std::vector<std::size_t>>();
    u.input_h = input[0];
    u.input_w = input[1];
    u.input_c = input[2];
    u.decoder_depths = cp.arch.at("decoder_depths").get<std::vector<std::size_t>>();
    u.decoder_act = act_from_string(cp.arch.at("decoder_act").get<std::string>());
    u.params = std::move(cp.params);
    return u;
}

// CRC of a file on disk, for determinism checks across runs.
inline std::uint32_t file_crc32(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check_data(is.good(), "missing file: " + path);
    std::uint32_t crc = 0;
    std::vector<unsigned char> buf(1 << 16);
    while (is) {
        is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        const std::streamsize got = is.gcount();
        if (got > 0) crc = detail::crc32(buf.data(), static_cast<std::size_t>(got), crc);
    }
    return crc;
}

}  // namespace bseg
