// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparsegrid/errors.hpp"
#include "sparsegrid/token_grid.hpp"

namespace sparsegrid {

// On-disk tensor format: raw little-endian float32 payload at <path>, plus a
// JSON sidecar at <path>.json holding
//   {"dims":[T,H,W,d],"dtype":"f32","layout":"row-major-thwd","endianness":"little"}.
// write_tensor followed by read_tensor reproduces the grid bit-exactly.

inline std::filesystem::path sidecar_path(const std::filesystem::path& payload) {
    std::filesystem::path p = payload;
    p += ".json";
    return p;
}

inline void write_tensor(const TokenGrid& grid, const std::filesystem::path& path) {
    grid.dims.validate();
    {
        nlohmann::json meta;
        meta["dims"] = {grid.dims.t, grid.dims.h, grid.dims.w, grid.dims.d};
        meta["dtype"] = "f32";
        meta["layout"] = "row-major-thwd";
        meta["endianness"] = "little";
        std::ofstream out(sidecar_path(path));
        if (!out) throw Error("cannot open sidecar for writing: " + sidecar_path(path).string());
        out << meta.dump(2) << "\n";
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open payload for writing: " + path.string());
    std::vector<char> bytes(grid.data.size() * 4);
    for (size_t i = 0; i < grid.data.size(); ++i) {
        const uint32_t bits = std::bit_cast<uint32_t>(grid.data[i]);
        bytes[4 * i + 0] = static_cast<char>(bits & 0xFF);
        bytes[4 * i + 1] = static_cast<char>((bits >> 8) & 0xFF);
        bytes[4 * i + 2] = static_cast<char>((bits >> 16) & 0xFF);
        bytes[4 * i + 3] = static_cast<char>((bits >> 24) & 0xFF);
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to payload: " + path.string());
}

inline TokenGrid read_tensor(const std::filesystem::path& path) {
    std::ifstream meta_in(sidecar_path(path));
    if (!meta_in) throw CorruptFileError("missing sidecar: " + sidecar_path(path).string());
    nlohmann::json meta;
    try {
        meta_in >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw CorruptFileError("unparseable sidecar " + sidecar_path(path).string() + ": " + e.what());
    }
    if (!meta.is_object()) throw CorruptFileError("sidecar is not a JSON object");
    for (const auto& [key, _] : meta.items())
        if (key != "dims" && key != "dtype" && key != "layout" && key != "endianness")
            throw ValidationError("unknown sidecar field: " + key);
    for (const char* key : {"dims", "dtype", "layout", "endianness"})
        if (!meta.contains(key)) throw CorruptFileError(std::string("sidecar missing field: ") + key);

    if (meta["dtype"].get<std::string>() != "f32")
        throw UnsupportedFormatError("unsupported dtype: " + meta["dtype"].get<std::string>());
    if (meta["layout"].get<std::string>() != "row-major-thwd")
        throw UnsupportedFormatError("unsupported layout: " + meta["layout"].get<std::string>());
    if (meta["endianness"].get<std::string>() != "little")
        throw UnsupportedFormatError("unsupported endianness: " + meta["endianness"].get<std::string>());
    const auto& jd = meta["dims"];
    if (!jd.is_array() || jd.size() != 4) throw CorruptFileError("sidecar dims must be a 4-element array");
    GridDims dims{jd[0].get<int64_t>(), jd[1].get<int64_t>(), jd[2].get<int64_t>(), jd[3].get<int64_t>()};
    dims.validate();

    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorruptFileError("missing payload: " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const size_t expected = static_cast<size_t>(dims.values()) * 4;
    if (bytes.size() != expected)
        throw CorruptFileError("payload length " + std::to_string(bytes.size()) + " does not match dims (expected " +
                               std::to_string(expected) + " bytes)");

    TokenGrid grid(dims);
    for (size_t i = 0; i < grid.data.size(); ++i) {
        const uint32_t bits = (static_cast<uint32_t>(static_cast<unsigned char>(bytes[4 * i + 0]))) |
                              (static_cast<uint32_t>(static_cast<unsigned char>(bytes[4 * i + 1])) << 8) |
                              (static_cast<uint32_t>(static_cast<unsigned char>(bytes[4 * i + 2])) << 16) |
                              (static_cast<uint32_t>(static_cast<unsigned char>(bytes[4 * i + 3])) << 24);
        grid.data[i] = std::bit_cast<float>(bits);
        if (!std::isfinite(grid.data[i]))
            throw CorruptFileError("payload contains non-finite values: " + path.string());
    }
    return grid;
}

} // namespace sparsegrid
