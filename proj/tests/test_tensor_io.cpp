// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "sparsegrid/tensor_io.hpp"

using namespace sparsegrid;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    const fs::path dir = fs::temp_directory_path() / "sparsegrid_io_test";
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("tensor round trip is bit exact") {
    const fs::path path = temp_dir() / "roundtrip.tensor";
    const TokenGrid g =
        generate_grid({11, NoiseDistribution::standard_normal, NoiseCorrelation::iid}, GridDims{2, 2, 2, 4});
    write_tensor(g, path);
    const TokenGrid back = read_tensor(path);
    REQUIRE(back.dims == g.dims);
    REQUIRE(back.data == g.data);
}

TEST_CASE("tensor round trip over random dims") {
    const fs::path path = temp_dir() / "roundtrip_prop.tensor";
    SplitMix64 rng(5);
    for (int trial = 0; trial < 15; ++trial) {
        const GridDims dims{1 + static_cast<int64_t>(rng.next_u64() % 16), 1 + static_cast<int64_t>(rng.next_u64() % 16),
                            1 + static_cast<int64_t>(rng.next_u64() % 16), 1 + static_cast<int64_t>(rng.next_u64() % 16)};
        const TokenGrid g = generate_grid({rng.next_u64(), NoiseDistribution::standard_normal, NoiseCorrelation::iid},
                                          dims);
        write_tensor(g, path);
        const TokenGrid back = read_tensor(path);
        REQUIRE(back.dims == g.dims);
        REQUIRE(back.data == g.data);
    }
}

TEST_CASE("truncated payload is a corrupt-file error") {
    const fs::path path = temp_dir() / "truncated.tensor";
    const TokenGrid g =
        generate_grid({3, NoiseDistribution::standard_normal, NoiseCorrelation::iid}, GridDims{2, 2, 2, 4});
    write_tensor(g, path);
    fs::resize_file(path, fs::file_size(path) - 4);
    REQUIRE_THROWS_AS(read_tensor(path), CorruptFileError);
}

TEST_CASE("unsupported dtype is rejected") {
    const fs::path path = temp_dir() / "dtype.tensor";
    const TokenGrid g =
        generate_grid({3, NoiseDistribution::standard_normal, NoiseCorrelation::iid}, GridDims{1, 1, 1, 2});
    write_tensor(g, path);
    std::ofstream meta(sidecar_path(path));
    meta << R"({"dims":[1,1,1,2],"dtype":"f64","layout":"row-major-thwd","endianness":"little"})";
    meta.close();
    REQUIRE_THROWS_AS(read_tensor(path), UnsupportedFormatError);
}

TEST_CASE("missing sidecar is a corrupt-file error") {
    const fs::path path = temp_dir() / "nosidecar.tensor";
    std::ofstream(path) << "data";
    REQUIRE_THROWS_AS(read_tensor(path), CorruptFileError);
}

TEST_CASE("unknown sidecar field is rejected") {
    const fs::path path = temp_dir() / "extrafield.tensor";
    const TokenGrid g =
        generate_grid({3, NoiseDistribution::standard_normal, NoiseCorrelation::iid}, GridDims{1, 1, 1, 2});
    write_tensor(g, path);
    std::ofstream meta(sidecar_path(path));
    meta << R"({"dims":[1,1,1,2],"dtype":"f32","layout":"row-major-thwd","endianness":"little","extra":1})";
    meta.close();
    REQUIRE_THROWS_AS(read_tensor(path), ValidationError);
}
