// SPDX-FileCopyrightText: 2026 The scno authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "scno/pde.hpp"
#include "scno/rng.hpp"

namespace scno {

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BadMagicError : DatasetError {
  using DatasetError::DatasetError;
};
struct VersionError : DatasetError {
  using DatasetError::DatasetError;
};
struct TruncationError : DatasetError {
  using DatasetError::DatasetError;
};

/// Paired (u0, uT) samples on a fixed grid for one PDE family.
struct Dataset {
  PdeFamily family;
  GridSpec grid;
  std::string split;  // "train" | "test"
  std::uint64_t seed = 0;
  // samples[i] holds u0 (m floats) then uT (m floats)
  std::vector<std::vector<float>> u0;
  std::vector<std::vector<float>> uT;

  size_t size() const { return u0.size(); }
};

namespace datasetdetail {

constexpr char kMagic[4] = {'S', 'C', 'N', 'O'};
constexpr std::uint32_t kVersion = 1;

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& p) {
  std::filesystem::path s = p;
  s.replace_extension(".json");
  return s;
}

}  // namespace datasetdetail

inline nlohmann::json family_to_json(const PdeFamily& f) {
  return {{"tag", family_name(f.tag)}, {"c", f.c},         {"nu", f.nu},
          {"k_r", f.k_r},              {"D", f.D},         {"sigma_a", f.sigma_a},
          {"nu_sigma_f", f.nu_sigma_f}};
}

inline PdeFamily family_from_json(const nlohmann::json& j) {
  PdeFamily f;
  f.tag = parse_family(j.at("tag").get<std::string>());
  f.c = j.at("c");
  f.nu = j.at("nu");
  f.k_r = j.at("k_r");
  f.D = j.at("D");
  f.sigma_a = j.at("sigma_a");
  f.nu_sigma_f = j.at("nu_sigma_f");
  return f;
}

inline nlohmann::json grid_to_json(const GridSpec& g) {
  return {{"m", g.m},
          {"length", g.length},
          {"dt", g.dt},
          {"steps", g.steps},
          {"substep_multiplier", g.substep_multiplier}};
}

inline GridSpec grid_from_json(const nlohmann::json& j) {
  GridSpec g;
  g.m = j.at("m");
  g.length = j.at("length");
  g.dt = j.at("dt");
  g.steps = j.at("steps");
  g.substep_multiplier = j.value("substep_multiplier", 1);
  return g;
}

/// Binary layout: 16-byte header (magic "SCNO", version, m, sample count,
/// little-endian u32 each), then per sample u0 and uT as f32 arrays.
/// Metadata goes to a JSON sidecar with the same stem.
inline void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  using namespace datasetdetail;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DatasetError("cannot open for writing: " + path.string());
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, std::uint32_t(ds.grid.m));
  put_u32(os, std::uint32_t(ds.size()));
  for (size_t i = 0; i < ds.size(); ++i) {
    os.write(reinterpret_cast<const char*>(ds.u0[i].data()),
             std::streamsize(sizeof(float) * ds.u0[i].size()));
    os.write(reinterpret_cast<const char*>(ds.uT[i].data()),
             std::streamsize(sizeof(float) * ds.uT[i].size()));
  }
  if (!os) throw DatasetError("write failure: " + path.string());
  os.close();

  nlohmann::json meta = {{"family", family_to_json(ds.family)},
                         {"grid", grid_to_json(ds.grid)},
                         {"split", ds.split},
                         {"seed", ds.seed}};
  std::ofstream js(sidecar_path(path));
  if (!js) throw DatasetError("cannot write sidecar for: " + path.string());
  js << meta.dump(2) << "\n";
}

inline Dataset read_dataset(const std::filesystem::path& path) {
  using namespace datasetdetail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DatasetError("cannot open: " + path.string());
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(is)),
                                 std::istreambuf_iterator<char>());
  if (raw.size() < 16)
    throw TruncationError("truncated header in " + path.string() + ": expected 16 bytes, got " +
                          std::to_string(raw.size()));
  if (std::memcmp(raw.data(), kMagic, 4) != 0)
    throw BadMagicError("bad magic bytes in " + path.string());
  std::uint32_t version = get_u32(raw.data() + 4);
  if (version != kVersion)
    throw VersionError("unsupported dataset version " + std::to_string(version) +
                       " in " + path.string());
  std::uint32_t m = get_u32(raw.data() + 8);
  std::uint32_t count = get_u32(raw.data() + 12);
  size_t expected = 16 + size_t(count) * 2 * m * sizeof(float);
  if (raw.size() != expected)
    throw TruncationError("payload length mismatch in " + path.string() + ": expected " +
                          std::to_string(expected) + " bytes, got " +
                          std::to_string(raw.size()));

  Dataset ds;
  const unsigned char* p = raw.data() + 16;
  ds.u0.resize(count);
  ds.uT.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    ds.u0[i].resize(m);
    std::memcpy(ds.u0[i].data(), p, sizeof(float) * m);
    p += sizeof(float) * m;
    ds.uT[i].resize(m);
    std::memcpy(ds.uT[i].data(), p, sizeof(float) * m);
    p += sizeof(float) * m;
  }

  auto sp = sidecar_path(path);
  std::ifstream js(sp);
  if (!js) throw DatasetError("missing sidecar: " + sp.string());
  nlohmann::json meta = nlohmann::json::parse(js);
  ds.family = family_from_json(meta.at("family"));
  ds.grid = grid_from_json(meta.at("grid"));
  if (ds.grid.m != int(m))
    throw DatasetError("sidecar grid.m disagrees with binary header in " + path.string());
  ds.split = meta.at("split");
  ds.seed = meta.at("seed");
  return ds;
}

/// Deterministic dataset generation; train and test draw from disjoint
/// counter-derived substreams of the seed.
inline Dataset generate_split(const PdeFamily& fam, const GridSpec& grid, int n,
                              std::uint64_t seed, const std::string& split) {
  Dataset ds;
  ds.family = fam;
  ds.grid = grid;
  ds.split = split;
  ds.seed = seed;
  ds.u0.resize(n);
  ds.uT.resize(n);
  const std::uint64_t offset = split == "train" ? 0 : (std::uint64_t(1) << 32);
  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::substream(seed, offset + std::uint64_t(i));
    Vec u0 = sample_fourier_ic(rng, grid, fam);
    Vec uT = solve_pde(fam, u0, grid);
    ds.u0[i].resize(grid.m);
    ds.uT[i].resize(grid.m);
    for (int k = 0; k < grid.m; ++k) {
      ds.u0[i][k] = float(u0[k]);
      ds.uT[i][k] = float(uT[k]);
    }
  }
  return ds;
}

inline void generate_dataset(const PdeFamily& fam, const GridSpec& grid, int n_train,
                             int n_test, std::uint64_t seed,
                             const std::filesystem::path& train_path,
                             const std::filesystem::path& test_path) {
  if (n_train <= 0 || n_test <= 0)
    throw DatasetError("generate_dataset: sample counts must be positive");
  write_dataset(generate_split(fam, grid, n_train, seed, "train"), train_path);
  write_dataset(generate_split(fam, grid, n_test, seed, "test"), test_path);
}

}  // namespace scno
