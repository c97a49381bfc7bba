// SPDX-FileCopyrightText: 2026 The scno authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "scno/composition.hpp"
#include "scno/models.hpp"
#include "scno/params.hpp"

namespace scno {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace ckptdetail {

constexpr char kMagic[4] = {'S', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

inline nlohmann::json manifest_entries(ParamSet<F>& ps) {
  nlohmann::json entries = nlohmann::json::array();
  for (auto* p : ps.params)
    entries.push_back({{"name", p->name},
                       {"rows", p->var.rows()},
                       {"cols", p->var.cols()},
                       {"kind", "param"},
                       {"trainable", p->trainable}});
  for (auto& b : ps.buffers)
    entries.push_back({{"name", b.name},
                       {"rows", b.data->rows()},
                       {"cols", b.data->cols()},
                       {"kind", "buffer"},
                       {"trainable", false}});
  return entries;
}

inline void write_payload(std::ostream& os, ParamSet<F>& ps) {
  for (auto* p : ps.params)
    os.write(reinterpret_cast<const char*>(p->var.value().data()),
             std::streamsize(sizeof(float) * p->var.size()));
  for (auto& b : ps.buffers)
    os.write(reinterpret_cast<const char*>(b.data->data()),
             std::streamsize(sizeof(float) * b.data->size()));
}

inline void save(const std::filesystem::path& path, const nlohmann::json& manifest,
                 ParamSet<F>& ps) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open for writing: " + path.string());
  std::string mstr = manifest.dump();
  std::uint64_t mlen = mstr.size();
  os.write(kMagic, 4);
  std::uint32_t v = kVersion;
  os.write(reinterpret_cast<const char*>(&v), 4);
  os.write(reinterpret_cast<const char*>(&mlen), 8);
  os.write(mstr.data(), std::streamsize(mlen));
  write_payload(os, ps);
  if (!os) throw CheckpointError("write failure: " + path.string());
}

struct Loaded {
  nlohmann::json manifest;
  std::vector<float> payload;
};

inline Loaded read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw CheckpointError("bad checkpoint magic in " + path.string());
  std::uint32_t version = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  if (version != kVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  std::uint64_t mlen = 0;
  is.read(reinterpret_cast<char*>(&mlen), 8);
  std::string mstr(mlen, '\0');
  is.read(mstr.data(), std::streamsize(mlen));
  if (!is) throw CheckpointError("truncated manifest in " + path.string());
  Loaded l;
  l.manifest = nlohmann::json::parse(mstr);
  std::vector<char> rest((std::istreambuf_iterator<char>(is)),
                         std::istreambuf_iterator<char>());
  if (rest.size() % sizeof(float) != 0)
    throw CheckpointError("payload size not a multiple of 4 in " + path.string());
  l.payload.resize(rest.size() / sizeof(float));
  std::memcpy(l.payload.data(), rest.data(), rest.size());
  return l;
}

/// Fills a model's parameter set from a loaded checkpoint, validating the
/// manifest entry-by-entry against the freshly constructed model.
inline void fill(ParamSet<F>& ps, const Loaded& l, const std::string& where) {
  const auto& entries = l.manifest.at("entries");
  size_t n_expected = ps.params.size() + ps.buffers.size();
  if (entries.size() != n_expected)
    throw CheckpointError(where + ": manifest entry count mismatch");
  size_t offset = 0;
  size_t idx = 0;
  auto take = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols,
                  float* dst) {
    const auto& e = entries.at(idx++);
    if (e.at("name") != name)
      throw CheckpointError(where + ": parameter name mismatch, expected '" + name +
                            "', manifest has '" + e.at("name").get<std::string>() + "'");
    if (e.at("rows") != rows || e.at("cols") != cols)
      throw CheckpointError(where + ": shape mismatch for '" + name + "'");
    size_t n = size_t(rows) * size_t(cols);
    if (offset + n > l.payload.size())
      throw CheckpointError(where + ": payload too short for '" + name + "'");
    std::memcpy(dst, l.payload.data() + offset, sizeof(float) * n);
    offset += n;
  };
  for (auto* p : ps.params) {
    take(p->name, p->var.rows(), p->var.cols(), p->var.mutable_value().data());
    p->trainable = entries.at(idx - 1).at("trainable");
    p->var.set_requires_grad(p->trainable);
  }
  for (auto& b : ps.buffers) take(b.name, b.data->rows(), b.data->cols(), b.data->data());
  if (offset != l.payload.size())
    throw CheckpointError(where + ": trailing payload bytes");
}

inline void check_kind(const Loaded& l, const std::string& kind,
                       const std::string& where) {
  std::string k = l.manifest.at("kind");
  if (k != kind)
    throw CheckpointError(where + ": checkpoint kind mismatch, expected '" + kind +
                          "', file has '" + k + "'");
}

}  // namespace ckptdetail

inline nlohmann::json to_json(const BlockConfig& c) {
  return {{"m", c.m},
          {"hidden", c.hidden},
          {"latent", c.latent},
          {"n_lif_layers", c.n_lif_layers},
          {"trunk_hidden", c.trunk_hidden},
          {"trunk_layers", c.trunk_layers},
          {"T_s", c.T_s},
          {"beta_init", c.beta_init},
          {"ablate_skip_and_beta", c.ablate_skip_and_beta}};
}

inline BlockConfig block_config_from_json(const nlohmann::json& j) {
  BlockConfig c;
  c.m = j.at("m");
  c.hidden = j.at("hidden");
  c.latent = j.at("latent");
  c.n_lif_layers = j.at("n_lif_layers");
  c.trunk_hidden = j.at("trunk_hidden");
  c.trunk_layers = j.at("trunk_layers");
  c.T_s = j.at("T_s");
  c.beta_init = j.at("beta_init");
  c.ablate_skip_and_beta = j.at("ablate_skip_and_beta");
  return c;
}

inline nlohmann::json to_json(const AnnConfig& c) {
  return {{"m", c.m},           {"hidden", c.hidden},
          {"latent", c.latent}, {"branch_layers", c.branch_layers},
          {"trunk_hidden", c.trunk_hidden}, {"trunk_layers", c.trunk_layers}};
}

inline AnnConfig ann_config_from_json(const nlohmann::json& j) {
  AnnConfig c;
  c.m = j.at("m");
  c.hidden = j.at("hidden");
  c.latent = j.at("latent");
  c.branch_layers = j.at("branch_layers");
  c.trunk_hidden = j.at("trunk_hidden");
  c.trunk_layers = j.at("trunk_layers");
  return c;
}

inline nlohmann::json to_json(const AggregatorConfig& c) {
  return {{"m", c.m},       {"K", c.K},           {"context_dim", c.context_dim},
          {"ctx_hidden", c.ctx_hidden}, {"hidden", c.hidden}, {"layers", c.layers}};
}

inline AggregatorConfig aggregator_config_from_json(const nlohmann::json& j) {
  AggregatorConfig c;
  c.m = j.at("m");
  c.K = j.at("K");
  c.context_dim = j.at("context_dim");
  c.ctx_hidden = j.at("ctx_hidden");
  c.hidden = j.at("hidden");
  c.layers = j.at("layers");
  return c;
}

inline nlohmann::json to_json(const CorrectionConfig& c) {
  return {{"m", c.m},           {"context_dim", c.context_dim},
          {"ctx_hidden", c.ctx_hidden}, {"hidden", c.hidden},
          {"layers", c.layers}, {"harmonics", c.harmonics},
          {"alpha_init", c.alpha_init}};
}

inline CorrectionConfig correction_config_from_json(const nlohmann::json& j) {
  CorrectionConfig c;
  c.m = j.at("m");
  c.context_dim = j.at("context_dim");
  c.ctx_hidden = j.at("ctx_hidden");
  c.hidden = j.at("hidden");
  c.layers = j.at("layers");
  c.harmonics = j.at("harmonics");
  c.alpha_init = j.at("alpha_init");
  return c;
}

inline nlohmann::json tags_to_json(const std::vector<OperatorTag>& tags) {
  nlohmann::json a = nlohmann::json::array();
  for (auto t : tags) a.push_back(op_tag_name(t));
  return a;
}

inline std::vector<OperatorTag> tags_from_json(const nlohmann::json& j) {
  std::vector<OperatorTag> out;
  for (const auto& t : j) out.push_back(parse_op_tag(t.get<std::string>()));
  return out;
}

// --- block / monolithic SNN -------------------------------------------------

inline void save_block(SpikingDeepOnetBlock& block, const std::filesystem::path& path,
                       const std::string& kind = "block",
                       nlohmann::json meta = nlohmann::json::object()) {
  nlohmann::json manifest = {
      {"kind", kind},
      {"arch", to_json(block.config())},
      {"T_s", block.config().T_s},
      {"frozen", block.frozen()},
      {"entries", ckptdetail::manifest_entries(block.params())},
      {"meta", std::move(meta)}};
  if (block.tag()) manifest["tag"] = op_tag_name(*block.tag());
  ckptdetail::save(path, manifest, block.params());
}

inline std::shared_ptr<SpikingDeepOnetBlock> load_block(
    const std::filesystem::path& path, const std::string& kind = "block") {
  auto l = ckptdetail::read(path);
  ckptdetail::check_kind(l, kind, path.string());
  BlockConfig cfg = block_config_from_json(l.manifest.at("arch"));
  auto block = std::make_shared<SpikingDeepOnetBlock>(cfg, 0);
  if (l.manifest.contains("tag"))
    block->set_tag(parse_op_tag(l.manifest.at("tag").get<std::string>()));
  ckptdetail::fill(block->params(), l, path.string());
  if (l.manifest.at("frozen").get<bool>()) block->freeze();
  return block;
}

// --- ANN baseline -----------------------------------------------------------

inline void save_ann(AnnDeepOnet& model, const std::filesystem::path& path,
                     nlohmann::json meta = nlohmann::json::object()) {
  nlohmann::json manifest = {{"kind", "ann"},
                             {"arch", to_json(model.config())},
                             {"frozen", model.frozen()},
                             {"entries", ckptdetail::manifest_entries(model.params())},
                             {"meta", std::move(meta)}};
  ckptdetail::save(path, manifest, model.params());
}

inline std::shared_ptr<AnnDeepOnet> load_ann(const std::filesystem::path& path) {
  auto l = ckptdetail::read(path);
  ckptdetail::check_kind(l, "ann", path.string());
  auto model = std::make_shared<AnnDeepOnet>(ann_config_from_json(l.manifest.at("arch")), 0);
  ckptdetail::fill(model->params(), l, path.string());
  if (l.manifest.at("frozen").get<bool>()) model->freeze();
  return model;
}

// --- aggregator / correction ------------------------------------------------

inline void save_aggregator(Aggregator& agg, const std::filesystem::path& path,
                            nlohmann::json meta = nlohmann::json::object()) {
  nlohmann::json manifest = {{"kind", "aggregator"},
                             {"arch", to_json(agg.config())},
                             {"tags", tags_to_json(agg.tags())},
                             {"frozen", agg.frozen()},
                             {"entries", ckptdetail::manifest_entries(agg.params())},
                             {"meta", std::move(meta)}};
  ckptdetail::save(path, manifest, agg.params());
}

inline std::shared_ptr<Aggregator> load_aggregator(const std::filesystem::path& path) {
  auto l = ckptdetail::read(path);
  ckptdetail::check_kind(l, "aggregator", path.string());
  auto agg = std::make_shared<Aggregator>(
      aggregator_config_from_json(l.manifest.at("arch")),
      tags_from_json(l.manifest.at("tags")), 0);
  ckptdetail::fill(agg->params(), l, path.string());
  if (l.manifest.at("frozen").get<bool>()) agg->freeze();
  return agg;
}

inline void save_correction(CorrectionNet& corr, const std::filesystem::path& path,
                            nlohmann::json meta = nlohmann::json::object()) {
  nlohmann::json manifest = {{"kind", "correction"},
                             {"arch", to_json(corr.config())},
                             {"frozen", corr.frozen()},
                             {"entries", ckptdetail::manifest_entries(corr.params())},
                             {"meta", std::move(meta)}};
  ckptdetail::save(path, manifest, corr.params());
}

inline std::shared_ptr<CorrectionNet> load_correction(const std::filesystem::path& path) {
  auto l = ckptdetail::read(path);
  ckptdetail::check_kind(l, "correction", path.string());
  auto corr = std::make_shared<CorrectionNet>(
      correction_config_from_json(l.manifest.at("arch")), 0);
  ckptdetail::fill(corr->params(), l, path.string());
  if (l.manifest.at("frozen").get<bool>()) corr->freeze();
  return corr;
}

}  // namespace scno
