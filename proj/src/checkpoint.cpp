#include "adrm/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "adrm/error.hpp"
#include "json.hpp"

namespace adrm {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'A', 'D', 'R', 'M', 'C', 'K', 'P', 'T'};

json layout(const ParamSet& p) {
  json out = json::array();
  for (const auto& info : p.infos()) out.push_back({{"name", info.name}, {"shape", info.shape}});
  return out;
}

void fill_layout(ParamSet& p, const json& spec) {
  for (const auto& e : spec) p.add(e.at("name").get<std::string>(), e.at("shape").get<Shape>());
}

template <typename T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(const std::string& in, std::size_t& pos, const fs::path& path) {
  if (pos + sizeof(T) > in.size()) fail(ErrorKind::io_error, path.string() + ": truncated checkpoint");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof v);
  pos += sizeof v;
  return v;
}

}  // namespace

void save_checkpoint(const fs::path& path, const StreamState& state, const std::string& config_digest) {
  const ModelState& m = state.model;
  const MemoryBuffer& mem = state.memory;
  json header;
  header["architecture"] = {{"id", m.arch.id},
                            {"input", {m.arch.input.channels, m.arch.input.height, m.arch.input.width}},
                            {"n_classes", m.arch.n_classes},
                            {"norm_mean", m.arch.norm_mean},
                            {"norm_std", m.arch.norm_std}};
  header["init_seed"] = m.init_seed;
  header["params"] = layout(m.params);
  header["buffers"] = layout(m.buffers);
  header["next_task"] = state.next_task;
  header["global_step"] = state.global_step;
  header["config_digest"] = config_digest;
  json rows = json::array();
  for (std::size_t t = 0; t < state.matrix.n_tasks(); ++t) {
    json row = json::array();
    for (std::size_t i = 0; i <= t; ++i) row.push_back(state.matrix.has(t, i) ? json(state.matrix.at(t, i)) : json());
    rows.push_back(row);
  }
  header["accuracy_matrix"] = rows;
  json entries = json::array();
  for (const auto& e : mem.entries()) entries.push_back({e.label, e.task_id, e.arrival});
  header["memory"] = {{"budget", mem.budget()},
                      {"policy", to_string(mem.policy())},
                      {"image_shape", mem.image_shape()},
                      {"seen_count", mem.seen_count()},
                      {"rng_state", save_rng(mem.rng())},
                      {"entries", entries}};

  const std::string text = header.dump();
  std::string blob(kMagic, sizeof kMagic);
  put(blob, kCheckpointVersion);
  put(blob, static_cast<std::uint64_t>(text.size()));
  blob += text;
  std::size_t count = m.params.total_size() + m.buffers.total_size();
  for (const auto& e : mem.entries()) count += e.image.size();
  put(blob, static_cast<std::uint64_t>(count));
  auto append = [&](std::span<const double> v) { blob.append(reinterpret_cast<const char*>(v.data()), v.size_bytes()); };
  append(m.params.flat());
  append(m.buffers.flat());
  for (const auto& e : mem.entries()) append(e.image);
  write_text_atomic(path, blob);
}

Checkpoint load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorKind::artifact_not_found, "checkpoint not found: " + path.string());
  const std::string blob = read_text(path);
  if (blob.size() < sizeof kMagic || std::memcmp(blob.data(), kMagic, sizeof kMagic) != 0)
    fail(ErrorKind::io_error, path.string() + " is not a checkpoint");
  std::size_t pos = sizeof kMagic;
  const auto version = get<std::uint32_t>(blob, pos, path);
  if (version != kCheckpointVersion)
    fail(ErrorKind::io_error, path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const auto header_len = get<std::uint64_t>(blob, pos, path);
  if (pos + header_len > blob.size()) fail(ErrorKind::io_error, path.string() + ": truncated checkpoint");
  json header;
  try {
    header = json::parse(blob.substr(pos, header_len));
  } catch (const json::exception& e) {
    fail(ErrorKind::io_error, path.string() + ": bad checkpoint header: " + e.what());
  }
  pos += header_len;
  const auto count = get<std::uint64_t>(blob, pos, path);
  if (pos + count * sizeof(double) != blob.size()) fail(ErrorKind::io_error, path.string() + ": payload size mismatch");
  const auto* payload = reinterpret_cast<const char*>(blob.data() + pos);
  std::size_t offset = 0;
  auto take = [&](std::span<double> dst) {
    if (offset + dst.size() > count) fail(ErrorKind::io_error, path.string() + ": payload too short");
    std::memcpy(dst.data(), payload + offset * sizeof(double), dst.size_bytes());
    offset += dst.size();
  };

  Checkpoint ck;
  try {
    ModelState& m = ck.state.model;
    const json& a = header.at("architecture");
    m.arch.id = a.at("id");
    const auto input = a.at("input").get<std::vector<std::size_t>>();
    if (input.size() != 3) fail(ErrorKind::io_error, path.string() + ": bad input shape");
    m.arch.input = {input[0], input[1], input[2]};
    m.arch.n_classes = a.at("n_classes");
    m.arch.norm_mean = a.at("norm_mean").get<std::vector<double>>();
    m.arch.norm_std = a.at("norm_std").get<std::vector<double>>();
    m.init_seed = header.at("init_seed");
    fill_layout(m.params, header.at("params"));
    fill_layout(m.buffers, header.at("buffers"));
    take(m.params.flat());
    take(m.buffers.flat());
    attach_network(m);

    ck.state.next_task = header.at("next_task");
    ck.state.global_step = header.at("global_step");
    ck.config_digest = header.at("config_digest");
    const json& rows = header.at("accuracy_matrix");
    ck.state.matrix = AccuracyMatrix(rows.size());
    for (std::size_t t = 0; t < rows.size(); ++t)
      for (std::size_t i = 0; i < rows[t].size(); ++i)
        if (!rows[t][i].is_null()) ck.state.matrix.set(t, i, rows[t][i].get<double>());

    const json& mj = header.at("memory");
    const auto image_shape = mj.at("image_shape").get<Shape>();
    const std::size_t image_size = image_shape.empty() ? 0 : shape_size(image_shape);
    std::vector<MemoryEntry> entries;
    for (const auto& e : mj.at("entries")) {
      MemoryEntry entry;
      entry.label = e.at(0);
      entry.task_id = e.at(1);
      entry.arrival = e.at(2);
      entry.image.resize(image_size);
      take(entry.image);
      entries.push_back(std::move(entry));
    }
    ck.state.memory = MemoryBuffer::restore(mj.at("budget"), parse_memory_policy(mj.at("policy").get<std::string>()),
                                            image_shape, std::move(entries), mj.at("seen_count"),
                                            mj.at("rng_state").get<std::string>());
  } catch (const json::exception& e) {
    fail(ErrorKind::io_error, path.string() + ": malformed checkpoint header: " + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::io_error) throw;
    fail(ErrorKind::io_error, path.string() + ": " + e.what());
  }
  if (offset != count) fail(ErrorKind::io_error, path.string() + ": trailing payload");
  return ck;
}

}  // namespace adrm
