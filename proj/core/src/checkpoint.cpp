#include "weatherseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include <json.hpp>

#include "weatherseg/errors.hpp"

namespace weatherseg {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "weatherseg-checkpoint";
constexpr int kVersion = 1;

struct Slot {
  std::string name;
  Tensor tensor;
};

// Every tensor a checkpoint carries, in file order. Velocity buffers are
// appended separately since they are plain vectors.
std::vector<Slot> state_slots(const TrainState& s) {
  std::vector<Slot> out;
  for (const auto& [name, t] : s.encoder.trainable()) out.push_back({name, t});
  out.push_back({"encoder.mix", s.encoder.mix});
  for (const auto& [name, t] : s.student.trainable()) out.push_back({"student." + name, t});
  for (const auto& [name, t] : s.cwt.trainable()) out.push_back({name, t});
  for (const auto& [name, t] : s.teachers.first().trainable()) out.push_back({"teacher1." + name, t});
  for (const auto& [name, t] : s.teachers.second().trainable()) out.push_back({"teacher2." + name, t});
  return out;
}

void put_f64(std::ostream& os, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) {
    bytes[i] = static_cast<char>(bits & 0xffu);
    bits >>= 8;
  }
  os.write(bytes, 8);
}

double get_f64(std::istream& is) {
  unsigned char bytes[8];
  if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw IoError("checkpoint data block is truncated");
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | bytes[i];
  return std::bit_cast<double>(bits);
}

json loss_to_json(const LossBreakdown& b) {
  return json::array({b.step, b.ce, b.pl, b.consist, b.reg, b.total, b.batch_labeled,
                      b.batch_unlabeled, b.confident, b.mask_fraction, b.empty_mask,
                      b.empty_unlabeled});
}

LossBreakdown loss_from_json(const json& j) {
  LossBreakdown b;
  b.step = j.at(0).get<std::int64_t>();
  b.ce = j.at(1).get<double>();
  b.pl = j.at(2).get<double>();
  b.consist = j.at(3).get<double>();
  b.reg = j.at(4).get<double>();
  b.total = j.at(5).get<double>();
  b.batch_labeled = j.at(6).get<std::size_t>();
  b.batch_unlabeled = j.at(7).get<std::size_t>();
  b.confident = j.at(8).get<std::size_t>();
  b.mask_fraction = j.at(9).get<double>();
  b.empty_mask = j.at(10).get<bool>();
  b.empty_unlabeled = j.at(11).get<bool>();
  return b;
}

json metrics_to_json(const MetricsRow& r) {
  return json::array({r.epoch, r.miou, r.pixel_acc, r.ce, r.pl, r.consist, r.reg, r.total,
                      r.mask_fraction, r.shares.defined, r.shares.ce, r.shares.pl,
                      r.shares.consist, r.shares.reg, r.weight_deviation});
}

MetricsRow metrics_from_json(const json& j) {
  MetricsRow r;
  r.epoch = j.at(0).get<std::int64_t>();
  r.miou = j.at(1).get<double>();
  r.pixel_acc = j.at(2).get<double>();
  r.ce = j.at(3).get<double>();
  r.pl = j.at(4).get<double>();
  r.consist = j.at(5).get<double>();
  r.reg = j.at(6).get<double>();
  r.total = j.at(7).get<double>();
  r.mask_fraction = j.at(8).get<double>();
  r.shares.defined = j.at(9).get<bool>();
  r.shares.ce = j.at(10).get<double>();
  r.shares.pl = j.at(11).get<double>();
  r.shares.consist = j.at(12).get<double>();
  r.shares.reg = j.at(13).get<double>();
  r.weight_deviation = j.at(14).get<double>();
  return r;
}

}  // namespace

void write_checkpoint(std::ostream& os, const TrainConfig& cfg, const TrainState& state) {
  const auto slots = state_slots(state);
  json index = json::array();
  std::size_t offset = 0;
  for (const auto& s : slots) {
    index.push_back({{"name", s.name}, {"shape", s.tensor.shape()}, {"offset", offset}});
    offset += s.tensor.size();
  }
  for (const auto& [name, v] : state.velocity) {
    index.push_back(
        {{"name", "velocity." + name}, {"shape", std::vector<std::size_t>{v.size()}}, {"offset", offset}});
    offset += v.size();
  }

  json header;
  header["format"] = kFormat;
  header["version"] = kVersion;
  header["dims"] = {{"in_channels", cfg.dims.in_channels}, {"features", cfg.dims.features},
                    {"classes", cfg.dims.classes},         {"height", cfg.dims.height},
                    {"width", cfg.dims.width},             {"heads", cfg.dims.heads}};
  header["seed"] = cfg.seed;
  header["step"] = state.step;
  header["config"] = json::parse(config_to_json(cfg));
  header["teacher_last_update"] = state.teachers.last_update_step();
  header["losses"] = json::array();
  for (const auto& b : state.losses) header["losses"].push_back(loss_to_json(b));
  header["metrics"] = json::array();
  for (const auto& r : state.metrics) header["metrics"].push_back(metrics_to_json(r));
  header["tensors"] = std::move(index);

  os << header.dump() << '\n';
  for (const auto& s : slots) {
    for (double v : s.tensor.values()) put_f64(os, v);
  }
  for (const auto& [name, v] : state.velocity) {
    for (double x : v) put_f64(os, x);
  }
  if (!os) throw IoError("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("checkpoint is empty");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::parse_error& e) {
    throw IoError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  if (header.value("format", "") != kFormat) throw IoError("not a weatherseg checkpoint");
  if (header.value("version", 0) != kVersion) {
    throw IoError("unsupported checkpoint version " + header.value("version", json()).dump());
  }

  Checkpoint ck;
  try {
    ck.config = config_from_json(header.at("config").dump());
    ck.state = init_state(ck.config);
    ck.state.step = header.at("step").get<std::int64_t>();
    ck.state.teachers.set_last_update_step(header.at("teacher_last_update").get<std::int64_t>());
    for (const auto& b : header.at("losses")) ck.state.losses.push_back(loss_from_json(b));
    for (const auto& r : header.at("metrics")) ck.state.metrics.push_back(metrics_from_json(r));
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint header: ") + e.what());
  }

  auto slots = state_slots(ck.state);
  std::size_t expected_offset = 0;
  std::size_t slot = 0;
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    if (entry.at("offset").get<std::size_t>() != expected_offset) {
      throw IoError("checkpoint tensor '" + name + "' has an unexpected offset");
    }
    expected_offset += element_count(shape);
    if (name.rfind("velocity.", 0) == 0) {
      auto& v = ck.state.velocity[name.substr(9)];
      v.resize(element_count(shape));
      for (double& x : v) x = get_f64(is);
      continue;
    }
    if (slot >= slots.size() || slots[slot].name != name) {
      throw IoError("checkpoint tensor '" + name + "' is out of order or unknown");
    }
    Tensor& t = slots[slot++].tensor;
    if (t.shape() != shape) {
      throw IoError("checkpoint tensor '" + name + "' has shape " + to_string(shape) +
                    ", model expects " + to_string(t.shape()));
    }
    for (double& x : t.mutable_values()) x = get_f64(is);
  }
  if (slot != slots.size()) throw IoError("checkpoint is missing model tensors");
  if (is.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes after checkpoint data");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg,
                     const TrainState& state) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_checkpoint(os, cfg, state);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

}  // namespace weatherseg
