#include "subpx/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "subpx/config.hpp"
#include "subpx/error.hpp"
#include "subpx/io.hpp"

namespace subpx {

namespace {

constexpr int kFormatVersion = 1;

void append_le(std::vector<unsigned char>& out, std::span<const float> values) {
  const std::size_t at = out.size();
  out.resize(at + values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) out[at + i * 4 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
}

void read_le(std::span<const unsigned char> in, std::span<float> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(in[i * 4 + b]) << (8 * b);
    values[i] = std::bit_cast<float>(bits);
  }
}

void write_file(const std::string& path, const void* data, std::size_t size) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write '" + tmp + "'");
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!f) throw IoError("write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

std::string checkpoint_buffer_path(const std::string& manifest_path) {
  return manifest_path + ".bin";
}

void checkpoint_save(const TrainState& state, const std::string& path) {
  const auto params = state.net.parameters();
  const std::size_t n = params.size();
  if (state.adam.m.size() != n || state.adam.v.size() != n) {
    throw InvalidState("checkpoint_save: optimizer state does not match the parameter count");
  }
  std::vector<unsigned char> buf;
  buf.reserve(3 * n * 4);
  append_le(buf, params);
  append_le(buf, state.adam.m);
  append_le(buf, state.adam.v);

  const ParameterLayout& lay = state.net.layout();
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (int i = 0; i < kNumLayers; ++i) {
    const LayerShape& l = lay.layers[static_cast<std::size_t>(i)];
    layers.push_back({{"out_channels", l.out_channels},
                      {"in_channels", l.in_channels},
                      {"kernel", {3, 3}},
                      {"padding", l.padding == Padding::kSame ? "same" : "valid"},
                      {"kernel_byte_offset", l.kernel_offset * 4},
                      {"bias_byte_offset", l.bias_offset * 4}});
  }

  nlohmann::ordered_json m;
  m["format"] = "subpx-checkpoint";
  m["version"] = kFormatVersion;
  m["dtype"] = "float32-le";
  m["refine"] = to_json(state.net.config());
  m["layers"] = layers;
  m["projection_byte_offset"] = lay.projection_offset * 4;
  m["projection_size"] = lay.projection_size;
  m["parameter_count"] = n;
  m["buffer"] = {{"file", std::filesystem::path(checkpoint_buffer_path(path)).filename().string()},
                 {"bytes", buf.size()},
                 {"sections", {"parameters", "adam_m", "adam_v"}},
                 {"fnv1a64", hex64(fnv1a64(buf))}};
  m["adam"] = {{"lr", state.adam.lr},
               {"beta1", state.adam.beta1},
               {"beta2", state.adam.beta2},
               {"eps", state.adam.eps},
               {"step", state.adam.step}};
  m["step"] = state.step;

  write_file(checkpoint_buffer_path(path), buf.data(), buf.size());
  const std::string text = m.dump(2) + "\n";
  write_file(path, text.data(), text.size());
}

TrainState checkpoint_load(const std::string& path, const RefineConfig* expected) {
  nlohmann::json m;
  {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open checkpoint '" + path + "'");
    try {
      f >> m;
    } catch (const nlohmann::json::exception& e) {
      throw CorruptCheckpoint("checkpoint manifest '" + path + "' is not valid JSON: " + e.what());
    }
  }
  try {
    if (m.at("format").get<std::string>() != "subpx-checkpoint" ||
        m.at("version").get<int>() != kFormatVersion) {
      throw CorruptCheckpoint("'" + path + "' is not a supported checkpoint manifest");
    }
    RefineConfig cfg;
    from_json(m.at("refine"), cfg);
    cfg.validate();
    if (expected != nullptr && !(*expected == cfg)) {
      throw ConfigError("checkpoint '" + path +
                        "' was saved with a different network configuration");
    }
    const std::size_t n = m.at("parameter_count").get<std::size_t>();
    if (n != parameter_count(cfg)) {
      throw CorruptCheckpoint("checkpoint parameter count does not match its configuration");
    }
    const std::vector<unsigned char> buf = read_file(checkpoint_buffer_path(path));
    if (buf.size() != 3 * n * 4 || buf.size() != m.at("buffer").at("bytes").get<std::size_t>()) {
      throw CorruptCheckpoint("checkpoint buffer has " + std::to_string(buf.size()) +
                              " bytes, expected " + std::to_string(3 * n * 4));
    }
    if (hex64(fnv1a64(buf)) != m.at("buffer").at("fnv1a64").get<std::string>()) {
      throw CorruptCheckpoint("checkpoint checksum mismatch for '" + path + "'");
    }
    TrainState st{RefinementNet<float>(cfg), AdamState<float>(n), m.at("step").get<std::int64_t>()};
    const std::span<const unsigned char> bytes(buf);
    read_le(bytes.subspan(0, n * 4), st.net.mutable_parameters());
    read_le(bytes.subspan(n * 4, n * 4), st.adam.m);
    read_le(bytes.subspan(2 * n * 4, n * 4), st.adam.v);
    const auto& a = m.at("adam");
    st.adam.lr = a.at("lr").get<double>();
    st.adam.beta1 = a.at("beta1").get<double>();
    st.adam.beta2 = a.at("beta2").get<double>();
    st.adam.eps = a.at("eps").get<double>();
    st.adam.step = a.at("step").get<std::int64_t>();
    return st;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint("checkpoint manifest '" + path + "' is malformed: " + e.what());
  }
}

}  // namespace subpx
