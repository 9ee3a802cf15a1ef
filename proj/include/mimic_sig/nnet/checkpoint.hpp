#ifndef MIMIC_SIG_NNET_CHECKPOINT_HPP_
#define MIMIC_SIG_NNET_CHECKPOINT_HPP_

// File layout: one line of JSON (no embedded newlines), '\n', then
// n_params * copies little-endian float32 values.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimic_sig/core.hpp"
#include "mimic_sig/nnet/network.hpp"

namespace mimic_sig::nnet {

inline constexpr const char* kCheckpointFormat = "mimic-sig-params";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json arch_to_json(const NetArch& a) {
  return {{"input_dim", a.input_dim},   {"hidden_dim", a.hidden_dim}, {"n_feedforward", a.n_feedforward},
          {"recurrent", a.recurrent},   {"n_actions", a.n_actions},   {"with_value_head", a.with_value_head}};
}

inline NetArch arch_from_json(const nlohmann::json& j) {
  NetArch a;
  a.input_dim = j.at("input_dim").get<int>();
  a.hidden_dim = j.at("hidden_dim").get<int>();
  a.n_feedforward = j.at("n_feedforward").get<int>();
  a.recurrent = j.at("recurrent").get<bool>();
  a.n_actions = j.at("n_actions").get<int>();
  a.with_value_head = j.at("with_value_head").get<bool>();
  a.validate();
  return a;
}

struct Checkpoint {
  NetArch arch;
  int copies = 1;  // independent networks stored back to back
  std::uint64_t seed = 0;
  std::int64_t iteration = 0;
  std::vector<float> params;
  nlohmann::json extra = nlohmann::json::object();
};

inline std::string encode_checkpoint(const Checkpoint& c) {
  const std::size_t n = param_count(c.arch);
  if (c.copies < 1 || c.params.size() != n * static_cast<std::size_t>(c.copies)) {
    throw ShapeError("checkpoint parameter count does not match arch x copies");
  }
  nlohmann::json layout_json = nlohmann::json::array();
  for (const auto& s : layout(c.arch)) {
    layout_json.push_back({{"name", s.name}, {"offset", s.offset}, {"rows", s.rows}, {"cols", s.cols}});
  }
  nlohmann::json header = {{"format", kCheckpointFormat},
                           {"version", kCheckpointVersion},
                           {"arch", arch_to_json(c.arch)},
                           {"layout", layout_json},
                           {"copies", c.copies},
                           {"n_params", n},
                           {"seed", c.seed},
                           {"iteration", c.iteration},
                           {"build", kBuildId},
                           {"extra", c.extra}};
  std::string out = header.dump();
  out.push_back('\n');
  const std::size_t at = out.size();
  out.resize(at + c.params.size() * 4);
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(c.params[i]);
    for (int b = 0; b < 4; ++b) out[at + i * 4 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw Error("checkpoint has no header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint header is not JSON: ") + e.what());
  }
  if (header.value("format", std::string()) != kCheckpointFormat) throw Error("not a mimic-sig checkpoint");
  if (header.value("version", 0) != kCheckpointVersion) throw Error("unsupported checkpoint version");
  Checkpoint c;
  c.arch = arch_from_json(header.at("arch"));
  c.copies = header.at("copies").get<int>();
  c.seed = header.at("seed").get<std::uint64_t>();
  c.iteration = header.at("iteration").get<std::int64_t>();
  if (header.contains("extra")) c.extra = header.at("extra");
  const std::size_t n = header.at("n_params").get<std::size_t>();
  if (n != param_count(c.arch)) throw ShapeError("checkpoint n_params disagrees with its arch");
  const std::size_t total = n * static_cast<std::size_t>(c.copies);
  if (bytes.size() - nl - 1 != total * 4) throw ShapeError("checkpoint payload has the wrong size");
  c.params.resize(total);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + nl + 1);
  for (std::size_t i = 0; i < total; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[i * 4 + static_cast<std::size_t>(b)]) << (8 * b);
    c.params[i] = std::bit_cast<float>(bits);
  }
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = encode_checkpoint(c);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write checkpoint " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace mimic_sig::nnet

#endif  // MIMIC_SIG_NNET_CHECKPOINT_HPP_
