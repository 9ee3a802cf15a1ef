// mimic-sig: command-line front end for theory checks, training runs,
// checkpoint evaluation and plotting.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mimic_sig/experiment.hpp"

namespace ex = mimic_sig::experiment;
using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::string preset;
  std::string name;
  std::string out;
  std::string checkpoint;
  std::string seeds;
  std::int64_t seed = -1;
};

// "N..M" inclusive, or a single "N".
std::vector<std::uint64_t> parse_seed_range(const std::string& text) {
  const auto dots = text.find("..");
  auto num = [&](const std::string& s) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size() || s.front() == '-') {
      throw mimic_sig::ConfigError("bad seed range '" + text + "' (expected N..M)", "--seeds");
    }
    return static_cast<std::uint64_t>(v);
  };
  if (dots == std::string::npos) return {num(text)};
  const auto lo = num(text.substr(0, dots)), hi = num(text.substr(dots + 2));
  if (hi < lo) throw mimic_sig::ConfigError("seed range is empty: " + text, "--seeds");
  std::vector<std::uint64_t> out;
  for (auto s = lo; s <= hi; ++s) out.push_back(s);
  return out;
}

json build_document(const std::string& mode, const Options& o) {
  json doc = json::object();
  if (!o.config.empty()) {
    if (!std::filesystem::exists(o.config)) throw mimic_sig::ConfigError("config file not found: " + o.config, "--config");
    try {
      doc = json::parse(mimic_sig::metrics::read_text(o.config));
    } catch (const json::parse_error& e) {
      throw mimic_sig::ConfigError(std::string("malformed JSON: ") + e.what(), "$");
    }
    if (!doc.is_object()) throw mimic_sig::ConfigError("expected an object", "$");
  }
  if (!o.preset.empty()) doc["preset"] = o.preset;
  doc["mode"] = mode;
  if (!o.name.empty()) doc["name"] = o.name;
  if (!o.out.empty()) doc["output_dir"] = o.out;
  if (!o.checkpoint.empty()) doc["checkpoint"] = o.checkpoint;
  if (o.seed >= 0) doc["seeds"] = {o.seed};
  if (!o.seeds.empty()) doc["seeds"] = parse_seed_range(o.seeds);
  return doc;
}

int execute(const std::string& mode, const Options& o) {
  const auto spec = ex::load_spec(build_document(mode, o));
  const auto result = ex::run(spec, &std::cerr);
  for (const auto& s : result.seeds) {
    if (spec.mode == ex::Mode::kPlot) {
      for (const auto& f : s.report["files"]) std::cout << "wrote " << f.get<std::string>() << "\n";
      continue;
    }
    std::cout << "seed " << s.seed << ": " << (s.ok ? "ok" : "FAILED " + s.error) << "  "
              << ex::seed_dir(spec, s.seed).string() << "\n";
  }
  if (!result.aggregate.is_null()) {
    std::cout << "final mean " << result.aggregate["final_mean"].get<double>() << " std "
              << result.aggregate["final_std_pop"].get<double>() << " over "
              << result.aggregate["n_runs"].get<int>() << " runs  " << (result.dir / "aggregate.csv").string() << "\n";
  }
  return result.exit_code();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mimicry and emergent communication experiments"};
  app.require_subcommand(1);
  Options o;
  std::string chosen;

  for (const std::string mode : {"theory", "evolve", "train-rl", "eval", "plot"}) {
    auto* sub = app.add_subcommand(mode, "run in " + mode + " mode");
    sub->add_option("--config", o.config, "JSON experiment spec");
    sub->add_option("--preset", o.preset, "named preset (see `mimic-sig presets`)");
    sub->add_option("--name", o.name, "run name (directory under --out)");
    sub->add_option("--out", o.out, "output root directory");
    sub->add_option("--seed", o.seed, "single seed")->check(CLI::NonNegativeNumber);
    sub->add_option("--seeds", o.seeds, "inclusive seed range N..M");
    sub->add_option("--checkpoint", o.checkpoint, "checkpoint file (eval)");
    sub->callback([&chosen, mode] { chosen = mode; });
  }
  auto* list = app.add_subcommand("presets", "list preset names");
  list->callback([&chosen] { chosen = "presets"; });

  CLI11_PARSE(app, argc, argv);

  if (chosen == "presets") {
    for (const auto& n : ex::preset_names()) std::cout << n << "\n";
    return 0;
  }
  try {
    return execute(chosen, o);
  } catch (const mimic_sig::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
