// SPDX-License-Identifier: Apache-2.0
#include "pmurec/config.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace pmurec {

using nlohmann::json;

namespace {

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["grid"] = c.grid_path;
  j["out_dir"] = c.out_dir;
  j["seed"] = c.seed;
  j["k_hops"] = c.k_hops;
  j["shunt_eps"] = c.shunt_eps;
  j["modal"] = {{"n_modes", c.modal.n_modes},
                {"freq_min", c.modal.freq_min},
                {"freq_max", c.modal.freq_max},
                {"damp_min", c.modal.damp_min},
                {"damp_max", c.modal.damp_max},
                {"amp_scale", c.modal.amp_scale},
                {"noise_sigma", c.modal.noise_sigma},
                {"sample_rate", c.modal.sample_rate},
                {"window_len", c.modal.window_len},
                {"mag_base_shift", c.modal.mag_base_shift}};
  j["missing"] = {{"random_rate", c.missing.random_rate},
                  {"target_rate", c.missing.target_rate},
                  {"event_len", c.missing.event_len}};
  j["data"] = {{"n_windows", c.data.n_windows},
               {"ratios", c.data.ratios}};
  j["aux"] = {{"attn_hidden", c.aux.attn_hidden},
              {"dropout", c.aux.dropout},
              {"gcn_hidden", c.aux.gcn_hidden},
              {"eps", c.aux.eps},
              {"lambda_fid", c.aux.lambda_fid},
              {"leaky_slope", c.aux.leaky_slope},
              {"lr", c.aux.lr},
              {"batch_size", c.aux.batch_size},
              {"epochs", c.aux.epochs},
              {"norm", c.aux.norm == lowrank::LowRankConfig::NormKind::Regularized
                           ? "regularized"
                           : "nuclear"}};
  j["stnet"] = {{"gat_hidden", c.st.gat_hidden},
                {"gcn_widths", c.st.gcn_widths},
                {"residual_alpha", c.st.residual_alpha},
                {"gru_hidden", c.st.gru_hidden},
                {"bn_momentum", c.st.bn_momentum},
                {"bn_eps", c.st.bn_eps},
                {"leaky_slope", c.st.leaky_slope},
                {"lr", c.st.lr},
                {"batch_size", c.st.batch_size},
                {"epochs", c.st.epochs},
                {"anchor_weight", c.st.anchor_weight}};
  j["svt"] = {{"tau_rel", c.svt.tau_rel},
              {"max_iters", c.svt.max_iters},
              {"tol", c.svt.tol},
              {"shrink", c.svt.soft ? "soft" : "hard"}};
  j["online"] = {{"adapt_steps", c.stream.adapt_steps},
                 {"eval_steps", c.stream.eval_steps},
                 {"drift_delay", c.stream.drift_delay},
                 {"ewma_alpha", c.stream.ewma_alpha},
                 {"drift_threshold", c.stream.drift_threshold},
                 {"pseudo_label_lr", c.stream.pseudo_label_lr},
                 {"aux_lr", c.stream.aux_lr},
                 {"batch_windows", c.stream.batch_windows},
                 {"pseudo_label_passes", c.stream.pseudo_label_passes},
                 {"drift_freq_scale", c.stream.drift_freq_scale},
                 {"drift_amp_scale", c.stream.drift_amp_scale},
                 {"drift_base_shift", c.stream.drift_base_shift}};
  return j;
}

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  take(j, "grid", c.grid_path);
  take(j, "out_dir", c.out_dir);
  take(j, "seed", c.seed);
  take(j, "k_hops", c.k_hops);
  take(j, "shunt_eps", c.shunt_eps);
  if (j.contains("modal")) {
    const auto& m = j.at("modal");
    take(m, "n_modes", c.modal.n_modes);
    take(m, "freq_min", c.modal.freq_min);
    take(m, "freq_max", c.modal.freq_max);
    take(m, "damp_min", c.modal.damp_min);
    take(m, "damp_max", c.modal.damp_max);
    take(m, "amp_scale", c.modal.amp_scale);
    take(m, "noise_sigma", c.modal.noise_sigma);
    take(m, "sample_rate", c.modal.sample_rate);
    take(m, "window_len", c.modal.window_len);
    take(m, "mag_base_shift", c.modal.mag_base_shift);
  }
  if (j.contains("missing")) {
    const auto& m = j.at("missing");
    take(m, "random_rate", c.missing.random_rate);
    take(m, "target_rate", c.missing.target_rate);
    take(m, "event_len", c.missing.event_len);
  }
  if (j.contains("data")) {
    const auto& m = j.at("data");
    take(m, "n_windows", c.data.n_windows);
    take(m, "ratios", c.data.ratios);
  }
  if (j.contains("aux")) {
    const auto& m = j.at("aux");
    take(m, "attn_hidden", c.aux.attn_hidden);
    take(m, "dropout", c.aux.dropout);
    take(m, "gcn_hidden", c.aux.gcn_hidden);
    take(m, "eps", c.aux.eps);
    take(m, "lambda_fid", c.aux.lambda_fid);
    take(m, "leaky_slope", c.aux.leaky_slope);
    take(m, "lr", c.aux.lr);
    take(m, "batch_size", c.aux.batch_size);
    take(m, "epochs", c.aux.epochs);
    if (m.contains("norm")) {
      const std::string norm = m.at("norm").get<std::string>();
      if (norm == "regularized")
        c.aux.norm = lowrank::LowRankConfig::NormKind::Regularized;
      else if (norm == "nuclear")
        c.aux.norm = lowrank::LowRankConfig::NormKind::Nuclear;
      else
        throw ValidationError("config: aux.norm must be regularized|nuclear");
    }
  }
  if (j.contains("stnet")) {
    const auto& m = j.at("stnet");
    take(m, "gat_hidden", c.st.gat_hidden);
    take(m, "gcn_widths", c.st.gcn_widths);
    take(m, "residual_alpha", c.st.residual_alpha);
    take(m, "gru_hidden", c.st.gru_hidden);
    take(m, "bn_momentum", c.st.bn_momentum);
    take(m, "bn_eps", c.st.bn_eps);
    take(m, "leaky_slope", c.st.leaky_slope);
    take(m, "lr", c.st.lr);
    take(m, "batch_size", c.st.batch_size);
    take(m, "epochs", c.st.epochs);
    take(m, "anchor_weight", c.st.anchor_weight);
  }
  if (j.contains("svt")) {
    const auto& m = j.at("svt");
    take(m, "tau_rel", c.svt.tau_rel);
    take(m, "max_iters", c.svt.max_iters);
    take(m, "tol", c.svt.tol);
    if (m.contains("shrink")) {
      const std::string s = m.at("shrink").get<std::string>();
      if (s == "soft")
        c.svt.soft = true;
      else if (s == "hard")
        c.svt.soft = false;
      else
        throw ValidationError("config: svt.shrink must be hard|soft");
    }
  }
  if (j.contains("online")) {
    const auto& m = j.at("online");
    take(m, "adapt_steps", c.stream.adapt_steps);
    take(m, "eval_steps", c.stream.eval_steps);
    take(m, "drift_delay", c.stream.drift_delay);
    take(m, "ewma_alpha", c.stream.ewma_alpha);
    take(m, "drift_threshold", c.stream.drift_threshold);
    take(m, "pseudo_label_lr", c.stream.pseudo_label_lr);
    take(m, "aux_lr", c.stream.aux_lr);
    take(m, "batch_windows", c.stream.batch_windows);
    take(m, "pseudo_label_passes", c.stream.pseudo_label_passes);
    take(m, "drift_freq_scale", c.stream.drift_freq_scale);
    take(m, "drift_amp_scale", c.stream.drift_amp_scale);
    take(m, "drift_base_shift", c.stream.drift_base_shift);
  }
  return c;
}

void apply_override(json& j, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos)
    throw ValidationError("config: override must look like key.path=value: " + spec);
  const std::string path = spec.substr(0, eq);
  const std::string value = spec.substr(eq + 1);

  json* node = &j;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ValidationError("config: empty override key");
  for (size_t i = 0; i + 1 < parts.size(); ++i) node = &((*node)[parts[i]]);

  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;  // plain string
  }
  (*node)[parts.back()] = parsed;
}

}  // namespace

ExperimentConfig config_from_json_text(const std::string& text,
                                       const std::vector<std::string>& overrides) {
  json j;
  if (!text.empty()) {
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw ValidationError(std::string("config: parse failure: ") + e.what());
    }
  } else {
    j = json::object();
  }
  for (const auto& o : overrides) apply_override(j, o);
  return config_from_json(j);
}

ExperimentConfig load_config(const std::filesystem::path& file,
                             const std::vector<std::string>& overrides) {
  std::string text;
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ValidationError("config: cannot open " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  return config_from_json_text(text, overrides);
}

std::string config_to_json_text(const ExperimentConfig& cfg) {
  return config_to_json(cfg).dump(1);
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string text = config_to_json(cfg).dump();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_manifest(const std::filesystem::path& dir, const std::string& command,
                    const ExperimentConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  json j;
  j["command"] = command;
  j["config"] = config_to_json(cfg);
  j["config_hash"] = config_hash(cfg);
  j["seed"] = cfg.seed;
  j["version"] = "0.1.0";
  std::ofstream out(dir / "run_manifest.json");
  if (!out) throw ComputeError("manifest: cannot write in " + dir.string());
  out << j.dump(1) << "\n";
}

}  // namespace pmurec
