#include "ndi/pipeline.hpp"

#include "ndi/errors.hpp"
#include "ndi/occupancy.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace ndi::pipeline {
namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- config

namespace {

using Setter = std::function<void(const json&, ExperimentConfig&)>;

[[noreturn]] void bad_type(const std::string& key, const char* expected) {
  throw std::invalid_argument("config: key '" + key + "' must be " + expected);
}

Setter string_key(std::string ExperimentConfig::*field, std::vector<std::string> allowed = {}) {
  return [field, allowed](const json& v, ExperimentConfig& c) {
    if (!v.is_string()) throw std::invalid_argument("string");
    const auto s = v.get<std::string>();
    if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      throw std::invalid_argument("one of " + list);
    }
    c.*field = s;
  };
}

Setter real_key(double ExperimentConfig::*field, double lo, double hi) {
  return [=](const json& v, ExperimentConfig& c) {
    if (!v.is_number()) throw std::invalid_argument("a number");
    const double d = v.get<double>();
    if (!(d >= lo && d <= hi)) {
      std::ostringstream msg;
      msg << "a number in [" << lo << ", " << hi << "]";
      throw std::invalid_argument(msg.str());
    }
    c.*field = d;
  };
}

Setter count_key(std::size_t ExperimentConfig::*field, std::size_t lo) {
  return [=](const json& v, ExperimentConfig& c) {
    if (!v.is_number_unsigned() || v.get<std::size_t>() < lo) {
      throw std::invalid_argument("an integer >= " + std::to_string(lo));
    }
    c.*field = v.get<std::size_t>();
  };
}

Setter bool_key(bool ExperimentConfig::*field) {
  return [=](const json& v, ExperimentConfig& c) {
    if (!v.is_boolean()) throw std::invalid_argument("a boolean");
    c.*field = v.get<bool>();
  };
}

const std::map<std::string, Setter>& setters() {
  using C = ExperimentConfig;
  static const std::map<std::string, Setter> table = {
      {"env", string_key(&C::env)},
      {"gamma", real_key(&C::gamma, 0.0, 0.999999)},
      {"expert_temperature", real_key(&C::expert_temperature, 1e-6, 1e6)},
      {"expert_kp", real_key(&C::expert_kp, 0.0, 1e6)},
      {"expert_kd", real_key(&C::expert_kd, 0.0, 1e6)},
      {"expert_noise", real_key(&C::expert_noise, 1e-6, 1e6)},
      {"n_trajectories", count_key(&C::n_trajectories, 1)},
      {"episode_length", count_key(&C::episode_length, 2)},
      {"density", string_key(&C::density, {"made", "ebm"})},
      {"density_hidden", count_key(&C::density_hidden, 1)},
      {"density_layers", count_key(&C::density_layers, 0)},
      {"density_components", count_key(&C::density_components, 1)},
      {"density_epochs", count_key(&C::density_epochs, 1)},
      {"density_batch", count_key(&C::density_batch, 1)},
      {"density_lr", real_key(&C::density_lr, 0.0, 1.0)},
      {"density_spectral", bool_key(&C::density_spectral)},
      {"ssm_variant", string_key(&C::ssm_variant, {"standard", "sliced_norm"})},
      {"ssm_slices", count_key(&C::ssm_slices, 1)},
      {"lambda_pi",
       [](const json& v, ExperimentConfig& c) {
         if (v.is_string() && v.get<std::string>() == "auto") {
           c.lambda_pi.reset();
         } else if (v.is_number() && v.get<double>() >= 0.0) {
           c.lambda_pi = v.get<double>();
         } else {
           throw std::invalid_argument("\"auto\" or a number >= 0");
         }
       }},
      {"lambda_pi_max", real_key(&C::lambda_pi_max, 1e-6, 1e6)},
      {"target_entropy_scale", real_key(&C::target_entropy_scale, 0.0, 1.0)},
      {"lambda_f", real_key(&C::lambda_f, 0.0, 1e6)},
      {"reward_form", string_key(&C::reward_form, {"alg1", "theorem"})},
      {"rl_iterations", count_key(&C::rl_iterations, 1)},
      {"sac_steps", count_key(&C::sac_steps, 1)},
      {"sac_warmup", count_key(&C::sac_warmup, 0)},
      {"sac_hidden", count_key(&C::sac_hidden, 1)},
      {"sac_batch", count_key(&C::sac_batch, 1)},
      {"sac_lr", real_key(&C::sac_lr, 0.0, 1.0)},
      {"eval_interval", count_key(&C::eval_interval, 1)},
      {"n_marginal_samples", count_key(&C::n_marginal_samples, 1)},
      {"replay_capacity", count_key(&C::replay_capacity, 1)},
      {"eval_episodes", count_key(&C::eval_episodes, 1)},
      {"eval_states", count_key(&C::eval_states, 1)},
      {"seed",
       [](const json& v, ExperimentConfig& c) {
         if (!v.is_number_unsigned()) throw std::invalid_argument("a non-negative integer");
         c.seed = v.get<std::uint64_t>();
       }},
      {"out_dir", string_key(&C::out_dir)},
  };
  return table;
}

json config_object(const ExperimentConfig& c, bool with_run_fields) {
  json j;
  j["env"] = c.env;
  j["gamma"] = c.gamma;
  j["expert_temperature"] = c.expert_temperature;
  j["expert_kp"] = c.expert_kp;
  j["expert_kd"] = c.expert_kd;
  j["expert_noise"] = c.expert_noise;
  j["n_trajectories"] = c.n_trajectories;
  j["episode_length"] = c.episode_length;
  j["density"] = c.density;
  j["density_hidden"] = c.density_hidden;
  j["density_layers"] = c.density_layers;
  j["density_components"] = c.density_components;
  j["density_epochs"] = c.density_epochs;
  j["density_batch"] = c.density_batch;
  j["density_lr"] = c.density_lr;
  j["density_spectral"] = c.density_spectral;
  j["ssm_variant"] = c.ssm_variant;
  j["ssm_slices"] = c.ssm_slices;
  j["lambda_pi"] = c.lambda_pi ? json(*c.lambda_pi) : json("auto");
  j["lambda_pi_max"] = c.lambda_pi_max;
  j["target_entropy_scale"] = c.target_entropy_scale;
  j["lambda_f"] = c.lambda_f;
  j["reward_form"] = c.reward_form;
  j["rl_iterations"] = c.rl_iterations;
  j["sac_steps"] = c.sac_steps;
  j["sac_warmup"] = c.sac_warmup;
  j["sac_hidden"] = c.sac_hidden;
  j["sac_batch"] = c.sac_batch;
  j["sac_lr"] = c.sac_lr;
  j["eval_interval"] = c.eval_interval;
  j["n_marginal_samples"] = c.n_marginal_samples;
  j["replay_capacity"] = c.replay_capacity;
  j["eval_episodes"] = c.eval_episodes;
  j["eval_states"] = c.eval_states;
  if (with_run_fields) {
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
  }
  return j;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

void stamp(ckpt::Checkpoint& c, const ExperimentConfig& config) {
  const std::uint64_t h = fnv1a(config_object(config, false).dump());
  c.meta["config_hash_hi"] = double(h >> 32);
  c.meta["config_hash_lo"] = double(h & 0xFFFFFFFFULL);
  c.meta["seed"] = double(config.seed);
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
  ExperimentConfig c;
  const auto& table = setters();
  for (const auto& [key, value] : j.items()) {
    auto it = table.find(key);
    if (it == table.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
    try {
      it->second(value, c);
    } catch (const std::invalid_argument& e) {
      bad_type(key, e.what());
    }
  }
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& config) {
  return config_object(config, true).dump(2);
}

std::string config_hash(const ExperimentConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(config_object(config, false).dump())));
  return buf;
}

envs::RegisteredEnv make_environment(const ExperimentConfig& config) {
  auto env = envs::make_env(config.env, config.gamma);
  if (!env.is_tabular()) {
    envs::PointMassSpec spec;
    spec.episode_length = config.episode_length;
    env.continuous = std::make_shared<envs::PointMassEnv>(spec);
  }
  return env;
}

// ---------------------------------------------------------------- demos

MatrixXd DemoSet::joint_samples() const {
  MatrixXd x(state_dim + action_dim, Index(records.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    x.col(Index(i)) << records[i].s, records[i].a;
  }
  return x;
}

SoftmaxPolicy tabular_expert(const ExperimentConfig& config, const TabularMdp& mdp) {
  return rl::soft_policy_iteration(mdp, config.expert_temperature, 1e-12).policy;
}

rl::GaussianActionModel continuous_expert(const ExperimentConfig& config,
                                          const ContinuousEnv& env) {
  const double kp = config.expert_kp, kd = config.expert_kd, bound = env.action_bound();
  return {[=](const VectorXd& s) { return envs::pd_controller(s, kp, kd, bound); },
          VectorXd::Constant(env.action_dim(), config.expert_noise)};
}

DemoSet generate_demos(const ExperimentConfig& config) {
  const auto env = make_environment(config);
  DemoSet d;
  d.env = config.env;
  d.seed = config.seed;
  d.count = config.n_trajectories;
  d.config_hash = config_hash(config);
  d.state_dim = env.state_dim();
  d.action_dim = env.action_dim();
  std::mt19937_64 seeder(config.seed);
  if (env.is_tabular()) {
    const auto& mdp = *env.tabular;
    const auto expert = tabular_expert(config, mdp);
    char desc[96];
    std::snprintf(desc, sizeof desc, "soft-value-iteration temperature=%.17g",
                  config.expert_temperature);
    d.expert = desc;
    d.expert_return = rl::exact_return(mdp, expert, mdp.reward()).mean;
    for (std::size_t e = 0; e < config.n_trajectories; ++e) {
      const auto traj = sample_trajectory(mdp, expert, config.episode_length, seeder());
      for (const auto& st : traj.steps) {
        d.records.push_back({e, st.t, env.encoding.state(st.s), env.encoding.action(st.a)});
      }
    }
    return d;
  }
  const auto& cenv = *env.continuous;
  const auto expert = continuous_expert(config, cenv);
  char desc[128];
  std::snprintf(desc, sizeof desc, "pd-controller kp=%.17g kd=%.17g noise=%.17g", config.expert_kp,
                config.expert_kd, config.expert_noise);
  d.expert = desc;
  std::normal_distribution<double> normal;
  const double bound = cenv.action_bound();
  double total = 0.0;
  for (std::size_t e = 0; e < config.n_trajectories; ++e) {
    std::mt19937_64 rng(seeder());
    VectorXd s = cenv.reset(rng);
    for (std::size_t t = 0; t < config.episode_length; ++t) {
      VectorXd a = expert.mean(s);
      for (Index i = 0; i < a.size(); ++i) a(i) += expert.std_dev(i) * normal(rng);
      a = a.cwiseMax(-bound).cwiseMin(bound);
      d.records.push_back({e, t, s, a});
      total += cenv.reward(s, a);
      s = cenv.step(s, a);
    }
  }
  d.expert_return = total / double(config.n_trajectories);
  return d;
}

void write_demos(const DemoSet& d, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  char num[40];
  auto real = [&](double v) {
    std::snprintf(num, sizeof num, "%.17g", v);
    return std::string(num);
  };
  out << "# env=" << d.env << '\n'
      << "# expert=" << d.expert << '\n'
      << "# seed=" << d.seed << '\n'
      << "# count=" << d.count << '\n'
      << "# expert_return=" << real(d.expert_return) << '\n'
      << "# config_hash=" << d.config_hash << '\n';
  out << "episode,t";
  for (Index i = 0; i < d.state_dim; ++i) out << ",s_" << i;
  for (Index i = 0; i < d.action_dim; ++i) out << ",a_" << i;
  out << '\n';
  for (const auto& r : d.records) {
    out << r.episode << ',' << r.t;
    for (Index i = 0; i < r.s.size(); ++i) out << ',' << real(r.s(i));
    for (Index i = 0; i < r.a.size(); ++i) out << ',' << real(r.a(i));
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_real(const std::string& s, std::size_t line_no) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) {
    throw std::runtime_error("demos line " + std::to_string(line_no) + ": bad number '" + s + "'");
  }
  return v;
}

}  // namespace

DemoSet read_demos(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open demos '" + path.string() + "'");
  DemoSet d;
  std::map<std::string, std::string> header;
  std::string line;
  std::size_t line_no = 0;
  bool have_columns = false;
  std::size_t n_cols = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw std::runtime_error("demos line " + std::to_string(line_no) + ": bad provenance");
      }
      header[line.substr(2, eq - 2)] = line.substr(eq + 1);
      continue;
    }
    const auto cells = split(line, ',');
    if (!have_columns) {
      if (cells.size() < 3 || cells[0] != "episode" || cells[1] != "t") {
        throw std::runtime_error("demos: missing 'episode,t,...' column header");
      }
      for (std::size_t i = 2; i < cells.size(); ++i) {
        const bool state = cells[i].rfind("s_", 0) == 0;
        if (state && d.action_dim > 0) throw std::runtime_error("demos: state column after action");
        (state ? d.state_dim : d.action_dim) += 1;
        if (!state && cells[i].rfind("a_", 0) != 0) {
          throw std::runtime_error("demos: unexpected column '" + cells[i] + "'");
        }
      }
      n_cols = cells.size();
      have_columns = true;
      continue;
    }
    if (cells.size() != n_cols) {
      throw std::runtime_error("demos line " + std::to_string(line_no) + ": expected " +
                               std::to_string(n_cols) + " fields, got " +
                               std::to_string(cells.size()));
    }
    DemoRecord r;
    r.episode = std::size_t(parse_real(cells[0], line_no));
    r.t = std::size_t(parse_real(cells[1], line_no));
    r.s.resize(d.state_dim);
    r.a.resize(d.action_dim);
    for (Index i = 0; i < d.state_dim; ++i) r.s(i) = parse_real(cells[2 + i], line_no);
    for (Index i = 0; i < d.action_dim; ++i) {
      r.a(i) = parse_real(cells[2 + d.state_dim + i], line_no);
    }
    if (!d.records.empty() && d.records.back().episode == r.episode) {
      if (r.t != d.records.back().t + 1) {
        throw std::runtime_error("demos line " + std::to_string(line_no) +
                                 ": timesteps of an episode must be contiguous");
      }
    } else if (r.t != 0) {
      throw std::runtime_error("demos line " + std::to_string(line_no) +
                               ": episodes must start at t=0");
    }
    d.records.push_back(std::move(r));
  }
  if (!have_columns) throw std::runtime_error("demos: no column header");
  if (d.records.empty()) throw std::runtime_error("demos: no records");
  auto field = [&](const char* key) {
    auto it = header.find(key);
    if (it == header.end()) throw std::runtime_error(std::string("demos: missing '# ") + key + "='");
    return it->second;
  };
  d.env = field("env");
  d.expert = field("expert");
  d.seed = std::stoull(field("seed"));
  d.count = std::stoull(field("count"));
  d.expert_return = std::stod(field("expert_return"));
  d.config_hash = field("config_hash");
  return d;
}

// ---------------------------------------------------------------- density

DensityFit fit_density(const ExperimentConfig& config, const DemoSet& demos) {
  const MatrixXd data = demos.joint_samples();
  const std::vector<Index> hidden(config.density_layers, Index(config.density_hidden));
  DensityFit out;
  if (config.density == "made") {
    density::MadeConfig mc;
    mc.hidden = hidden;
    mc.components = Index(config.density_components);
    mc.spectral = config.density_spectral;
    mc.epochs = config.density_epochs;
    mc.batch_size = config.density_batch;
    mc.learning_rate = config.density_lr;
    mc.seed = config.seed;
    out.checkpoint = density::to_checkpoint(density::made_fit(data, mc, &out.curve));
  } else {
    density::EbmConfig ec;
    ec.hidden = hidden;
    ec.spectral = config.density_spectral;
    ec.ssm.n_slices = config.ssm_slices;
    ec.ssm.variant = config.ssm_variant == "sliced_norm" ? density::SsmVariant::SlicedNorm
                                                         : density::SsmVariant::Standard;
    ec.epochs = config.density_epochs;
    ec.batch_size = config.density_batch;
    ec.learning_rate = config.density_lr;
    ec.seed = config.seed;
    out.checkpoint = density::to_checkpoint(density::ebm_fit(data, ec, &out.curve));
  }
  stamp(out.checkpoint, config);
  out.checkpoint.meta["state_dim"] = double(demos.state_dim);
  out.checkpoint.meta["action_dim"] = double(demos.action_dim);
  return out;
}

VectorXd density_log_q(const ckpt::Checkpoint& model, const MatrixXd& samples) {
  if (model.kind == "made") {
    const auto m = density::made_from_checkpoint(model);
    return m.log_density(samples).array() + m.standardizer().log_jacobian();
  }
  if (model.kind == "ebm") return density::ebm_from_checkpoint(model).log_density_unnormalized(samples);
  throw std::runtime_error("density checkpoint has kind '" + model.kind + "'");
}

MatrixXd tabular_log_q(const ckpt::Checkpoint& model, const envs::RegisteredEnv& env) {
  const auto& mdp = *env.tabular;
  const Index S = mdp.n_states(), A = mdp.n_actions();
  MatrixXd x(env.state_dim() + env.action_dim(), S * A);
  for (Index s = 0; s < S; ++s) {
    for (Index a = 0; a < A; ++a) x.col(s * A + a) << env.encoding.state(s), env.encoding.action(a);
  }
  const VectorXd lq = density_log_q(model, x);
  MatrixXd out(S, A);
  for (Index s = 0; s < S; ++s) {
    for (Index a = 0; a < A; ++a) out(s, a) = lq(s * A + a);
  }
  return out;
}

// ---------------------------------------------------------------- training

namespace {

MatrixXd standardized_rows(const MatrixXd& features) {
  const Eigen::RowVectorXd mean = features.colwise().mean();
  Eigen::RowVectorXd scale =
      (features.rowwise() - mean).array().square().colwise().mean().sqrt();
  for (Index j = 0; j < scale.size(); ++j) {
    if (scale(j) <= 1e-12) scale(j) = 1.0;
  }
  return (features.rowwise() - mean).array().rowwise() / scale.array();
}

void check_finite(double v, const std::string& what, std::size_t iteration) {
  if (!std::isfinite(v)) {
    throw DivergenceError("train: non-finite " + what + " at iteration " +
                          std::to_string(iteration));
  }
}

double elapsed(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string audit_line(std::size_t it, double aug, double lambda_pi) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "iteration %zu augmented_return %.17g lambda_pi %.17g", it, aug,
                lambda_pi);
  return buf;
}

ckpt::Checkpoint softmax_checkpoint(const SoftmaxPolicy& pi) {
  ckpt::Checkpoint c;
  c.kind = "softmax";
  c.widths = {std::uint32_t(pi.n_states()), std::uint32_t(pi.n_actions())};
  c.arrays["logits"] = pi.logits();
  return c;
}

ckpt::Checkpoint gaussian_checkpoint(const GaussianPolicy& pi) {
  ckpt::Checkpoint c;
  c.kind = "gaussian";
  for (auto w : pi.mean_net().widths()) c.widths.push_back(std::uint32_t(w));
  ckpt::put_mlp(c, "mean_net", pi.mean_net());
  c.arrays["log_std"] = pi.raw_log_std()->value;
  return c;
}

// Streams metrics rows and audit lines to disk when an output directory is set.
class RunLog {
 public:
  RunLog(const ExperimentConfig& config, const std::optional<fs::path>& out_dir) {
    if (!out_dir) return;
    fs::create_directories(*out_dir);
    const auto paths = RunPaths::in(*out_dir, config.seed);
    metrics_.emplace(paths.metrics.string(), config_hash(config), config.seed);
    audit_.open(paths.audit);
    if (!audit_) throw std::runtime_error("cannot open '" + paths.audit.string() + "'");
    audit_ << "# config_hash=" << config_hash(config) << "\n# seed=" << config.seed << '\n';
  }
  void row(TrainResult& result, const rl::MetricsRow& r) {
    result.metrics.push_back(r);
    result.audit.push_back(audit_line(r.iteration, r.augmented_return, r.lambda_pi));
    if (metrics_) metrics_->append(r);
    line(result.audit.back());
  }
  void line(const std::string& text) {
    if (audit_.is_open()) audit_ << text << std::endl;
  }

 private:
  std::optional<rl::MetricsWriter> metrics_;
  std::ofstream audit_;
};

struct TemperatureChoice {
  double lambda_pi;
  rl::SoftPolicyResult result;
};

// Solves for the policy at a given lambda_pi; 0 selects the greedy policy.
rl::SoftPolicyResult solve(const TabularMdp& mdp, double lambda_pi, double temperature_factor) {
  if (lambda_pi <= 0.0) return rl::greedy_policy_iteration(mdp, 1e-10);
  return rl::soft_policy_iteration(mdp, lambda_pi * temperature_factor, 1e-10);
}

// Bisection on log lambda_pi toward the target mean policy entropy, bounded
// above by lambda_max.
TemperatureChoice tune_temperature(const TabularMdp& mdp, double target, double lambda_max,
                                   double factor) {
  auto at = [&](double lam) { return solve(mdp, lam, factor); };
  auto top = at(lambda_max);
  if (rl::mean_policy_entropy(mdp, top.policy) <= target) return {lambda_max, std::move(top)};
  double lo = std::log(lambda_max * 1e-4), hi = std::log(lambda_max);
  for (int k = 0; k < 40; ++k) {
    const double mid = 0.5 * (lo + hi);
    if (rl::mean_policy_entropy(mdp, at(std::exp(mid)).policy) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double lam = std::exp(lo);
  return {lam, at(lam)};
}

TrainResult train_tabular(const ExperimentConfig& config, const ckpt::Checkpoint& density_model,
                          const envs::RegisteredEnv& env,
                          const std::optional<fs::path>& out_dir, RunLog& log) {
  const auto start = std::chrono::steady_clock::now();
  const auto& mdp = *env.tabular;
  const auto expert = tabular_expert(config, mdp);
  const MatrixXd log_q = tabular_log_q(density_model, env);
  rl::AugmentedRewardConfig rcfg;
  rcfg.lambda_f = config.lambda_f;
  rcfg.gamma = config.gamma;
  rcfg.use_alg1_form = config.reward_form == "alg1";
  const double factor = rcfg.use_alg1_form ? 1.0 : 1.0 + config.gamma;
  const double target = config.target_entropy_scale * std::log(double(mdp.n_actions()));

  TrainResult result;
  SoftmaxPolicy pi = SoftmaxPolicy::uniform(mdp.n_states(), mdp.n_actions());
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t it = 1; it <= config.rl_iterations; ++it) {
    MatrixXd reward = log_q;
    if (config.lambda_f > 0.0) reward += config.lambda_f * tabular_reward_f(env, pi, rcfg);
    if (!reward.allFinite()) {
      throw DivergenceError("train: non-finite reward table at iteration " + std::to_string(it));
    }
    const TabularMdp shaped = mdp.with_reward(reward);
    TemperatureChoice choice =
        config.lambda_pi ? TemperatureChoice{*config.lambda_pi, solve(shaped, *config.lambda_pi, factor)}
                         : tune_temperature(shaped, target, config.lambda_pi_max, factor);
    pi = choice.result.policy;

    rl::MetricsRow row;
    row.iteration = it;
    // Scored under the reward this policy induces, so iterations compare.
    MatrixXd own = log_q;
    if (config.lambda_f > 0.0) own += config.lambda_f * tabular_reward_f(env, pi, rcfg);
    const double tau = choice.lambda_pi * factor;
    if (tau > 0.0) {
      own -= tau * pi.log_probabilities().unaryExpr([](double v) { return std::isfinite(v) ? v : 0.0; });
    }
    row.augmented_return = rl::exact_return(mdp, pi, own).mean;
    row.env_return = rl::exact_return(mdp, pi, mdp.reward()).mean;
    row.normalized_kl = rl::evaluate_policy_kl(mdp, pi, expert);
    row.lambda_pi = choice.lambda_pi;
    row.wallclock = elapsed(start);
    check_finite(row.augmented_return, "augmented return", it);
    check_finite(row.normalized_kl, "normalized KL", it);
    log.row(result, row);

    if (row.augmented_return > best) {
      best = row.augmented_return;
      result.selected_iteration = it;
      result.selected_augmented_return = best;
      result.policy = softmax_checkpoint(pi);
      result.policy.meta["lambda_pi"] = choice.lambda_pi;
      result.policy.meta["selected_iteration"] = double(it);
      result.policy.meta["augmented_return"] = best;
      result.policy.meta["env_steps"] = 0.0;
      stamp(result.policy, config);
      if (out_dir) ckpt::save(result.policy, RunPaths::in(*out_dir, config.seed).policy);
    }
  }
  return result;
}

TrainResult train_continuous(const ExperimentConfig& config,
                             const ckpt::Checkpoint& density_model,
                             const envs::RegisteredEnv& env,
                             const std::optional<fs::path>& out_dir, RunLog& log) {
  const auto start = std::chrono::steady_clock::now();
  const auto& cenv = *env.continuous;
  const Index sd = cenv.state_dim(), ad = cenv.action_dim();
  const double bound = cenv.action_bound();
  const auto expert = continuous_expert(config, cenv);
  const rl::GaussianActionModel random{[ad](const VectorXd&) { return VectorXd(VectorXd::Zero(ad)); },
                                       VectorXd::Constant(ad, bound)};

  const VectorXd mean = density_model.array_at("standardizer.mean").col(0).head(sd);
  const VectorXd scale = density_model.array_at("standardizer.scale").col(0).head(sd);
  auto z = [&](const VectorXd& s) { return VectorXd((s - mean).array() / scale.array()); };
  auto log_q = [&](const VectorXd& s, const VectorXd& a) {
    MatrixXd x(sd + ad, 1);
    x << s, a;
    return density_log_q(density_model, x)(0);
  };

  rl::AugmentedRewardConfig rcfg;
  rcfg.lambda_f = config.lambda_f;
  rcfg.gamma = config.gamma;
  rcfg.use_alg1_form = config.reward_form == "alg1";
  rl::SacConfig scfg;
  scfg.gamma = config.gamma;
  scfg.batch_size = config.sac_batch;
  scfg.hidden = Index(config.sac_hidden);
  scfg.actor_lr = scfg.critic_lr = scfg.alpha_lr = config.sac_lr;
  scfg.auto_alpha = !config.lambda_pi.has_value();
  scfg.initial_alpha = config.lambda_pi.value_or(0.1);
  scfg.action_bound = bound;

  std::mt19937_64 rng(config.seed);
  rl::SacLearner learner(sd, ad, scfg, rng);
  rl::TransitionBuffer transitions;
  rl::TimestepReplayBuffer states(config.replay_capacity, config.seed + 1);
  rl::RbfCritic critic(1.0);
  std::uniform_real_distribution<double> uniform(-bound, bound);

  auto r_f = [&](const VectorXd& s, const VectorXd& s2, std::size_t t) {
    std::vector<std::pair<VectorXd, VectorXd>> pairs;
    for (std::size_t i = 0; i < config.n_marginal_samples; ++i) {
      pairs.emplace_back(states.sample(t).state, states.sample(t + 1).state);
    }
    critic.observe(pairs);
    return rl::reward_f(critic, z(s), z(s2), states, t, rcfg, config.n_marginal_samples);
  };

  TrainResult result;
  double best = -std::numeric_limits<double>::infinity();
  VectorXd s = cenv.reset(rng);
  std::size_t t = 0, iteration = 0;
  for (std::size_t step = 1; step <= config.sac_steps; ++step) {
    VectorXd a(ad);
    if (step <= config.sac_warmup) {
      for (Index i = 0; i < ad; ++i) a(i) = uniform(rng);
    } else {
      a = learner.policy.sample(s, rng).cwiseMax(-bound).cwiseMin(bound);
    }
    const VectorXd s2 = cenv.step(s, a);
    states.add(t, z(s));
    double r = log_q(s, a);
    if (config.lambda_f > 0.0) r += config.lambda_f * r_f(s, s2, t);
    if (!std::isfinite(r)) throw DivergenceError("train: non-finite reward at step " + std::to_string(step));
    transitions.add({s, a, r, s2, false});
    s = s2;
    if (++t == cenv.episode_length()) {
      states.add(t, z(s));
      t = 0;
      s = cenv.reset(rng);
    }
    if (step > config.sac_warmup && transitions.size() >= config.sac_batch) {
      rl::sac_step(learner, transitions, rng);
    }
    if (step % config.eval_interval != 0 && step != config.sac_steps) continue;

    // Augmented return of fresh rollouts, scored without environment reward.
    ++iteration;
    std::mt19937_64 eval_rng(config.seed * 7919 + iteration);
    double aug = 0.0;
    const std::size_t n_eval = std::max<std::size_t>(1, config.eval_episodes);
    for (std::size_t e = 0; e < n_eval; ++e) {
      VectorXd x = cenv.reset(eval_rng);
      for (std::size_t k = 0; k < cenv.episode_length(); ++k) {
        const VectorXd u = learner.policy.sample(x, eval_rng).cwiseMax(-bound).cwiseMin(bound);
        const VectorXd x2 = cenv.step(x, u);
        aug += log_q(x, u) + learner.alpha() * rl::reward_pi(learner.policy, x, u, rcfg);
        if (config.lambda_f > 0.0) {
          aug += config.lambda_f *
                 rl::reward_f(critic, z(x), z(x2), states, k, rcfg, config.n_marginal_samples);
        }
        x = x2;
      }
    }
    rl::MetricsRow row;
    row.iteration = iteration;
    row.env_steps = step;
    row.augmented_return = aug / double(n_eval);
    row.env_return = rl::evaluate_return(cenv, learner.policy, n_eval, config.seed + iteration).mean;
    row.normalized_kl = rl::evaluate_policy_kl(cenv, rl::GaussianActionModel::of(learner.policy),
                                               expert, random, config.eval_states,
                                               config.seed + iteration);
    row.lambda_pi = learner.alpha();
    row.wallclock = elapsed(start);
    check_finite(row.augmented_return, "augmented return", iteration);
    log.row(result, row);
    if (row.augmented_return > best) {
      best = row.augmented_return;
      result.selected_iteration = iteration;
      result.selected_augmented_return = best;
      result.policy = gaussian_checkpoint(learner.policy);
      result.policy.meta["lambda_pi"] = row.lambda_pi;
      result.policy.meta["selected_iteration"] = double(iteration);
      result.policy.meta["augmented_return"] = best;
      result.policy.meta["env_steps"] = double(step);
      stamp(result.policy, config);
      if (out_dir) ckpt::save(result.policy, RunPaths::in(*out_dir, config.seed).policy);
    }
  }
  return result;
}

}  // namespace

MatrixXd tabular_reward_f(const envs::RegisteredEnv& env, const SoftmaxPolicy& policy,
                          const rl::AugmentedRewardConfig& rcfg) {
  const auto& mdp = *env.tabular;
  const Index S = mdp.n_states(), A = mdp.n_actions();
  const MatrixXd z = standardized_rows(env.encoding.state_features);
  MatrixXd kernel(S, S);
  for (Index i = 0; i < S; ++i) {
    for (Index j = 0; j < S; ++j) kernel(i, j) = std::exp(-(z.row(i) - z.row(j)).squaredNorm());
  }
  const auto occ = occupancy_measure(mdp, policy, 1e-12);
  const VectorXd d = occ.state_occupancy() / occ.mass;
  const VectorXd kd = kernel * d;
  rl::RbfCritic critic(1.0);
  critic.set_normalizer(d.dot(kd));
  // E_{x~d}[e^{f(y, x)}] = e * (K d)(y) / normalizer.
  const double scale = std::numbers::e / critic.normalizer();
  MatrixXd r(S, A);
  for (Index s = 0; s < S; ++s) {
    for (Index a = 0; a < A; ++a) {
      const Index s2 = mdp.next(s, a);
      const double f = critic.value(z.row(s).transpose(), z.row(s2).transpose());
      const double lead = rcfg.use_alg1_form ? f : rcfg.gamma * f;
      r(s, a) = lead - rcfg.gamma / std::numbers::e * scale * (kd(s2) + kd(s));
    }
  }
  return r;
}

TrainResult train(const ExperimentConfig& config, const ckpt::Checkpoint& density_model,
                  const std::optional<fs::path>& out_dir) {
  if (density_model.kind != config.density) {
    throw std::invalid_argument("train: density checkpoint kind '" + density_model.kind +
                                "' does not match config density '" + config.density + "'");
  }
  const auto env = make_environment(config);
  RunLog log(config, out_dir);
  TrainResult r;
  try {
    r = env.is_tabular() ? train_tabular(config, density_model, env, out_dir, log)
                         : train_continuous(config, density_model, env, out_dir, log);
  } catch (const DivergenceError& e) {
    log.line(std::string("diverged: ") + e.what());
    throw;
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "selected iteration %zu by augmented_return %.17g",
                r.selected_iteration, r.selected_augmented_return);
  r.audit.emplace_back(buf);
  log.line(buf);
  return r;
}

SoftmaxPolicy softmax_from_checkpoint(const ckpt::Checkpoint& c) {
  if (c.kind != "softmax") throw std::runtime_error("expected a softmax policy checkpoint");
  return SoftmaxPolicy(c.array_at("logits"));
}

GaussianPolicy gaussian_from_checkpoint(const ckpt::Checkpoint& c) {
  if (c.kind != "gaussian") throw std::runtime_error("expected a gaussian policy checkpoint");
  return GaussianPolicy(ckpt::get_mlp(c, "mean_net"), c.array_at("log_std").col(0));
}

// ---------------------------------------------------------------- evaluation

std::string EvalSummary::to_json() const {
  json j;
  j["env"] = env;
  j["seed"] = seed;
  j["config_hash"] = config_hash;
  j["env_return_mean"] = env_return_mean;
  j["env_return_stderr"] = env_return_stderr;
  j["expert_return"] = expert_return;
  j["normalized_kl"] = normalized_kl;
  j["reverse_kl"] = reverse_kl ? json(*reverse_kl) : json(nullptr);
  j["random_reverse_kl"] = random_reverse_kl ? json(*random_reverse_kl) : json(nullptr);
  j["env_steps"] = env_steps;
  return j.dump(2);
}

EvalSummary evaluate(const ExperimentConfig& config, const ckpt::Checkpoint& policy) {
  const auto env = make_environment(config);
  EvalSummary out;
  out.env = config.env;
  out.seed = config.seed;
  out.config_hash = config_hash(config);
  if (auto it = policy.meta.find("env_steps"); it != policy.meta.end()) {
    out.env_steps = std::size_t(it->second);
  }
  if (env.is_tabular()) {
    const auto& mdp = *env.tabular;
    const auto pi = softmax_from_checkpoint(policy);
    const auto expert = tabular_expert(config, mdp);
    out.env_return_mean = rl::exact_return(mdp, pi, mdp.reward()).mean;
    out.expert_return = rl::exact_return(mdp, expert, mdp.reward()).mean;
    out.normalized_kl = rl::evaluate_policy_kl(mdp, pi, expert);
    const auto occ_e = occupancy_measure(mdp, expert, 1e-12);
    out.reverse_kl = reverse_kl_occupancy(occupancy_measure(mdp, pi, 1e-12), occ_e);
    out.random_reverse_kl = reverse_kl_occupancy(
        occupancy_measure(mdp, SoftmaxPolicy::uniform(mdp.n_states(), mdp.n_actions()), 1e-12),
        occ_e);
    return out;
  }
  const auto& cenv = *env.continuous;
  const auto pi = gaussian_from_checkpoint(policy);
  const auto expert = continuous_expert(config, cenv);
  const auto ret = rl::evaluate_return(cenv, pi, config.eval_episodes, config.seed);
  out.env_return_mean = ret.mean;
  out.env_return_stderr = ret.std_error;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal;
  double total = 0.0;
  for (std::size_t e = 0; e < config.eval_episodes; ++e) {
    VectorXd s = cenv.reset(rng);
    for (std::size_t t = 0; t < cenv.episode_length(); ++t) {
      VectorXd a = expert.mean(s);
      for (Index i = 0; i < a.size(); ++i) a(i) += expert.std_dev(i) * normal(rng);
      a = a.cwiseMax(-cenv.action_bound()).cwiseMin(cenv.action_bound());
      total += cenv.reward(s, a);
      s = cenv.step(s, a);
    }
  }
  out.expert_return = total / double(config.eval_episodes);
  const Index ad = cenv.action_dim();
  const rl::GaussianActionModel random{[ad](const VectorXd&) { return VectorXd(VectorXd::Zero(ad)); },
                                       VectorXd::Constant(ad, cenv.action_bound())};
  out.normalized_kl = rl::evaluate_policy_kl(cenv, rl::GaussianActionModel::of(pi), expert, random,
                                             config.eval_states, config.seed);
  return out;
}

RunPaths RunPaths::in(const fs::path& dir, std::uint64_t seed) {
  const std::string tag = "_seed" + std::to_string(seed);
  return {dir / ("demos" + tag + ".csv"),   dir / ("density" + tag + ".ckpt"),
          dir / ("density_curve" + tag + ".csv"), dir / ("policy" + tag + ".ckpt"),
          dir / "metrics.csv", dir / ("audit" + tag + ".log"),
          dir / ("eval" + tag + ".json")};
}

}  // namespace ndi::pipeline
