#include "twm/train/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "twm/envs/environment.hpp"
#include "twm/replay/dataset.hpp"

namespace twm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <typename I>
I parse_int(const std::string& key, const std::string& v) {
  I out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  if (v == "inf" || v == "infinity") return std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

struct Field {
  const char* key;
  const char* comment;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

template <typename M>
Field field(const char* key, const char* comment, M TrainConfig::*member) {
  Field f{key, comment, {}, {}};
  f.get = [member](const TrainConfig& c) {
    const auto& v = c.*member;
    if constexpr (std::is_same_v<M, bool>) return std::string(v ? "true" : "false");
    else if constexpr (std::is_same_v<M, double>) return format_double(v);
    else if constexpr (std::is_same_v<M, std::string>) return v;
    else return std::to_string(v);
  };
  f.set = [member, key](TrainConfig& c, const std::string& s) {
    auto& v = c.*member;
    if constexpr (std::is_same_v<M, bool>) v = parse_bool(key, s);
    else if constexpr (std::is_same_v<M, double>) v = parse_double(key, s);
    else if constexpr (std::is_same_v<M, std::string>) v = s;
    else v = parse_int<M>(key, s);
  };
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      field("env", "environment id: minipong | coins", &TrainConfig::env),
      field("raw_size", "side of the raw rendered frame", &TrainConfig::raw_size),
      field("frame_size", "frame down-sampling (square side)", &TrainConfig::frame_size),
      field("frame_stack", "frame stack", &TrainConfig::frame_stack),
      field("frame_skip", "frame skip", &TrainConfig::frame_skip),
      field("max_episode_steps", "max agent steps per episode, 0 = environment default", &TrainConfig::max_episode_steps),
      field("terminate_on_life_loss", "terminate on life loss (adapters with lives only)", &TrainConfig::terminate_on_life_loss),
      field("max_noops", "max no-ops at reset (adapters with a no-op only)", &TrainConfig::max_noops),
      field("reward_transform", "none | tanh", &TrainConfig::reward_transform),
      field("seed", "master seed", &TrainConfig::seed),
      field("env_steps", "environment steps, prefill included", &TrainConfig::env_steps),
      field("prefill_steps", "random-policy steps before pretraining", &TrainConfig::prefill_steps),
      field("pretrain_steps", "world-model-only updates after prefill", &TrainConfig::pretrain_steps),
      field("train_every", "env steps per training iteration", &TrainConfig::train_every),
      field("wm_updates", "world-model updates per iteration", &TrainConfig::wm_updates),
      field("agent_updates", "agent updates per world-model update", &TrainConfig::agent_updates),
      field("eval_episodes", "evaluation episodes", &TrainConfig::eval_episodes),
      field("log_every", "iterations between metric rows", &TrainConfig::log_every),
      field("tau", "τ  dataset sampling temperature", &TrainConfig::tau),
      field("gamma", "γ  discount factor", &TrainConfig::gamma),
      field("lambda", "λ  GAE parameter", &TrainConfig::lambda),
      field("batch_size", "N  world model batch size", &TrainConfig::batch_size),
      field("seq_len", "ℓ  history length", &TrainConfig::seq_len),
      field("imag_batch", "M  imagination batch size", &TrainConfig::imag_batch),
      field("horizon", "H  imagination horizon", &TrainConfig::horizon),
      field("alpha1", "α1  encoder entropy coefficient", &TrainConfig::alpha1),
      field("alpha2", "α2  consistency loss coefficient", &TrainConfig::alpha2),
      field("beta1", "β1  reward coefficient", &TrainConfig::beta1),
      field("beta2", "β2  discount coefficient", &TrainConfig::beta2),
      field("eta", "η  actor entropy coefficient", &TrainConfig::eta),
      field("entropy_threshold", "Γ  actor entropy threshold", &TrainConfig::entropy_threshold),
      field("lr_obs", "observation learning rate", &TrainConfig::lr_obs),
      field("lr_dyn", "dynamics learning rate", &TrainConfig::lr_dyn),
      field("lr_actor", "actor learning rate", &TrainConfig::lr_actor),
      field("lr_critic", "critic learning rate", &TrainConfig::lr_critic),
      field("clip_norm", "global gradient norm clip, <= 0 disables", &TrainConfig::clip_norm),
      field("unimix", "uniform mixture in latent categoricals", &TrainConfig::unimix),
      field("latent_vars", "K  categorical variables per latent", &TrainConfig::latent_vars),
      field("latent_classes", "C  classes per variable", &TrainConfig::latent_classes),
      field("enc_channels", "first encoder stage width", &TrainConfig::enc_channels),
      field("enc_stages", "stride-2 encoder stages", &TrainConfig::enc_stages),
      field("xl_layers", "transformer layers", &TrainConfig::xl_layers),
      field("xl_dim", "transformer embedding size", &TrainConfig::xl_dim),
      field("xl_heads", "transformer heads", &TrainConfig::xl_heads),
      field("xl_head_dim", "transformer head size", &TrainConfig::xl_head_dim),
      field("xl_ff", "transformer feedforward size", &TrainConfig::xl_ff),
      field("mem_len", "attention memory in tokens, 0 = 3ℓ-1", &TrainConfig::mem_len),
      field("latent_units", "latent state predictor units", &TrainConfig::latent_units),
      field("latent_layers", "latent state predictor layers", &TrainConfig::latent_layers),
      field("reward_units", "reward predictor units", &TrainConfig::reward_units),
      field("reward_layers", "reward predictor layers", &TrainConfig::reward_layers),
      field("discount_units", "discount predictor units", &TrainConfig::discount_units),
      field("discount_layers", "discount predictor layers", &TrainConfig::discount_layers),
      field("actor_units", "actor units", &TrainConfig::actor_units),
      field("actor_layers", "actor layers", &TrainConfig::actor_layers),
      field("critic_units", "critic units", &TrainConfig::critic_units),
      field("critic_layers", "critic layers", &TrainConfig::critic_layers),
      field("uniform_sampling", "ablation: uniform dataset sampling (τ = ∞)", &TrainConfig::uniform_sampling),
      field("no_reward_tokens", "ablation: drop reward tokens from the transformer input", &TrainConfig::no_reward_tokens),
      field("policy_input", "z | z_and_h", &TrainConfig::policy_input),
      field("entropy_threshold_off", "ablation: plain entropy penalty (Γ = 1, η = 0.001)", &TrainConfig::entropy_threshold_off),
      field("weights_include_gamma", "loss weights keep the γ factor", &TrainConfig::weights_include_gamma),
      field("imagine_mode", "cached | vanilla", &TrainConfig::imagine_mode),
  };
  return f;
}

}  // namespace

std::vector<std::string> TrainConfig::keys() {
  std::vector<std::string> k;
  for (const auto& f : fields()) k.emplace_back(f.key);
  return k;
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields())
    if (key == f.key) {
      f.set(*this, trim(value));
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string TrainConfig::canonical_text() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

std::string TrainConfig::annotated_text() const {
  std::string out;
  for (const auto& f : fields()) out += "# " + std::string(f.comment) + "\n" + f.key + " = " + f.get(*this) + "\n";
  return out;
}

void TrainConfig::validate() const {
  auto nonneg = [](double v, const char* k) {
    if (!(v >= 0.0)) throw ConfigError(std::string(k) + " must be >= 0");
  };
  nonneg(alpha1, "alpha1");
  nonneg(alpha2, "alpha2");
  nonneg(beta1, "beta1");
  nonneg(beta2, "beta2");
  nonneg(eta, "eta");
  nonneg(lr_obs, "lr_obs");
  nonneg(lr_dyn, "lr_dyn");
  nonneg(lr_actor, "lr_actor");
  nonneg(lr_critic, "lr_critic");
  if (entropy_threshold < 0.0 || entropy_threshold > 1.0) throw ConfigError("entropy_threshold (Γ) must be in [0, 1]");
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (batch_size < 1 || seq_len < 1 || imag_batch < 1 || horizon < 1)
    throw ConfigError("N, ℓ, M and H must be >= 1");
  if (static_cast<std::int64_t>(imag_batch) > static_cast<std::int64_t>(batch_size) * seq_len)
    throw ConfigError("imag_batch (M) must not exceed batch_size x seq_len (N·ℓ)");
  if (env_steps < 0 || prefill_steps < 0 || pretrain_steps < 0) throw ConfigError("step budgets must be >= 0");
  if (prefill_steps > env_steps) throw ConfigError("prefill_steps exceed env_steps");
  if (train_every < 1 || wm_updates < 0 || agent_updates < 0) throw ConfigError("invalid update schedule");
  if (eval_episodes < 0 || log_every < 1) throw ConfigError("invalid eval/log settings");
  if (reward_transform != "none" && reward_transform != "tanh") throw ConfigError("reward_transform must be none|tanh");
  if (policy_input != "z" && policy_input != "z_and_h") throw ConfigError("policy_input must be z|z_and_h");
  if (imagine_mode != "cached" && imagine_mode != "vanilla") throw ConfigError("imagine_mode must be cached|vanilla");
  if (raw_size < frame_size) throw ConfigError("raw_size must be >= frame_size");
  (void)action_count();
  preprocess();
  observation().validate();
  dynamics().validate();
  agent().validate();
}

int TrainConfig::action_count() const { return envs::make_raw_environment(env, raw_size)->spec().action_count; }

envs::PreprocessConfig TrainConfig::preprocess() const {
  envs::PreprocessConfig p;
  p.frame_skip = frame_skip;
  p.size = frame_size;
  p.stack = frame_stack;
  p.max_episode_steps = max_episode_steps;
  p.terminate_on_life_loss = terminate_on_life_loss;
  p.max_noops = max_noops;
  p.reward_transform = reward_transform == "tanh" ? envs::RewardTransform::kTanh : envs::RewardTransform::kNone;
  return p;
}

ObservationConfig TrainConfig::observation() const {
  ObservationConfig o;
  o.height = frame_size;
  o.width = frame_size;
  o.stack = frame_stack;
  o.latent_vars = latent_vars;
  o.latent_classes = latent_classes;
  o.base_channels = enc_channels;
  o.stages = enc_stages;
  o.unimix = unimix;
  return o;
}

DynamicsConfig TrainConfig::dynamics() const {
  DynamicsConfig d;
  d.latent_vars = latent_vars;
  d.latent_classes = latent_classes;
  d.actions = action_count();
  d.seq_len = seq_len;
  d.transformer = {xl_layers, xl_dim, xl_heads, xl_head_dim, xl_ff, mem_len > 0 ? mem_len : 3 * seq_len - 1};
  d.latent_units = latent_units;
  d.latent_layers = latent_layers;
  d.reward_units = reward_units;
  d.reward_layers = reward_layers;
  d.discount_units = discount_units;
  d.discount_layers = discount_layers;
  d.gamma = gamma;
  d.unimix = unimix;
  d.reward_tokens = !no_reward_tokens;
  return d;
}

AgentConfig TrainConfig::agent() const {
  AgentConfig a;
  a.actions = action_count();
  a.latent_size = static_cast<std::int64_t>(latent_vars) * latent_classes;
  a.hidden_size = xl_dim;
  a.policy_input = policy_input == "z_and_h" ? PolicyInput::kZAndH : PolicyInput::kZ;
  a.actor_units = actor_units;
  a.actor_layers = actor_layers;
  a.critic_units = critic_units;
  a.critic_layers = critic_layers;
  a.gamma = gamma;
  a.lambda = lambda;
  a.entropy_coef = entropy_threshold_off ? 0.001 : eta;
  a.entropy_threshold = entropy_threshold_off ? 1.0 : entropy_threshold;
  a.weights_include_gamma = weights_include_gamma;
  return a;
}

double TrainConfig::sampling_temperature() const { return uniform_sampling ? kUniformTemperature : tau; }

ImagineMode TrainConfig::imagine() const {
  return imagine_mode == "vanilla" ? ImagineMode::kVanilla : ImagineMode::kCached;
}

}  // namespace twm
