#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "small_config.hpp"
#include "twm/errors.hpp"
#include "twm/train/checkpoint.hpp"

using namespace twm;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  fs::create_directories(fs::temp_directory_path() / "twm_test_ckpt");
  return fs::temp_directory_path() / "twm_test_ckpt" / name;
}

template <typename T>
std::vector<T> values_of(const ParameterSet<T>& ps) {
  std::vector<T> out;
  for (const auto& e : ps.entries()) {
    auto d = e.value.data();
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

template <typename T>
std::vector<T> moments_of(const ParameterSet<T>& ps) {
  std::vector<T> out;
  for (const auto& e : ps.entries()) {
    out.insert(out.end(), e.first_moment.begin(), e.first_moment.end());
    out.insert(out.end(), e.second_moment.begin(), e.second_moment.end());
  }
  return out;
}

}  // namespace

TEST_CASE("config defaults are the full-size hyperparameters") {
  TrainConfig c;
  CHECK(c.tau == 20.0);
  CHECK(c.gamma == 0.99);
  CHECK(c.lambda == 0.95);
  CHECK(c.batch_size == 100);
  CHECK(c.seq_len == 16);
  CHECK(c.imag_batch == 400);
  CHECK(c.horizon == 15);
  CHECK(c.alpha1 == 5.0);
  CHECK(c.alpha2 == 0.01);
  CHECK(c.beta1 == 10.0);
  CHECK(c.beta2 == 50.0);
  CHECK(c.eta == 0.01);
  CHECK(c.entropy_threshold == 0.1);
  CHECK(c.lr_obs == 1e-4);
  CHECK(c.lr_dyn == 1e-4);
  CHECK(c.lr_actor == 1e-4);
  CHECK(c.lr_critic == 1e-5);
  CHECK(c.env_steps == 100000);
  CHECK(c.frame_skip == 4);
  CHECK(c.frame_stack == 4);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("config text round trip and symbols") {
  auto c = testing::small_config();
  c.set("seed", "42");
  c.set("policy_input", "z_and_h");
  const auto back = TrainConfig::parse(c.annotated_text());
  CHECK(back.canonical_text() == c.canonical_text());
  const auto text = c.annotated_text();
  for (const char* sym : {"τ", "γ", "λ", "N ", "ℓ", "M ", "H ", "α1", "α2", "β1", "β2", "η", "Γ"})
    CHECK_MESSAGE(text.find(sym) != std::string::npos, sym);
  const auto keys = TrainConfig::keys();
  for (const char* k : {"tau", "gamma", "lambda", "batch_size", "seq_len", "imag_batch", "horizon", "alpha1", "alpha2",
                        "beta1", "beta2", "eta", "entropy_threshold"})
    CHECK(std::find(keys.begin(), keys.end(), k) != keys.end());
}

TEST_CASE("config errors") {
  TrainConfig c;
  CHECK_THROWS_AS(c.set("no_such_key", "1"), ConfigError);
  CHECK_THROWS_AS(c.set("seq_len", "abc"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::parse("tau 3\n"), ConfigError);
  auto bad = testing::small_config();
  bad.imag_batch = bad.batch_size * bad.seq_len + 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = testing::small_config();
  bad.entropy_threshold = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = testing::small_config();
  bad.alpha1 = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = testing::small_config();
  bad.policy_input = "h";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(TrainConfig::load("/nonexistent/file.cfg"), ConfigError);
}

TEST_CASE("config derived settings") {
  auto c = testing::small_config();
  CHECK(c.action_count() == 3);
  CHECK(c.dynamics().transformer.mem_len == 3 * c.seq_len - 1);
  c.entropy_threshold_off = true;
  CHECK(c.agent().entropy_threshold == 1.0);
  CHECK(c.agent().entropy_coef == 0.001);
  c.uniform_sampling = true;
  CHECK(std::isinf(c.sampling_temperature()));
  c.no_reward_tokens = true;
  CHECK_FALSE(c.dynamics().reward_tokens);
}

TEST_CASE("collection stores transitions and resets on done") {
  auto cfg = testing::small_config();
  cfg.env_steps = 400;
  Trainer t(cfg);
  t.collect(400, true);
  CHECK(t.counters().env_steps == 400);
  CHECK(t.dataset().size() == 400);
  REQUIRE(t.counters().episodes >= 1);
  const auto& d = t.dataset();
  bool checked = false;
  for (std::int64_t i = 0; i + 1 < d.size(); ++i)
    if (d.done(i)) {
      // first observation of the next episode: all stack slots equal
      const auto o = d.observation(i + 1);
      const auto n = o.size() / 4;
      for (int s = 1; s < 4; ++s) CHECK(std::equal(o.begin(), o.begin() + n, o.begin() + s * n));
      checked = true;
    }
  CHECK(checked);
  CHECK(t.episodes().size() == static_cast<std::size_t>(t.counters().episodes));
}

TEST_CASE("world model step returns N*l latents; losses deterministic") {
  auto run = [] {
    Trainer t(testing::small_config());
    t.collect(64, true);
    auto wm = t.train_world_model();
    auto ag = t.train_agent(wm);
    return std::tuple{wm.latents.shape(), wm.observation.total, wm.dynamics.total, ag.terms.actor, ag.terms.critic};
  };
  const auto a = run(), b = run();
  const auto cfg = testing::small_config();
  CHECK(std::get<0>(a) == Shape{cfg.batch_size * cfg.seq_len, cfg.latent_vars * cfg.latent_classes});
  CHECK(a == b);
  CHECK(std::isfinite(std::get<1>(a)));
  CHECK(std::isfinite(std::get<2>(a)));
}

TEST_CASE("not enough data to train") {
  Trainer t(testing::small_config());
  t.collect(2, true);
  CHECK_THROWS_AS(t.train_world_model(), DataError);
}

TEST_CASE("losses decrease on a fixed batch at the default coefficients") {
  auto cfg = testing::small_config();
  cfg.alpha1 = 5.0;
  cfg.alpha2 = 0.01;
  Trainer t(cfg);
  t.collect(cfg.seq_len, true);  // one window, so every sampled batch is identical
  const auto first = t.train_world_model();
  WorldModelStep last;
  for (int i = 0; i < 100; ++i) last = t.train_world_model();
  CHECK(std::isfinite(last.observation.total));
  CHECK(std::isfinite(last.dynamics.total));
  CHECK(last.observation.total < first.observation.total);
  CHECK(last.dynamics.total < first.dynamics.total);
}

TEST_CASE("pretraining leaves the agent untouched; pretrain(0) is a no-op") {
  Trainer t(testing::small_config());
  t.collect(64, true);
  const auto actor = values_of(t.models().agent.actor_params());
  const auto critic = values_of(t.models().agent.critic_params());
  const auto obs = values_of(t.models().observation.params());
  t.pretrain(0);
  CHECK(values_of(t.models().observation.params()) == obs);
  CHECK(t.counters().wm_updates == 0);
  t.pretrain(3);
  CHECK(t.counters().wm_updates == 3);
  CHECK(t.counters().agent_updates == 0);
  CHECK(values_of(t.models().agent.actor_params()) == actor);
  CHECK(values_of(t.models().agent.critic_params()) == critic);
  CHECK(values_of(t.models().observation.params()) != obs);
}

TEST_CASE("agent updates do not touch the world model") {
  Trainer t(testing::small_config());
  t.collect(64, true);
  auto wm = t.train_world_model();
  const auto obs = values_of(t.models().observation.params());
  const auto dyn = values_of(t.models().dynamics.params());
  const auto actor = values_of(t.models().agent.actor_params());
  t.train_agent(wm);
  CHECK(values_of(t.models().observation.params()) == obs);
  CHECK(values_of(t.models().dynamics.params()) == dyn);
  CHECK(values_of(t.models().agent.actor_params()) != actor);
}

TEST_CASE("M larger than the world-model batch is rejected") {
  Trainer t(testing::small_config());
  t.collect(64, true);
  auto wm = t.train_world_model();
  wm.latents = slice(wm.latents, 0, 0, 4);
  CHECK_THROWS_AS(t.train_agent(wm), UsageError);
}

TEST_CASE("critic converges to zero under a zero-reward world model") {
  auto cfg = testing::small_config();
  cfg.lr_critic = 1e-3;
  Trainer t(cfg);
  t.collect(64, true);
  auto wm = t.train_world_model();  // frozen afterwards
  for (auto& e : t.models().dynamics.params().entries())
    if (e.name.rfind("dyn.reward_head.out", 0) == 0)
      std::fill(e.value.mutable_data().begin(), e.value.mutable_data().end(), 0.0f);
  for (int i = 0; i < 2000; ++i) t.train_agent(wm);
  NoGradGuard ng;
  auto& agent = t.models().agent;
  const auto v = agent.value(agent.policy_state(wm.latents, Tensor<float>()));
  double worst = 0;
  for (float x : v.data()) worst = std::max(worst, std::abs(static_cast<double>(x)));
  CHECK(worst < 1e-2);
}

TEST_CASE("run respects the budget and the update order") {
  auto cfg = testing::small_config();
  Trainer t(cfg);
  std::vector<LogRow> rows;
  t.run([&](const LogRow& r) { rows.push_back(r); });
  const auto& c = t.counters();
  CHECK(c.env_steps == cfg.env_steps);
  CHECK(c.iterations == (cfg.env_steps - cfg.prefill_steps) / cfg.train_every);
  CHECK(c.wm_updates == cfg.pretrain_steps + c.iterations);
  CHECK(c.agent_updates == c.iterations);
  CHECK(rows.size() == static_cast<std::size_t>(c.iterations));
  CHECK(t.entropy_history().size() == static_cast<std::size_t>(c.agent_updates));
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].counters.env_steps > rows[i - 1].counters.env_steps);
}

TEST_CASE("full run is bitwise reproducible") {
  auto cfg = testing::small_config();
  auto once = [&] {
    Trainer t(cfg);
    t.run();
    return std::pair{values_of(t.models().agent.actor_params()), values_of(t.models().dynamics.params())};
  };
  CHECK(once() == once());
}

TEST_CASE("checkpoint round trip") {
  auto cfg = testing::small_config();
  cfg.seed = 5;
  Trainer t(cfg);
  t.run();
  const auto path = temp_file("full.twm");
  save_checkpoint(path, t.models(), t.counters());
  const auto ck = load_checkpoint(path);
  const auto& m = *ck.models;
  CHECK(m.config.canonical_text() == cfg.canonical_text());
  CHECK(read_checkpoint_config(path).canonical_text() == cfg.canonical_text());
  CHECK(ck.counters.env_steps == t.counters().env_steps);
  CHECK(ck.counters.wm_updates == t.counters().wm_updates);
  CHECK(values_of(m.observation.params()) == values_of(t.models().observation.params()));
  CHECK(values_of(m.dynamics.params()) == values_of(t.models().dynamics.params()));
  CHECK(values_of(m.agent.actor_params()) == values_of(t.models().agent.actor_params()));
  CHECK(values_of(m.agent.critic_params()) == values_of(t.models().agent.critic_params()));
  CHECK(moments_of(m.dynamics.params()) == moments_of(t.models().dynamics.params()));
  CHECK(m.agent.actor_params().step() == t.models().agent.actor_params().step());
  std::ifstream in(path, std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  CHECK(std::string(magic, 4) == "TWM1");
}

TEST_CASE("partial checkpoint: encoder and actor only") {
  auto cfg = testing::small_config();
  Trainer t(cfg);
  t.run();
  const auto path = temp_file("partial.twm");
  save_checkpoint(path, t.models(), t.counters());
  const auto ck = load_checkpoint(path, CheckpointParts::kEncoderActor);
  const auto& m = *ck.models;
  const Models fresh(cfg);
  for (const auto& e : m.observation.params().entries()) {
    const auto& trained = t.models().observation.params().entries();
    auto it = std::find_if(trained.begin(), trained.end(), [&](const auto& x) { return x.name == e.name; });
    REQUIRE(it != trained.end());
    const bool encoder = e.name.rfind("enc.", 0) == 0;
    CHECK((std::vector<float>(e.value.data().begin(), e.value.data().end()) ==
           std::vector<float>(it->value.data().begin(), it->value.data().end())) == encoder);
  }
  CHECK(values_of(m.agent.actor_params()) == values_of(t.models().agent.actor_params()));
  CHECK(values_of(m.dynamics.params()) == values_of(fresh.dynamics.params()));
  CHECK(values_of(m.agent.critic_params()) == values_of(fresh.agent.critic_params()));
  CHECK(m.agent.actor_params().step() == 0);
  // evaluation needs encoder and actor only
  const auto a = evaluate_policy(cfg, m.observation, m.agent, nullptr, 2, 77);
  const auto b = evaluate_policy(cfg, t.models().observation, t.models().agent, nullptr, 2, 77);
  CHECK(a.scores == b.scores);
  CHECK(a.lengths == b.lengths);
}

TEST_CASE("corrupt checkpoints are rejected") {
  auto cfg = testing::small_config();
  Models m(cfg);
  const auto path = temp_file("c.twm");
  save_checkpoint(path, m, {});
  const auto size = fs::file_size(path);
  fs::resize_file(path, size / 2);
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  std::ofstream(temp_file("bad.twm"), std::ios::binary) << "XXXX1234";
  CHECK_THROWS_AS(load_checkpoint(temp_file("bad.twm")), DataError);
  CHECK_THROWS_AS(load_checkpoint(temp_file("missing.twm")), DataError);
}

TEST_CASE("evaluation is reproducible and z_and_h policies need the dynamics model") {
  auto cfg = testing::small_config();
  Models m(cfg);
  const auto a = evaluate_policy(cfg, m.observation, m.agent, nullptr, 3, 11);
  const auto b = evaluate_policy(cfg, m.observation, m.agent, nullptr, 3, 11);
  CHECK(a.scores == b.scores);
  CHECK(a.scores.size() == 3);
  cfg.policy_input = "z_and_h";
  Models h(cfg);
  CHECK_THROWS_AS(evaluate_policy(cfg, h.observation, h.agent, nullptr, 1, 1), UsageError);
  const auto c = evaluate_policy(cfg, h.observation, h.agent, &h.dynamics, 1, 1);
  CHECK(c.scores.size() == 1);
}

TEST_CASE("held-out dynamics evaluation") {
  auto cfg = testing::small_config();
  Models m(cfg);
  const auto data = collect_episodes(m, 1, 3);
  CHECK(data.size() > 0);
  CHECK(data.done(data.size() - 1));
  const auto terms = evaluate_dynamics(m.observation, m.dynamics, data, cfg.beta1, cfg.beta2, 1);
  CHECK(std::isfinite(terms.latent));
  CHECK(terms.latent > 0.0);
}
