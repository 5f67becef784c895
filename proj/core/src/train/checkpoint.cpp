#include "twm/train/checkpoint.hpp"

#include <fstream>
#include <map>

#include "twm/io/binary.hpp"

namespace twm {

namespace {

constexpr char kMagic[4] = {'T', 'W', 'M', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr const char* kWhat = "checkpoint";

using io::get;
using io::put;

template <typename M>
auto sets(M& m) {
  using Set = std::conditional_t<std::is_const_v<M>, const ParameterSet<float>, ParameterSet<float>>;
  return std::vector<std::pair<std::string, Set*>>{
      {"observation", &m.observation.params()},
      {"dynamics", &m.dynamics.params()},
      {"actor", &m.agent.actor_params()},
      {"critic", &m.agent.critic_params()}};
}

bool wanted(const std::string& name, CheckpointParts parts) {
  if (parts == CheckpointParts::kAll) return true;
  return name.rfind("enc.", 0) == 0 || name.rfind("actor.", 0) == 0;
}

void put_floats(std::ostream& out, std::span<const float> v) {
  for (float x : v) put<float>(out, x);
}

std::vector<float> get_floats(std::istream& in, std::uint64_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = get<float>(in, kWhat);
  return v;
}

void skip(std::istream& in, std::uint64_t bytes) {
  in.seekg(static_cast<std::streamoff>(bytes), std::ios::cur);
  if (!in) throw DataError("checkpoint is truncated");
}

std::ifstream open_and_check(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw DataError("not a TWM1 checkpoint: " + path.string());
  const auto version = get<std::uint32_t>(in, kWhat);
  if (version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  return in;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Models& models, const RunCounters& counters) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  io::put_string(out, models.config.canonical_text());
  for (auto v : {counters.env_steps, counters.episodes, counters.wm_updates, counters.agent_updates, counters.iterations})
    put<std::int64_t>(out, v);

  const auto all = sets(models);
  std::uint32_t count = 0;
  for (const auto& [_, set] : all) count += static_cast<std::uint32_t>(set->size());
  put<std::uint32_t>(out, count);
  for (const auto& [_, set] : all)
    for (const auto& e : set->entries()) {
      io::put_string(out, e.name);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.ndim()));
      for (auto d : e.value.shape()) put<std::int64_t>(out, d);
      put_floats(out, e.value.data());
    }

  put<std::uint32_t>(out, static_cast<std::uint32_t>(all.size()));
  for (const auto& [name, set] : all) {
    io::put_string(out, name);
    put<std::int64_t>(out, set->step());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(set->size()));
    for (const auto& e : set->entries()) {
      io::put_string(out, e.name);
      put<std::uint64_t>(out, e.first_moment.size());
      put_floats(out, e.first_moment);
      put_floats(out, e.second_moment);
    }
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

TrainConfig read_checkpoint_config(const std::filesystem::path& path) {
  auto in = open_and_check(path);
  return TrainConfig::parse(io::get_string(in, kWhat));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, CheckpointParts parts) {
  auto in = open_and_check(path);
  auto config = TrainConfig::parse(io::get_string(in, kWhat));
  config.validate();
  Checkpoint ck;
  ck.parts = parts;
  ck.models = std::make_unique<Models>(config);
  for (auto* v : {&ck.counters.env_steps, &ck.counters.episodes, &ck.counters.wm_updates, &ck.counters.agent_updates,
                  &ck.counters.iterations})
    *v = get<std::int64_t>(in, kWhat);

  std::map<std::string, ParameterSet<float>::Entry*> by_name;
  const auto all = sets(*ck.models);
  for (const auto& [_, set] : all)
    for (auto& e : set->entries()) by_name[e.name] = &e;

  const auto count = get<std::uint32_t>(in, kWhat);
  std::size_t loaded = 0, expected = 0;
  for (const auto& [name, _] : by_name) expected += wanted(name, parts);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = io::get_string(in, kWhat, 4096);
    const auto ndim = get<std::uint32_t>(in, kWhat);
    if (ndim > 8) throw DataError("checkpoint: bad rank for " + name);
    Shape shape(ndim);
    std::uint64_t numel = 1;
    for (auto& d : shape) {
      d = get<std::int64_t>(in, kWhat);
      if (d < 0) throw DataError("checkpoint: negative dimension in " + name);
      numel *= static_cast<std::uint64_t>(d);
    }
    if (!wanted(name, parts)) {
      skip(in, numel * sizeof(float));
      continue;
    }
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint parameter '" + name + "' does not exist in the model");
    if (it->second->value.shape() != shape)
      throw DataError("checkpoint parameter '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                      shape_str(it->second->value.shape()));
    auto values = get_floats(in, numel);
    std::copy(values.begin(), values.end(), it->second->value.mutable_data().begin());
    ++loaded;
  }
  if (loaded != expected)
    throw DataError("checkpoint holds " + std::to_string(loaded) + " of " + std::to_string(expected) +
                    " required parameters");
  if (parts != CheckpointParts::kAll) return ck;

  const auto nsets = get<std::uint32_t>(in, kWhat);
  for (std::uint32_t s = 0; s < nsets; ++s) {
    const auto set_name = io::get_string(in, kWhat, 4096);
    ParameterSet<float>* set = nullptr;
    for (const auto& [n, p] : all)
      if (n == set_name) set = p;
    if (!set) throw DataError("checkpoint: unknown parameter set '" + set_name + "'");
    set->set_step(get<std::int64_t>(in, kWhat));
    const auto entries = get<std::uint32_t>(in, kWhat);
    for (std::uint32_t e = 0; e < entries; ++e) {
      const auto name = io::get_string(in, kWhat, 4096);
      const auto n = get<std::uint64_t>(in, kWhat);
      auto it = by_name.find(name);
      if (it == by_name.end()) throw DataError("checkpoint moments for unknown parameter '" + name + "'");
      if (n != 0 && n != static_cast<std::uint64_t>(it->second->value.numel()))
        throw DataError("checkpoint moments for '" + name + "' have the wrong size");
      it->second->first_moment = get_floats(in, n);
      it->second->second_moment = get_floats(in, n);
    }
  }
  return ck;
}

}  // namespace twm
