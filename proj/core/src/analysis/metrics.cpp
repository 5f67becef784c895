#include "twm/analysis/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "twm/errors.hpp"
#include "twm/numerics/rng.hpp"

namespace twm::analysis {

namespace {

std::string join(const std::vector<std::string>& cells) {
  std::string out;
  for (const auto& c : cells) out += (out.empty() ? "" : ",") + c;
  return out;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path,
                                               const std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool seen_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!seen_header) {
      if (cells != header) throw DataError(path.string() + ": expected header " + join(header));
      seen_header = true;
      continue;
    }
    if (cells.size() != header.size()) throw DataError(path.string() + ": malformed row '" + line + "'");
    rows.push_back(std::move(cells));
  }
  if (!seen_header) throw DataError(path.string() + ": missing header");
  return rows;
}

double to_double(const std::string& s, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(path.string() + ": not a number '" + s + "'");
  }
}

// linear interpolation between order statistics
double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<std::vector<double>> group(const ScoreTable& table) {
  std::map<std::string, std::vector<double>> by_game;
  const auto norm = normalized_runs(table);
  for (std::size_t i = 0; i < table.rows.size(); ++i) by_game[table.rows[i].game].push_back(norm[i]);
  std::vector<std::vector<double>> out;
  for (auto& [_, v] : by_game) out.push_back(std::move(v));
  return out;
}

struct Point {
  double mean, median, iqm, gap;
};

Point point(const std::vector<std::vector<double>>& games) {
  std::vector<double> game_means, all;
  for (const auto& runs : games) {
    game_means.push_back(std::accumulate(runs.begin(), runs.end(), 0.0) / static_cast<double>(runs.size()));
    all.insert(all.end(), runs.begin(), runs.end());
  }
  return {std::accumulate(game_means.begin(), game_means.end(), 0.0) / static_cast<double>(game_means.size()),
          median(game_means), interquartile_mean(all), optimality_gap(all)};
}

}  // namespace

std::vector<ScoreRow> load_scores_csv(const std::filesystem::path& path) {
  std::vector<ScoreRow> out;
  for (const auto& r : read_csv(path, {"game", "run", "score"}))
    out.push_back({r[0], static_cast<std::int64_t>(to_double(r[1], path)), to_double(r[2], path)});
  return out;
}

std::map<std::string, Reference> load_references_csv(const std::filesystem::path& path) {
  std::map<std::string, Reference> out;
  for (const auto& r : read_csv(path, {"game", "random", "human"})) {
    Reference ref{to_double(r[1], path), to_double(r[2], path)};
    if (ref.human == ref.random) throw DataError(path.string() + ": human equals random for " + r[0]);
    out[r[0]] = ref;
  }
  return out;
}

double normalized_score(double agent, double random, double human) {
  if (human == random) throw ConfigError("normalized score undefined: human score equals random score");
  return (agent - random) / (human - random);
}

double interquartile_mean(std::vector<double> v) {
  if (v.empty()) throw DataError("interquartile mean of an empty set");
  std::sort(v.begin(), v.end());
  // integral of the empirical quantile function over [0.25, 0.75]
  const double n = static_cast<double>(v.size());
  const double lo = 0.25 * n, hi = 0.75 * n;
  double acc = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double a = std::max(lo, static_cast<double>(i)), b = std::min(hi, static_cast<double>(i + 1));
    if (b > a) acc += (b - a) * v[i];
  }
  return acc / (hi - lo);
}

double median(std::vector<double> v) {
  if (v.empty()) throw DataError("median of an empty set");
  return percentile(std::move(v), 0.5);
}

double optimality_gap(const std::vector<double>& v) {
  if (v.empty()) throw DataError("optimality gap of an empty set");
  double acc = 0;
  for (double x : v) acc += std::max(0.0, 1.0 - x);
  return acc / static_cast<double>(v.size());
}

std::vector<double> normalized_runs(const ScoreTable& table) {
  std::vector<double> out;
  out.reserve(table.rows.size());
  for (const auto& r : table.rows) {
    auto it = table.references.find(r.game);
    if (it == table.references.end()) throw DataError("no reference scores for game '" + r.game + "'");
    out.push_back(normalized_score(r.score, it->second.random, it->second.human));
  }
  return out;
}

std::map<std::string, double> per_game_means(const ScoreTable& table) {
  std::map<std::string, std::pair<double, int>> acc;
  const auto norm = normalized_runs(table);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    auto& a = acc[table.rows[i].game];
    a.first += norm[i];
    ++a.second;
  }
  std::map<std::string, double> out;
  for (const auto& [g, a] : acc) out[g] = a.first / a.second;
  return out;
}

Aggregates aggregates(const ScoreTable& table, std::int64_t resamples, std::uint64_t seed) {
  if (table.rows.empty()) throw DataError("aggregates of an empty score table");
  if (resamples < 0) throw ConfigError("bootstrap resamples must be >= 0");
  const auto games = group(table);
  const auto p = point(games);
  Aggregates a;
  a.games = static_cast<std::int64_t>(games.size());
  a.runs = static_cast<std::int64_t>(table.rows.size());
  a.mean = p.mean;
  a.median = p.median;
  a.iqm = p.iqm;
  a.optimality_gap = p.gap;
  a.mean_ci = {p.mean, p.mean};
  a.median_ci = {p.median, p.median};
  a.iqm_ci = {p.iqm, p.iqm};
  a.gap_ci = {p.gap, p.gap};
  if (resamples == 0) return a;

  Rng rng(seed);
  std::vector<double> means, medians, iqms, gaps;
  std::vector<std::vector<double>> sample(games.size());
  for (std::int64_t b = 0; b < resamples; ++b) {
    for (std::size_t g = 0; g < games.size(); ++g) {
      const auto& runs = games[g];
      sample[g].resize(runs.size());
      for (auto& x : sample[g]) x = runs[static_cast<std::size_t>(rng.index(static_cast<std::int64_t>(runs.size())))];
    }
    const auto q = point(sample);
    means.push_back(q.mean);
    medians.push_back(q.median);
    iqms.push_back(q.iqm);
    gaps.push_back(q.gap);
  }
  auto ci = [](const std::vector<double>& v) { return Interval{percentile(v, 0.025), percentile(v, 0.975)}; };
  a.mean_ci = ci(means);
  a.median_ci = ci(medians);
  a.iqm_ci = ci(iqms);
  a.gap_ci = ci(gaps);
  return a;
}

std::vector<double> fraction_above(const std::vector<double>& normalized, const std::vector<double>& thresholds) {
  std::vector<double> out;
  out.reserve(thresholds.size());
  for (double t : thresholds) {
    if (normalized.empty()) {
      out.push_back(0.0);
      continue;
    }
    const auto above = std::count_if(normalized.begin(), normalized.end(), [t](double x) { return x > t; });
    out.push_back(static_cast<double>(above) / static_cast<double>(normalized.size()));
  }
  return out;
}

void write_aggregates_csv(const std::filesystem::path& path, const Aggregates& a) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(10);
  out << "metric,value,ci_lo,ci_hi\n";
  out << "games," << a.games << ",,\n";
  out << "runs," << a.runs << ",,\n";
  out << "normalized_mean," << a.mean << ',' << a.mean_ci.lo << ',' << a.mean_ci.hi << '\n';
  out << "normalized_median," << a.median << ',' << a.median_ci.lo << ',' << a.median_ci.hi << '\n';
  out << "iqm," << a.iqm << ',' << a.iqm_ci.lo << ',' << a.iqm_ci.hi << '\n';
  out << "optimality_gap," << a.optimality_gap << ',' << a.gap_ci.lo << ',' << a.gap_ci.hi << '\n';
}

void write_fraction_above_csv(const std::filesystem::path& path, const std::vector<double>& thresholds,
                              const std::vector<double>& fractions) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "threshold,fraction_above\n";
  for (std::size_t i = 0; i < thresholds.size(); ++i) out << thresholds[i] << ',' << fractions[i] << '\n';
}

}  // namespace twm::analysis
