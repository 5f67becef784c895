#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace twm::analysis {

struct ScoreRow {
  std::string game;
  std::int64_t run = 0;
  double score = 0;
};

struct Reference {
  double random = 0;
  double human = 0;
};

/// Per-run agent scores plus random/human references per game.
struct ScoreTable {
  std::vector<ScoreRow> rows;
  std::map<std::string, Reference> references;
};

/// CSV with header game,run,score; lines starting with '#' are skipped.
std::vector<ScoreRow> load_scores_csv(const std::filesystem::path& path);
/// CSV with header game,random,human; lines starting with '#' are skipped.
std::map<std::string, Reference> load_references_csv(const std::filesystem::path& path);

/// (agent - random) / (human - random); ConfigError when human == random.
double normalized_score(double agent, double random, double human);

struct Interval {
  double lo = 0, hi = 0;
};

struct Aggregates {
  std::int64_t games = 0, runs = 0;
  double mean = 0;     // over per-game normalized means
  double median = 0;   // over per-game normalized means
  double iqm = 0;      // over all runs
  double optimality_gap = 0;  // over all runs
  Interval mean_ci, median_ci, iqm_ci, gap_ci;  // 95% percentile bootstrap over runs
};

/// Interquartile mean: mean of the middle 50% (25% trimmed from each end,
/// fractional weights at the cut points).
double interquartile_mean(std::vector<double> values);
double median(std::vector<double> values);
double optimality_gap(const std::vector<double>& values);

/// Normalized score of every row, in row order; throws DataError for a game
/// without a reference.
std::vector<double> normalized_runs(const ScoreTable& table);
/// Normalized mean per game, sorted by game name.
std::map<std::string, double> per_game_means(const ScoreTable& table);

/// Aggregate statistics; `resamples` bootstrap draws of runs within each game.
Aggregates aggregates(const ScoreTable& table, std::int64_t resamples = 10000, std::uint64_t seed = 0);

/// Fraction of runs with normalized score strictly above each threshold.
std::vector<double> fraction_above(const std::vector<double>& normalized, const std::vector<double>& thresholds);

/// name,value rows for every aggregate and CI bound.
void write_aggregates_csv(const std::filesystem::path& path, const Aggregates& a);
void write_fraction_above_csv(const std::filesystem::path& path, const std::vector<double>& thresholds,
                              const std::vector<double>& fractions);

}  // namespace twm::analysis
