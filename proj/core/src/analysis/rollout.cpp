#include "twm/analysis/rollout.hpp"

#include <algorithm>
#include <fstream>

#include "twm/analysis/image.hpp"

namespace twm::analysis {

Matrix Matrix::identity(std::int64_t size) {
  Matrix m(size);
  for (std::int64_t i = 0; i < size; ++i) m(i, i) = 1.0;
  return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.n != b.n) throw UsageError("matmul: size mismatch");
  Matrix c(a.n);
  for (std::int64_t i = 0; i < a.n; ++i)
    for (std::int64_t k = 0; k < a.n; ++k) {
      const double x = a(i, k);
      if (x == 0.0) continue;
      for (std::int64_t j = 0; j < a.n; ++j) c(i, j) += x * b(k, j);
    }
  return c;
}

std::vector<double> AttentionRollout::row(std::int64_t i) const {
  if (i < 0 || i >= rollout.n) throw UsageError("rollout row out of range");
  return {rollout.v.begin() + i * rollout.n, rollout.v.begin() + (i + 1) * rollout.n};
}

AttentionRollout attention_rollout(const std::vector<Matrix>& layers, const std::vector<std::uint8_t>& mask,
                                   std::int64_t size) {
  const std::int64_t n = layers.empty() ? size : layers.front().n;
  if (n < 0) throw UsageError("attention_rollout: negative size");
  if (mask.size() != static_cast<std::size_t>(n * n)) throw UsageError("attention_rollout: mask/weights shape mismatch");
  AttentionRollout out;
  out.rollout = Matrix::identity(n);
  for (const auto& a : layers) {
    if (a.n != n) throw UsageError("attention_rollout: layers differ in size");
    Matrix aug(n);
    for (std::int64_t i = 0; i < n; ++i) {
      double total = 0;
      for (std::int64_t j = 0; j < n; ++j) {
        const bool vis = mask[static_cast<std::size_t>(i * n + j)] != 0;
        aug(i, j) = vis ? a(i, j) + (i == j ? 1.0 : 0.0) : 0.0;
        total += aug(i, j);
      }
      if (total <= 0) throw UsageError("attention_rollout: row without visible columns");
      for (std::int64_t j = 0; j < n; ++j) aug(i, j) /= total;
    }
    out.rollout = matmul(aug, out.rollout);
    out.layers.push_back(a);
  }
  return out;
}

Matrix average_heads(const Tensor<float>& attention, std::int64_t batch, std::int64_t heads, std::int64_t b) {
  if (attention.ndim() != 3 || attention.dim(0) != batch * heads || attention.dim(1) != attention.dim(2))
    throw UsageError("average_heads: expected square attention [B*heads, N, N], got " + shape_str(attention.shape()));
  const std::int64_t n = attention.dim(1);
  Matrix m(n);
  const auto d = attention.data();
  for (std::int64_t h = 0; h < heads; ++h) {
    const auto* base = d.data() + (b * heads + h) * n * n;
    for (std::int64_t i = 0; i < n * n; ++i) m.v[static_cast<std::size_t>(i)] += base[i] / static_cast<double>(heads);
  }
  return m;
}

std::vector<std::string> token_labels(std::int64_t steps, bool reward_tokens) {
  std::vector<std::string> out;
  for (std::int64_t t = 0; t < steps; ++t) {
    out.push_back("z" + std::to_string(t));
    out.push_back("a" + std::to_string(t));
    if (reward_tokens && t + 1 < steps) out.push_back("r" + std::to_string(t));
  }
  return out;
}

std::vector<std::uint8_t> causal_mask(std::int64_t tokens, std::int64_t mem_len) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(tokens * tokens), 0);
  for (std::int64_t i = 0; i < tokens; ++i)
    for (std::int64_t j = std::max<std::int64_t>(0, i - mem_len); j <= i; ++j) m[static_cast<std::size_t>(i * tokens + j)] = 1;
  return m;
}

AttentionRollout trajectory_rollout(const DynamicsModel<float>& model, const Tensor<float>& z,
                                    const std::vector<std::int64_t>& actions, const Tensor<float>& rewards) {
  NoGradGuard no_grad;
  std::vector<Tensor<float>> attn;
  model.aggregate(z, actions, rewards, nullptr, &attn);
  const auto& cfg = model.config();
  std::vector<Matrix> layers;
  for (const auto& a : attn) layers.push_back(average_heads(a, 1, cfg.transformer.heads, 0));
  const std::int64_t tokens = cfg.tokens_for(z.dim(1));
  auto r = attention_rollout(layers, causal_mask(tokens, cfg.transformer.mem_len), tokens);
  r.labels = token_labels(z.dim(1), cfg.reward_tokens);
  return r;
}

namespace {

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m, const std::vector<std::string>& labels) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "token";
  for (const auto& l : labels) out << ',' << l;
  out << '\n';
  for (std::int64_t i = 0; i < m.n; ++i) {
    out << labels[static_cast<std::size_t>(i)];
    for (std::int64_t j = 0; j < m.n; ++j) out << ',' << m(i, j);
    out << '\n';
  }
}

Image map_image(const Matrix& m, const std::vector<std::string>& labels, int cell) {
  double peak = 0;
  for (double x : m.v) peak = std::max(peak, x);
  const int n = static_cast<int>(m.n), strip = std::max(2, cell / 2);
  Image img(strip + n * cell, n * cell, 3);
  for (int j = 0; j < n; ++j) {
    const char kind = labels[static_cast<std::size_t>(j)][0];
    const std::uint8_t rgb[3] = {static_cast<std::uint8_t>(kind == 'r' ? 220 : 30),
                                 static_cast<std::uint8_t>(kind == 'a' ? 200 : 40),
                                 static_cast<std::uint8_t>(kind == 'z' ? 230 : 40)};
    for (int y = 0; y < strip; ++y)
      for (int x = j * cell; x < (j + 1) * cell; ++x) std::copy_n(rgb, 3, img.at(y, x));
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const auto g = static_cast<std::uint8_t>(peak > 0 ? std::lround(255.0 * m(i, j) / peak) : 0);
      for (int y = 0; y < cell; ++y)
        for (int x = 0; x < cell; ++x) std::fill_n(img.at(strip + i * cell + y, j * cell + x), 3, g);
    }
  return img;
}

}  // namespace

void write_rollout(const std::filesystem::path& dir, const AttentionRollout& r, int cell) {
  std::filesystem::create_directories(dir);
  auto labels = r.labels;
  if (labels.size() != static_cast<std::size_t>(r.rollout.n)) {
    labels.clear();
    for (std::int64_t i = 0; i < r.rollout.n; ++i) labels.push_back("t" + std::to_string(i));
  }
  write_matrix_csv(dir / "rollout.csv", r.rollout, labels);
  write_png(dir / "rollout.png", map_image(r.rollout, labels, cell));
  for (std::size_t l = 0; l < r.layers.size(); ++l) {
    write_matrix_csv(dir / ("layer" + std::to_string(l) + ".csv"), r.layers[l], labels);
    write_png(dir / ("layer" + std::to_string(l) + ".png"), map_image(r.layers[l], labels, cell));
  }
  // the hidden state used for prediction sits at the last action token
  std::int64_t last = r.rollout.n - 1;
  while (last > 0 && labels[static_cast<std::size_t>(last)][0] != 'a') --last;
  std::ofstream out(dir / "last_row.csv");
  out << "token,attribution\n";
  if (r.rollout.n > 0) {
    const auto row = r.row(last);
    for (std::size_t j = 0; j < row.size(); ++j) out << labels[j] << ',' << row[j] << '\n';
  }
}

}  // namespace twm::analysis
