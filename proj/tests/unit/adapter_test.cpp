#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sail/adapter.hpp"
#include "sail/error.hpp"

using namespace sail;
using namespace sail::adapter;

namespace {

Architecture small_arch(std::mt19937_64& rng) {
  Architecture a;
  a.input_dim = 2 + static_cast<int>(rng() % 5);
  a.widths = {1 + static_cast<int>(rng() % 8), 1 + static_cast<int>(rng() % 8)};
  a.num_classes = 2 + static_cast<int>(rng() % 5);
  return a;
}

// Initialized parameters with the affine pair moved off (1, 0) and nonzero
// biases so every path of the gradient is exercised.
AdapterParams perturbed(const Architecture& a, std::uint64_t seed) {
  AdapterParams p = initialize(a, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (auto& b : p.blocks) {
    for (Eigen::Index i = 0; i < b.gamma.size(); ++i) {
      b.gamma(i) += nd(rng);
      b.beta(i) += nd(rng);
      b.bias(i) += nd(rng);
    }
  }
  for (Eigen::Index i = 0; i < p.out_bias.size(); ++i) p.out_bias(i) = nd(rng);
  return p;
}

long double linear_loss(const oracle::LMat& logits, const Matrix& g) {
  long double s = 0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    for (std::size_t k = 0; k < logits[i].size(); ++k) s += g(i, k) * logits[i][k];
  return s;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("sail_adapter_test_" + name);
}

}  // namespace

TEST(Architecture, Validation) {
  Architecture a;
  EXPECT_NO_THROW(a.validate());
  EXPECT_EQ(a.trainable_size(), 2u * (32 + 32));
  a.widths = {8};
  EXPECT_THROW(a.validate(), InvalidInput);
  a.widths = {8, 0};
  EXPECT_THROW(a.validate(), InvalidInput);
  a.widths = {8, 8};
  a.num_classes = 1;
  EXPECT_THROW(a.validate(), InvalidInput);
}

TEST(Forward, MatchesNaiveRecomputation) {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 20; ++t) {
    const Architecture a = small_arch(rng);
    const AdapterParams p = perturbed(a, 100 + t);
    const Matrix x = oracle::random_matrix(rng, 2 + t % 6, a.input_dim);
    const auto r = forward(p, x);
    const auto ref = oracle::forward(p, x);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (int k = 0; k < a.num_classes; ++k) EXPECT_NEAR(r.logits(i, k), static_cast<double>(ref[i][k]), 1e-12);
  }
}

TEST(Forward, RejectsSingleSampleAndWrongWidth) {
  const AdapterParams p = initialize(Architecture{}, 1);
  EXPECT_THROW(forward(p, Matrix::Zero(1, 32)), InvalidInput);
  EXPECT_THROW(forward(p, Matrix::Zero(4, 31)), InvalidInput);
}

TEST(Forward, DuplicatingTheBatchLeavesLogitsUnchanged) {
  std::mt19937_64 rng(32);
  const Architecture a;
  const AdapterParams p = perturbed(a, 7);
  const Matrix x = oracle::random_matrix(rng, 6, a.input_dim);
  Matrix xx(12, a.input_dim);
  xx << x, x;
  const Matrix z = forward(p, x).logits;
  const Matrix zz = forward(p, xx).logits;
  EXPECT_LT((zz.topRows(6) - z).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((zz.bottomRows(6) - z).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Forward, PermutationEquivariantAndDeterministic) {
  std::mt19937_64 rng(33);
  const Architecture a;
  const AdapterParams p = perturbed(a, 8);
  const Matrix x = oracle::random_matrix(rng, 9, a.input_dim);
  std::vector<int> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix xp(9, a.input_dim);
  for (int i = 0; i < 9; ++i) xp.row(i) = x.row(perm[i]);
  const Matrix z = forward(p, x).logits;
  const Matrix zp = forward(p, xp).logits;
  for (int i = 0; i < 9; ++i) EXPECT_LT((zp.row(i) - z.row(perm[i])).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_TRUE(forward(p, x).logits == z);
}

TEST(Forward, StandardizedActivationsHaveZeroMeanUnitVariance) {
  std::mt19937_64 rng(34);
  const Architecture a;
  const AdapterParams p = initialize(a, 9);
  const Matrix x = oracle::random_matrix(rng, 64, a.input_dim, 10.0);
  const auto r = forward(p, x);
  for (const auto& layer : r.cache.layers) {
    for (Eigen::Index f = 0; f < layer.xhat.cols(); ++f) {
      const double mu = layer.xhat.col(f).mean();
      const double var = (layer.xhat.col(f).array() - mu).square().mean();
      EXPECT_NEAR(mu, 0.0, 1e-12);
      const double expected = layer.var(f) / (layer.var(f) + a.norm_eps);
      EXPECT_NEAR(var, expected, 1e-12);
      if (layer.var(f) > 10.0) EXPECT_NEAR(var, 1.0, 1e-6);
    }
  }
}

TEST(Backward, ZeroUpstreamGivesZeroGradient) {
  std::mt19937_64 rng(35);
  const Architecture a;
  const AdapterParams p = perturbed(a, 10);
  const Matrix x = oracle::random_matrix(rng, 8, a.input_dim);
  const auto r = forward(p, x);
  const auto g = backward(p, r.cache, Matrix::Zero(8, a.num_classes));
  EXPECT_EQ(g.size(), a.trainable_size());
  for (double v : g) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(backward(p, r.cache, Matrix::Zero(7, a.num_classes)), InvalidInput);
}

TEST(Backward, MatchesFiniteDifferencesOnEveryAffineParameter) {
  std::mt19937_64 rng(36);
  const double h = 1e-5;
  for (int t = 0; t < 20; ++t) {
    const Architecture a = small_arch(rng);
    AdapterParams p = perturbed(a, 200 + t);
    const Matrix x = oracle::random_matrix(rng, 2 + static_cast<int>(rng() % 5), a.input_dim);
    const Matrix up = oracle::random_matrix(rng, static_cast<int>(x.rows()), a.num_classes);
    const auto g = backward(p, forward(p, x).cache, up);
    const auto theta = flatten(p);
    for (std::size_t j = 0; j < theta.size(); ++j) {
      auto tp = theta, tm = theta;
      tp[j] += h;
      tm[j] -= h;
      AdapterParams pp = p, pm = p;
      unflatten(pp, tp);
      unflatten(pm, tm);
      const double fd = static_cast<double>(
          (linear_loss(oracle::forward(pp, x), up) - linear_loss(oracle::forward(pm, x), up)) / (2 * h));
      EXPECT_TRUE(oracle::grad_close(g[j], fd)) << "instance " << t << " index " << j << ": " << g[j]
                                                << " vs " << fd;
    }
  }
}

TEST(Backward, LastBetaMatchesNaiveChain) {
  std::mt19937_64 rng(37);
  const Architecture a;
  const AdapterParams p = perturbed(a, 11);
  const Matrix x = oracle::random_matrix(rng, 10, a.input_dim);
  const Matrix up = oracle::random_matrix(rng, 10, a.num_classes);
  const auto r = forward(p, x);
  const auto g = backward(p, r.cache, up);
  // beta_L enters as tanh(a + beta); its gradient is the column sum of
  // (up * W_out) times tanh' at the block output.
  const auto& out = r.cache.layers.back().output;
  const int w = a.widths.back();
  const std::size_t offset = a.trainable_size() - static_cast<std::size_t>(w);
  for (int o = 0; o < w; ++o) {
    long double s = 0;
    for (int i = 0; i < 10; ++i) {
      long double back = 0;
      for (int k = 0; k < a.num_classes; ++k) back += up(i, k) * p.out_weight(k, o);
      s += back * (1 - static_cast<long double>(out(i, o)) * out(i, o));
    }
    EXPECT_NEAR(g[offset + o], static_cast<double>(s), 1e-12);
  }
}

TEST(BackwardFull, MatchesFiniteDifferencesOnFrozenWeights) {
  std::mt19937_64 rng(38);
  const double h = 1e-5;
  Architecture a;
  a.input_dim = 3;
  a.widths = {4, 3};
  a.num_classes = 3;
  AdapterParams p = perturbed(a, 12);
  const Matrix x = oracle::random_matrix(rng, 5, 3);
  const Matrix up = oracle::random_matrix(rng, 5, 3);
  const auto g = backward_full(p, forward(p, x).cache, up);
  auto check = [&](double& slot, double analytic) {
    const double keep = slot;
    slot = keep + h;
    const auto lp = linear_loss(oracle::forward(p, x), up);
    slot = keep - h;
    const auto lm = linear_loss(oracle::forward(p, x), up);
    slot = keep;
    EXPECT_TRUE(oracle::grad_close(analytic, static_cast<double>((lp - lm) / (2 * h))));
  };
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    for (Eigen::Index i = 0; i < p.blocks[l].weight.size(); ++i)
      check(p.blocks[l].weight.data()[i], g.weight[l].data()[i]);
    for (Eigen::Index i = 0; i < p.blocks[l].bias.size(); ++i) check(p.blocks[l].bias(i), g.bias[l](i));
  }
  for (Eigen::Index i = 0; i < p.out_weight.size(); ++i) check(p.out_weight.data()[i], g.out_weight.data()[i]);
  for (Eigen::Index i = 0; i < p.out_bias.size(); ++i) check(p.out_bias(i), g.out_bias(i));
}

TEST(SgdStep, Examples) {
  Architecture a;
  a.input_dim = 2;
  a.widths = {1, 1};
  a.num_classes = 2;
  AdapterParams p = initialize(a, 1);
  const AdapterParams before = p;
  const std::vector<double> g{0.5, 0.0, 0.0, 0.0};
  sgd_step(p, g, 0.0);
  EXPECT_TRUE(p == before);
  sgd_step(p, std::vector<double>(4, 0.0), 0.1);
  EXPECT_TRUE(p == before);
  sgd_step(p, g, 0.1);
  EXPECT_DOUBLE_EQ(p.blocks[0].gamma(0), 0.95);
  EXPECT_THROW(sgd_step(p, std::vector<double>{NAN, 0, 0, 0}, 0.1), NumericalFailure);
  EXPECT_THROW(sgd_step(p, g, -1.0), InvalidInput);
  EXPECT_THROW(sgd_step(p, std::vector<double>{1.0}, 0.1), InvalidInput);
  const AdapterParams kept = p;
  EXPECT_THROW(sgd_step(p, std::vector<double>{0.0, 0.0, 0.0, 1e300}, 1e300), NumericalFailure);
  EXPECT_TRUE(p == kept);
}

TEST(SgdStep, FrozenParametersBitwiseUnchanged) {
  std::mt19937_64 rng(39);
  const Architecture a;
  AdapterParams p = perturbed(a, 13);
  const AdapterParams before = p;
  std::normal_distribution<double> nd;
  std::vector<double> g(a.trainable_size());
  for (double& v : g) v = nd(rng);
  sgd_step(p, g, 0.3);
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    EXPECT_TRUE(p.blocks[l].weight == before.blocks[l].weight);
    EXPECT_TRUE(p.blocks[l].bias == before.blocks[l].bias);
  }
  EXPECT_TRUE(p.out_weight == before.out_weight);
  EXPECT_TRUE(p.out_bias == before.out_bias);
  const auto t0 = flatten(before), t1 = flatten(p);
  for (std::size_t j = 0; j < g.size(); ++j) EXPECT_EQ(t1[j], t0[j] - 0.3 * g[j]);
}

TEST(Flatten, RoundTripAndOrdering) {
  Architecture a;
  a.widths = {3, 5, 2};
  AdapterParams p = perturbed(a, 14);
  const auto theta = flatten(p);
  EXPECT_EQ(theta.size(), 2u * (3 + 5 + 2));
  AdapterParams q = initialize(a, 99);
  unflatten(q, theta);
  EXPECT_EQ(flatten(q), theta);
  EXPECT_EQ(theta[0], p.blocks[0].gamma(0));
  EXPECT_EQ(theta[3], p.blocks[0].beta(0));
  EXPECT_EQ(theta[6], p.blocks[1].gamma(0));
  EXPECT_EQ(theta.back(), p.blocks[2].beta(1));
  EXPECT_THROW(unflatten(q, std::vector<double>(5)), InvalidInput);

  const auto depth = depth_index(a);
  std::vector<std::size_t> sorted = depth;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
  const auto blocks = block_of(a);
  for (std::size_t i = 0; i + 1 < blocks.size(); ++i) {
    EXPECT_LE(blocks[i], blocks[i + 1]);
    if (blocks[i] < blocks[i + 1]) EXPECT_LT(depth[i], depth[i + 1]);
  }
}

TEST(Pretrain, ZeroEpochsReturnsInitialization) {
  Architecture a;
  a.input_dim = 4;
  a.widths = {4, 4};
  a.num_classes = 3;
  LabeledSet data;
  std::mt19937_64 rng(40);
  data.features = oracle::random_matrix(rng, 30, 4);
  for (int i = 0; i < 30; ++i) {
    data.labels.push_back(i % 3);
    data.domains.push_back(0);
  }
  PretrainOptions o;
  o.epochs = 0;
  o.seed = 5;
  const auto r = pretrain(a, data, o);
  EXPECT_TRUE(r.params == initialize(a, 5));
  EXPECT_EQ(r.source_snapshot, flatten(r.params));
}

TEST(Pretrain, DeterministicAndLearns) {
  Architecture a;
  a.input_dim = 4;
  a.widths = {8, 8};
  a.num_classes = 3;
  LabeledSet data;
  std::mt19937_64 rng(41);
  std::normal_distribution<double> nd(0.0, 0.3);
  data.features.resize(300, 4);
  for (int i = 0; i < 300; ++i) {
    const int y = i % 3;
    for (int j = 0; j < 4; ++j) data.features(i, j) = (j == y ? 2.0 : 0.0) + nd(rng);
    data.labels.push_back(y);
    data.domains.push_back(0);
  }
  PretrainOptions o;
  o.epochs = 20;
  o.lr = 0.1;
  o.batch_size = 32;
  const auto r1 = pretrain(a, data, o);
  const auto r2 = pretrain(a, data, o);
  EXPECT_TRUE(r1.params == r2.params);
  EXPECT_GT(accuracy(r1.params, data, 64), 0.95);
}

TEST(Pretrain, DivergenceIsReported) {
  Architecture a;
  a.input_dim = 2;
  a.widths = {2, 2};
  a.num_classes = 2;
  LabeledSet data;
  std::mt19937_64 rng(42);
  data.features = oracle::random_matrix(rng, 8, 2);
  for (int i = 0; i < 8; ++i) {
    data.labels.push_back(i % 2);
    data.domains.push_back(0);
  }
  PretrainOptions o;
  o.epochs = 20;
  o.batch_size = 2;
  o.lr = 1e308;
  EXPECT_THROW(pretrain(a, data, o), PretrainFailure);
}

TEST(ParamsIo, BinaryAndTextRoundTrip) {
  Architecture a;
  a.widths = {5, 6, 7};
  const AdapterParams p = perturbed(a, 15);
  for (auto fmt : {ParamFormat::binary, ParamFormat::text}) {
    const auto path = temp_file(fmt == ParamFormat::binary ? "p.bin" : "p.txt");
    save_params(path.string(), p, fmt);
    const AdapterParams q = load_params(path.string());
    EXPECT_TRUE(q == p);
    std::filesystem::remove(path);
  }
}

TEST(ParamsIo, RejectsMissingOrCorruptFiles) {
  EXPECT_THROW(load_params("/nonexistent/adapter.bin"), Error);
  const auto path = temp_file("corrupt.bin");
  {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    std::fputs("garbage", f);
    std::fclose(f);
  }
  EXPECT_THROW(load_params(path.string()), Error);
  std::filesystem::remove(path);
}
