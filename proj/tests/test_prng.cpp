#include "fsmcmc/prng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace fsmcmc;

TEST(Philox, KnownAnswerVectors) {
  // Reference outputs of Philox4x32-10.
  EXPECT_EQ(philox4x32_10({0, 0, 0, 0}, {0, 0}), (PhiloxBlock{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(philox4x32_10({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}),
            (PhiloxBlock{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  EXPECT_EQ(philox4x32_10({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}),
            (PhiloxBlock{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(Split, SingleStreamIsDeterministic) {
  const RngKey k{7, 0, 0};
  const auto a = split(k, 1);
  const auto b = split(k, 1);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a[0].seed, 7u);
  EXPECT_EQ(a[0].counter, 0u);
}

TEST(Split, StreamsAreDistinctAndPrefixStable) {
  const RngKey k{42, 3, 17};
  const auto three = split(k, 3);
  std::set<std::uint64_t> streams;
  for (const auto& s : three) {
    streams.insert(s.stream);
    EXPECT_EQ(s.counter, 0u);
  }
  EXPECT_EQ(streams.size(), 3u);
  const auto many = split(k, 1000);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(many[i], three[i]);
  std::set<std::uint64_t> all;
  for (const auto& s : many) all.insert(s.stream);
  EXPECT_EQ(all.size(), 1000u);
}

TEST(Split, RejectsZeroStreams) { EXPECT_THROW(split(make_key(1), 0), std::invalid_argument); }

TEST(Uniform, ReplayAndStride) {
  const RngKey k{9, 4, 100};
  const auto [u1, k1] = uniform(k);
  const auto [u2, k2] = uniform(k);
  EXPECT_EQ(u1, u2);
  EXPECT_EQ(k1, k2);
  EXPECT_EQ(k1.seed, k.seed);
  EXPECT_EQ(k1.stream, k.stream);
  EXPECT_EQ(k1.counter, k.counter + 1);
  EXPECT_GE(u1, 0.0);
  EXPECT_LT(u1, 1.0);
}

TEST(Uniform, MeanOfMillionDraws) {
  RngKey k = split(make_key(2024), 1)[0];
  double s = 0.0;
  const int n = 1'000'000;
  for (int i = 0; i < n; ++i) {
    double u;
    std::tie(u, k) = uniform(k);
    s += u;
  }
  EXPECT_NEAR(s / n, 0.5, 0.002);
}

TEST(Uniform, SplitStreamsUncorrelated) {
  auto ks = split(make_key(11), 2);
  const int n = 100'000;
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (int i = 0; i < n; ++i) {
    double a, b;
    std::tie(a, ks[0]) = uniform(ks[0]);
    std::tie(b, ks[1]) = uniform(ks[1]);
    sa += a;
    sb += b;
    saa += a * a;
    sbb += b * b;
    sab += a * b;
  }
  const double ma = sa / n, mb = sb / n;
  const double rho = (sab / n - ma * mb) / std::sqrt((saa / n - ma * ma) * (sbb / n - mb * mb));
  EXPECT_LT(std::abs(rho), 0.01);
}

TEST(Uniform, DecileCountsPassChiSquare) {
  RngKey k = make_key(77);
  std::array<int, 10> bins{};
  const int n = 100'000;
  for (int i = 0; i < n; ++i) {
    double u;
    std::tie(u, k) = uniform(k);
    ++bins[static_cast<std::size_t>(u * 10)];
  }
  double chi2 = 0.0;
  for (int c : bins) chi2 += (c - n / 10.0) * (c - n / 10.0) / (n / 10.0);
  EXPECT_LT(chi2, 27.88);  // 0.999 quantile of chi-square with 9 dof
}

TEST(Normal, QuantileMatchesKnownValues) {
  EXPECT_NEAR(normal_quantile(0.5), 0.0, 1e-15);
  EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-13);
  EXPECT_NEAR(normal_quantile(0.025), -1.959963984540054, 1e-13);
  EXPECT_NEAR(normal_quantile(1e-10), -6.361340902404056, 1e-10);
  for (double p : {1e-6, 0.01, 0.2, 0.7, 0.99, 1 - 1e-9}) {
    const double x = normal_quantile(p);
    EXPECT_NEAR(0.5 * std::erfc(-x / std::sqrt(2.0)), p, 1e-14 + 1e-12 * p);
  }
}

TEST(Normal, OneCounterPerDraw) {
  const RngKey k{1, 2, 3};
  const auto [z, k1] = normal(k);
  EXPECT_EQ(k1.counter, 4u);
  const auto [v, k2] = standard_normal_vec(k, 5);
  EXPECT_EQ(k2.counter, 8u);
  EXPECT_EQ(v[0], z);
}

TEST(Normal, MeanOfMillionDraws) {
  RngKey k = make_key(5);
  double s = 0.0;
  const int n = 1'000'000;
  for (int i = 0; i < n; ++i) {
    double z;
    std::tie(z, k) = normal(k);
    s += z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.003);
}

TEST(NormalVec, IdentityFactorGivesRawPair) {
  const RngKey k = make_key(3);
  const auto [v, k1] = normal_vec(k, 2, Eigen::MatrixXd::Identity(2, 2));
  const auto [a, ka] = normal(k);
  const auto [b, kb] = normal(ka);
  EXPECT_EQ(v[0], a);
  EXPECT_EQ(v[1], b);
  EXPECT_EQ(k1, kb);
}

TEST(NormalVec, CovarianceOfFactor) {
  Eigen::MatrixXd L(2, 2);
  L << 2, 0, 1, 1;
  RngKey k = make_key(8);
  const int n = 100'000;
  Eigen::Matrix2d S = Eigen::Matrix2d::Zero();
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd v;
    std::tie(v, k) = normal_vec(k, 2, L);
    mean += v;
    S += v * v.transpose();
  }
  mean /= n;
  S = S / n - mean * mean.transpose();
  Eigen::Matrix2d truth;
  truth << 4, 2, 2, 2;
  EXPECT_LT((S - truth).norm() / truth.norm(), 0.05);
}

TEST(NormalVec, RejectsWrongShape) {
  EXPECT_THROW(normal_vec(make_key(0), 3, Eigen::MatrixXd::Identity(2, 2)), std::invalid_argument);
  EXPECT_THROW(normal_vec(make_key(0), 2, Eigen::MatrixXd::Identity(2, 3)), std::invalid_argument);
}
