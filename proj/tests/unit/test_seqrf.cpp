// Copyright (c) 2026, flowstraight authors
// SPDX-License-Identifier: Apache-2.0

#include "flowstraight/seqrf.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <set>

using namespace flowstraight;
using Catch::Approx;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

nn::MlpSpec small(int dim) {
  nn::MlpSpec s;
  s.dim = dim;
  s.hidden = {8, 8};
  s.time_frequencies = 2;
  return s;
}

/// Checkpoint whose network outputs the constant `c` everywhere.
io::Checkpoint constant_model(const Vector& c) {
  io::Checkpoint ck;
  ck.spec = small(static_cast<int>(c.size()));
  const nn::Mlp net(ck.spec);
  Rng rng(1);
  ck.params = nn::init_params(net, rng);
  ck.params.segment(net.layers().back().bias_offset, c.size()) = c;
  return ck;
}

/// Returns NaN on rows whose first coordinate exceeds a threshold.
struct Poisoned {
  double threshold;
  Batch operator()(const Batch& x, double) const {
    Batch v = Batch::Zero(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      if (x(i, 0) > threshold) v(i, 0) = std::nan("");
    return v;
  }
};

double sample_var(const Eigen::VectorXd& c) {
  const double m = c.mean();
  return (c.array() - m).square().sum() / static_cast<double>(c.size() - 1);
}

}  // namespace

TEST_CASE("uniform segmentations") {
  REQUIRE(make_segmentation(4).boundaries() == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
  REQUIRE(make_segmentation(1).boundaries() == std::vector<double>{0.0, 1.0});
  const auto six = make_segmentation(6);
  for (int k = 0; k <= 6; ++k) REQUIRE(six.boundaries()[static_cast<std::size_t>(k)] == Approx(k / 6.0).margin(1e-16));
  REQUIRE(six.segments() == 6);
  REQUIRE_THROWS_AS(make_segmentation(0), ConfigError);
  REQUIRE_THROWS_AS(TimeSegmentation({0.0, 0.5, 0.5, 1.0}), ConfigError);
  REQUIRE(make_segmentation(4).locate(0.3) == 1);
  REQUIRE(make_segmentation(4).locate(1.0) == 3);
}

TEST_CASE("pairs from a constant field: x_dst = x_src + c dt exactly") {
  const Vector x0 = vec({0.5, -1.0}), x1 = vec({2.0, 1.0});
  const ConditionalStraight f{x0, x1};
  const Vector c = x1 - x0;
  const IndependentCoupling coupling{ToyDistribution(GaussianIso{}), ToyDistribution(TwoMoons{})};
  Rng rng(2);
  const auto seg = make_segmentation(3);
  const auto pairs = generate_pairs(f, 0, seg, 100, SolverSpec::fixed(Method::Euler, 1), coupling, rng);
  REQUIRE(pairs.size() == 300);
  REQUIRE(pairs.per_segment_counts() == std::vector<std::uint64_t>{100, 100, 100});
  for (Eigen::Index i = 0; i < pairs.size(); ++i) {
    const auto p = pairs.record(i);
    const Vector expect = p.x_src + (p.t_dst - p.t_src) * c;
    REQUIRE((p.x_dst - expect).cwiseAbs().maxCoeff() == 0.0);
  }
  REQUIRE(pairs.total_nfe == 300);
  REQUIRE(pairs.solver_spec == "euler(N=1)[0;1]");
}

TEST_CASE("K = 1 pairs are noise to full solve") {
  const auto g = GaussianOracle::isotropic(vec({0.0, 0.0}), 1.0, vec({1.0, 2.0}), 0.5);
  const IndependentCoupling coupling{ToyDistribution(GaussianIso{}), ToyDistribution(GaussianIso{vec({1.0, 2.0}), 0.5})};
  Rng rng(3), replay(3);
  const auto spec = SolverSpec::fixed(Method::Rk4, 20);
  const auto pairs = generate_pairs(g, 0, make_segmentation(1), 64, spec, coupling, rng);
  const Batch x0 = coupling.source.sample(64, replay);
  REQUIRE((pairs.src.array() == x0.array()).all());
  auto s = spec;
  s.keep_trajectory = false;
  REQUIRE((pairs.dst - solve(g, x0, s).final_state()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gaussian oracle pairs preserve the interpolant marginals") {
  const auto g = GaussianOracle::isotropic(vec({0.0}), 1.0, vec({3.0}), 0.5);
  const IndependentCoupling coupling{ToyDistribution(GaussianIso{vec({0.0}), 1.0}), ToyDistribution(GaussianIso{vec({3.0}), 0.5})};
  Rng rng(4);
  const int n = 4096;
  const auto seg = make_segmentation(2);
  const auto pairs = generate_pairs(g, 0, seg, n, SolverSpec::fixed(Method::Rk4, 50), coupling, rng);
  REQUIRE(pairs.total_nfe == static_cast<std::uint64_t>(n) * 4 * 50 * 2);
  for (int k = 0; k < 2; ++k) {
    const auto [ta, tb] = seg.segment(k);
    Eigen::VectorXd src(n), dst(n);
    Eigen::Index j = 0;
    for (Eigen::Index i = 0; i < pairs.size(); ++i)
      if (pairs.segment[static_cast<std::size_t>(i)] == static_cast<std::uint32_t>(k)) {
        src(j) = pairs.src(i, 0);
        dst(j) = pairs.dst(i, 0);
        ++j;
      }
    for (auto [x, t] : {std::pair{&src, ta}, std::pair{&dst, tb}}) {
      const double m = g.marginal_mean(t)(0), v = g.marginal_var(t)(0);
      REQUIRE(std::abs(x->mean() - m) < 3 * std::sqrt(v / n));
      REQUIRE(std::abs(sample_var(*x) - v) < 3 * v * std::sqrt(2.0 / (n - 1)));
    }
  }
}

TEST_CASE("diverging solves are dropped and counted; more than 1% fails") {
  const IndependentCoupling coupling{ToyDistribution(GaussianIso{vec({0.0}), 1.0}), ToyDistribution(GaussianIso{vec({0.0}), 1.0})};
  Rng rng(5);
  // P(z > 2.8) ~ 2.6e-3 at t = 0 (segment 0 starts from pure noise).
  const auto pairs = generate_pairs(Poisoned{2.8}, 0, make_segmentation(1), 4000, SolverSpec::fixed(Method::Euler, 1),
                                    coupling, rng);
  REQUIRE(pairs.dropped > 0);
  REQUIRE(pairs.size() + static_cast<Eigen::Index>(pairs.dropped) == 4000);
  REQUIRE(pairs.dst.allFinite());
  Rng rng2(5);
  REQUIRE_THROWS_AS(generate_pairs(Poisoned{1.0}, 0, make_segmentation(1), 4000, SolverSpec::fixed(Method::Euler, 1),
                                   coupling, rng2),
                    DataError);
}

TEST_CASE("pair generation is independent of chunking") {
  const auto g = GaussianOracle::isotropic(vec({0.0, 0.0}), 1.0, vec({1.0, -1.0}), 0.3);
  const IndependentCoupling coupling{ToyDistribution(GaussianIso{}), ToyDistribution(TwoMoons{})};
  Rng a(6), b(6);
  const auto pa = generate_pairs(g, 0, make_segmentation(2), 300, SolverSpec::fixed(Method::Heun, 3), coupling, a, 7);
  const auto pb = generate_pairs(g, 0, make_segmentation(2), 300, SolverSpec::fixed(Method::Heun, 3), coupling, b, 1024);
  REQUIRE((pa.dst.array() == pb.dst.array()).all());
  REQUIRE(pa.total_nfe == pb.total_nfe);
}

TEST_CASE("segment-slope target and interpolation") {
  const Vector a = vec({1.0, 2.0}), b = vec({2.0, 0.0});
  const ReflowPair p{a, b, 0.5, 0.75, 2};
  REQUIRE((p.slope() - 4.0 * (b - a)).cwiseAbs().maxCoeff() == 0.0);
  const auto rows0 = segment_rows({p}, Vector::Zero(1));
  REQUIRE((rows0.x.row(0).transpose() - a).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(rows0.t(0) == 0.5);
  const auto rows1 = segment_rows({p}, Vector::Constant(1, 0.5));
  REQUIRE(rows1.t(0) == 0.625);
  REQUIRE((rows1.x.row(0).transpose() - 0.5 * (a + b)).cwiseAbs().maxCoeff() < 1e-15);
  REQUIRE_THROWS_AS((ReflowPair{a, b, 0.5, 0.5, 0}.slope()), DomainError);
  REQUIRE_THROWS_AS(segment_rows({p}, Vector::Constant(1, 1.5)), DomainError);
}

TEST_CASE("a model equal to the segment slope has zero seqrf and distill loss") {
  const Vector a = vec({1.0, 2.0}), b = vec({2.0, 0.0});
  const ReflowPair p{a, b, 0.5, 0.75, 2};
  const auto ck = constant_model(p.slope());
  const nn::Mlp net(ck.spec);
  for (double r : {0.0, 0.3, 1.0}) REQUIRE(seqrf_loss(net, ck.params, p, r).loss == 0.0);
  REQUIRE(distill_loss(net, ck.params, p).loss == 0.0);
  // One Euler step of size t_dst - t_src lands on x_dst.
  const LearnedField f = LearnedField::from(ck);
  const Batch x = a.transpose();
  const Batch y = solve(f, x, SolverSpec::fixed(Method::Euler, 1, 0.5, 0.75)).final_state();
  REQUIRE((y.row(0).transpose() - b).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("distill loss equals seqrf loss at r = 0") {
  io::Checkpoint ck;
  ck.spec = small(2);
  const nn::Mlp net(ck.spec);
  Rng rng(7);
  ck.params = nn::init_params(net, rng, false);
  std::vector<ReflowPair> ps;
  for (int i = 0; i < 5; ++i)
    ps.push_back({rng.normal_batch(1, 2).transpose(), rng.normal_batch(1, 2).transpose(), 0.25, 0.5, 1});
  const auto d = distill_loss(net, ck.params, ps);
  const auto s = seqrf_loss(net, ck.params, ps, Vector::Zero(5));
  REQUIRE(d.loss == s.loss);
  REQUIRE((d.grad.array() == s.grad.array()).all());
}

TEST_CASE("pair sampler draws segments uniformly and walks each segment without repeats") {
  auto pairs = std::make_shared<PairDataset>();
  pairs->segmentation = make_segmentation(2);
  const int n0 = 10, n1 = 30;
  pairs->src = Batch::Zero(n0 + n1, 1);
  pairs->dst = Batch::Zero(n0 + n1, 1);
  for (int i = 0; i < n0 + n1; ++i) pairs->segment.push_back(i < n0 ? 0 : 1);
  PairSampler sampler(pairs);
  Rng rng(8);
  std::vector<int> seg_count(2, 0);
  std::set<Eigen::Index> first_pass;
  int drawn0 = 0;
  for (int i = 0; i < 4000; ++i) {
    const auto j = sampler.next(rng);
    const int k = pairs->segment[static_cast<std::size_t>(j)];
    ++seg_count[k];
    if (k == 0 && drawn0++ < n0) REQUIRE(first_pass.insert(j).second);
  }
  REQUIRE(first_pass.size() == static_cast<std::size_t>(n0));
  REQUIRE(std::abs(seg_count[0] - 2000) < 4 * std::sqrt(1000.0));
  REQUIRE_THROWS_AS(PairSampler(std::make_shared<PairDataset>()), DataError);
}

TEST_CASE("stage 2 on already-straight pairs stays at the floor") {
  const Vector c = vec({1.0, -0.5});
  const ConditionalStraight f{Vector::Zero(2), c};
  const IndependentCoupling coupling{ToyDistribution(GaussianIso{}), ToyDistribution(TwoMoons{})};
  Rng rng(9);
  const auto pairs = std::make_shared<const PairDataset>(
      generate_pairs(f, 0, make_segmentation(4), 256, SolverSpec::fixed(Method::Euler, 1), coupling, rng));
  TrainConfig cfg;
  cfg.steps = 200;
  cfg.batch_size = 64;
  cfg.seed = 10;
  const auto res = train_stage2(constant_model(c), pairs, Stage2Mode::Reflow, cfg);
  REQUIRE(res.history.front().loss < 1e-24);
  // Adam jitters at the lr scale once gradients fall below eps.
  for (const auto& r : res.history) {
    REQUIRE(r.loss < 10 * cfg.lr * cfg.lr);
    REQUIRE(r.segment_loss.size() == 4);
  }
}

TEST_CASE("stage 2 is deterministic, cold start differs, inputs validated") {
  const auto g = GaussianOracle::isotropic(vec({0.0, 0.0}), 1.0, vec({1.0, 1.0}), 0.5);
  const IndependentCoupling coupling{ToyDistribution(GaussianIso{}), ToyDistribution(GaussianIso{vec({1.0, 1.0}), 0.5})};
  Rng rng(11);
  const auto pairs = std::make_shared<const PairDataset>(
      generate_pairs(g, 0, make_segmentation(2), 128, SolverSpec::fixed(Method::Rk4, 4), coupling, rng));
  io::Checkpoint base;
  base.spec = small(2);
  Rng init(12);
  base.params = nn::init_params(nn::Mlp(base.spec), init, false);
  TrainConfig cfg;
  cfg.steps = 30;
  cfg.batch_size = 16;
  cfg.seed = 13;
  for (auto mode : {Stage2Mode::Reflow, Stage2Mode::Distill}) {
    const auto a = train_stage2(base, pairs, mode, cfg);
    const auto b = train_stage2(base, pairs, mode, cfg);
    REQUIRE(io::encode_checkpoint(a.checkpoint) == io::encode_checkpoint(b.checkpoint));
    const auto cold = train_stage2(base, pairs, mode, cfg, true);
    REQUIRE(io::encode_checkpoint(a.checkpoint) != io::encode_checkpoint(cold.checkpoint));
  }
  REQUIRE_THROWS_AS(train_stage2(base, std::make_shared<const PairDataset>(), Stage2Mode::Reflow, cfg), DataError);
  io::Checkpoint wrong = base;
  wrong.spec = small(3);
  REQUIRE_THROWS_AS(train_stage2(wrong, pairs, Stage2Mode::Reflow, cfg), ConfigError);
  REQUIRE(parse_stage2_mode("distill") == Stage2Mode::Distill);
  REQUIRE_THROWS_AS(parse_stage2_mode("other"), ConfigError);
}

TEST_CASE("distilled sampling uses exactly K evaluations") {
  const auto ck = constant_model(vec({1.0, 0.0}));
  const auto f = LearnedField::from(ck);
  Rng rng(14);
  for (int k : {1, 2, 4, 6}) {
    const auto res = sample(f, make_segmentation(k), SamplerSpec::distilled(), ToyDistribution(GaussianIso{}), 32, rng);
    REQUIRE(res.nfe == static_cast<std::uint64_t>(k));
    REQUIRE(res.x.rows() == 32);
  }
}

TEST_CASE("conditional straight field lands every sample on x1 for any K") {
  const Vector x0 = vec({-1.0, 0.5}), x1 = vec({2.0, 3.0});
  const ConditionalStraight f{x0, x1};
  Rng rng(15);
  for (int k : {1, 2, 3, 8})
    for (const auto& how : {SamplerSpec::distilled(), SamplerSpec::solver(SolverSpec::fixed(Method::Heun, 3))}) {
      const auto res = sample(f, make_segmentation(k), how, ToyDistribution(PointMass{x0}), 10, rng);
      REQUIRE((res.x - replicate_row(x1, 10)).cwiseAbs().maxCoeff() < 1e-14);
    }
}

TEST_CASE("gaussian oracle sampling with RK4 reaches the target moments") {
  const auto g = GaussianOracle::isotropic(vec({0.0, 0.0}), 1.0, vec({-2.0, 1.0}), 0.4);
  Rng rng(16);
  const int n = 4096;
  const auto res = sample(g, make_segmentation(1), SamplerSpec::solver(SolverSpec::fixed(Method::Rk4, 200)),
                          ToyDistribution(GaussianIso{}), n, rng);
  REQUIRE(res.nfe == 800);
  for (int d = 0; d < 2; ++d) {
    REQUIRE(std::abs(res.x.col(d).mean() - g.mean1(d)) < 3 * 0.4 / std::sqrt(n));
    REQUIRE(std::abs(sample_var(res.x.col(d)) - 0.16) < 3 * 0.16 * std::sqrt(2.0 / (n - 1)));
  }
}
