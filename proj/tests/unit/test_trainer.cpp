#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "opf_resid/error.hpp"
#include "opf_resid/trainer.hpp"
#include "unit/test_util.hpp"

using namespace opf_resid;

namespace {

Setpoints make_setpoints(std::initializer_list<double> pg, std::initializer_list<double> vg,
                         double vref) {
  Setpoints y;
  y.pg = Eigen::Map<const Eigen::VectorXd>(pg.begin(), static_cast<Eigen::Index>(pg.size()));
  y.vg = Eigen::Map<const Eigen::VectorXd>(vg.begin(), static_cast<Eigen::Index>(vg.size()));
  y.vref = vref;
  return y;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.n_o = 2;
  c.n_i = 2;
  c.batch_size = 3;
  c.hidden = {8};
  c.seed = 3;
  c.threads = 1;
  return c;
}

std::string log_text(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  write_log_csv(log, out, false);
  return out.str();
}

}  // namespace

TEST(Dataset, DegenerateIntervalReproducesBaseLoads) {
  const GridCase g = opf_test::load_case("case9");
  DatasetOptions opt;
  opt.count = 3;
  opt.lo = opt.hi = 1.0;
  const std::vector<Sample> data = generate_dataset(g, opt);
  ASSERT_EQ(data.size(), 3u);
  for (const Sample& s : data) {
    for (int i = 0; i < g.num_buses(); ++i) {
      EXPECT_DOUBLE_EQ(s.pd(i), g.buses[i].pd);
      EXPECT_DOUBLE_EQ(s.qd(i), g.buses[i].qd);
    }
    EXPECT_EQ(s.pg_dc, data[0].pg_dc);
  }
}

TEST(Dataset, FactorsStayInRangeAndAreReproducible) {
  const GridCase g = opf_test::load_case("case14");
  DatasetOptions opt;
  opt.count = 20;
  opt.first_id = 100;
  const std::vector<Sample> a = generate_dataset(g, opt);
  const std::vector<Sample> b = generate_dataset(g, opt);
  ASSERT_EQ(a.size(), 20u);
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].id, 100 + static_cast<int>(k));
    EXPECT_EQ(a[k].pd, b[k].pd);
    EXPECT_EQ(a[k].qd, b[k].qd);
    for (int i = 0; i < g.num_buses(); ++i) {
      if (g.buses[i].pd > 0) {
        const double f = a[k].pd(i) / g.buses[i].pd;
        EXPECT_GE(f, 0.8);
        EXPECT_LE(f, 1.2);
      }
    }
    EXPECT_NEAR(a[k].pg_dc.sum(), a[k].pd.sum(), 1e-6);
  }
  opt.seed = 8;
  EXPECT_NE(generate_dataset(g, opt)[0].pd, a[0].pd);
}

TEST(Dataset, JsonLinesRoundTrip) {
  const GridCase g = opf_test::load_case("case9");
  DatasetOptions opt;
  opt.count = 4;
  std::vector<Sample> data = generate_dataset(g, opt);
  data[2].outage = 5;
  std::stringstream buf;
  write_dataset(data, buf);
  const std::vector<Sample> back = read_dataset(buf);
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t k = 0; k < data.size(); ++k) {
    EXPECT_EQ(back[k].id, data[k].id);
    EXPECT_EQ(back[k].pd, data[k].pd);
    EXPECT_EQ(back[k].qd, data[k].qd);
    EXPECT_EQ(back[k].pg_dc, data[k].pg_dc);
    EXPECT_EQ(back[k].outage, data[k].outage);
  }
}

TEST(Dataset, RejectsBadOptions) {
  const GridCase g = opf_test::load_case("case9");
  DatasetOptions opt;
  opt.lo = 1.2;
  opt.hi = 0.8;
  EXPECT_THROW(generate_dataset(g, opt), ValidationError);
}

TEST(Loss, PowerNormExample) {
  const Setpoints y = make_setpoints({0.3, 0.4}, {1.0}, 1.0);
  const Setpoints t = make_setpoints({0.0, 0.0}, {1.0}, 1.0);
  const ProjectionLoss l = projection_loss(y, t, 100.0);
  EXPECT_DOUBLE_EQ(l.value, 0.5);
  EXPECT_NEAR(l.dy_pg(0), 0.6, 1e-15);
  EXPECT_NEAR(l.dy_pg(1), 0.8, 1e-15);
  EXPECT_EQ(l.dy_v.norm(), 0.0);
  EXPECT_EQ((l.dt_pg + l.dy_pg).norm(), 0.0);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  const Setpoints y = make_setpoints({0.3, -0.1, 0.7}, {1.01, 0.98}, 1.02);
  const Setpoints t = make_setpoints({0.25, 0.0, 0.6}, {1.0, 1.0}, 1.0);
  const double wv = 100.0;
  const ProjectionLoss l = projection_loss(y, t, wv);
  const Eigen::VectorXd yv = y.to_vector();
  const SetpointLayout layout = [] {
    SetpointLayout s;
    s.pg_gens = {0, 1, 2};
    s.vg_buses = {0, 1};
    return s;
  }();
  Eigen::VectorXd grad(yv.size());
  grad << l.dy_pg, l.dy_v;
  const double h = 1e-7;
  for (Eigen::Index i = 0; i < yv.size(); ++i) {
    Eigen::VectorXd hi = yv, lo = yv;
    hi(i) += h;
    lo(i) -= h;
    const double fd = (projection_loss(Setpoints::from_vector(layout, hi), t, wv).value -
                       projection_loss(Setpoints::from_vector(layout, lo), t, wv).value) /
                      (2 * h);
    EXPECT_NEAR(grad(i), fd, 1e-6) << i;
  }
}

TEST(Loss, ZeroDistanceHasZeroGradient) {
  const Setpoints y = make_setpoints({0.3}, {1.0}, 1.0);
  const ProjectionLoss l = projection_loss(y, y, 100.0);
  EXPECT_EQ(l.value, 0.0);
  EXPECT_EQ(l.dy_pg.norm() + l.dy_v.norm(), 0.0);
}

TEST(Loss, SupervisedMatchesProjectionLoss) {
  const Setpoints y = make_setpoints({0.3, 0.1}, {1.01}, 0.99);
  BufferEntry e;
  e.target = make_setpoints({0.2, 0.2}, {1.0}, 1.0);
  const SupervisedLoss s = supervised_loss(y, e, 100.0);
  const ProjectionLoss p = projection_loss(y, e.target, 100.0);
  EXPECT_DOUBLE_EQ(s.value, p.value);
  EXPECT_EQ(s.d_pg, p.dy_pg);
  EXPECT_EQ(s.d_v, p.dy_v);
}

TEST(Buffer, RejectsEntriesFromAnotherEpoch) {
  ReplayBuffer buf;
  buf.reset(3);
  BufferEntry e;
  e.epoch = 3;
  buf.add(e);
  e.epoch = 2;
  EXPECT_THROW(buf.add(e), Error);
  buf.reset(4);
  EXPECT_TRUE(buf.empty());
  EXPECT_EQ(buf.epoch(), 4);
}

TEST(Config, JsonParsingAndValidation) {
  const TrainConfig c = train_config_from_json(
      nlohmann::json::parse(R"({"n_o": 3, "lr": 0.001, "hidden": [16, 8]})"));
  EXPECT_EQ(c.n_o, 3);
  EXPECT_DOUBLE_EQ(c.lr, 0.001);
  EXPECT_EQ(c.hidden, (std::vector<int>{16, 8}));
  EXPECT_EQ(c.n_i, 10);
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"n_outer": 3})")), Error);
  TrainConfig bad;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ValidationError);
  const TrainConfig back = train_config_from_json(train_config_to_json(c));
  EXPECT_EQ(back.n_o, 3);
  EXPECT_EQ(back.hidden, c.hidden);
}

TEST(Config, LearningRateSchedule) {
  const TrainConfig c;
  EXPECT_DOUBLE_EQ(c.learning_rate(1), 5e-4);
  EXPECT_DOUBLE_EQ(c.learning_rate(50), 5e-4);
  EXPECT_DOUBLE_EQ(c.learning_rate(51), 1e-4);
}

TEST(Training, SmallGradientStepDoesNotIncreaseLoss) {
  const GridCase g = opf_test::load_case("case9");
  const SetpointLayout layout = SetpointLayout::from(g);
  const OutputBounds bounds = OutputBounds::from(g, layout);
  DatasetOptions opt;
  opt.count = 1;
  const Sample s = generate_dataset(g, opt)[0];
  const GridCase sg = apply_sample(g, s);
  MlpParams params = MlpParams::he_uniform(network_dims(g, layout, {8}), 2, 1.0);
  RestorationOptions ro;
  ro.nlp.kkt_tol = 1e-10;
  auto evaluate = [&](const MlpParams& p) {
    const NetOutput out = forward(p, bounds, sample_input(s, layout), sample_pg_dc(s, layout));
    return std::make_pair(out, projected_gradient(sg, out.y, Weights::training(), 100.0, ro));
  };
  const auto [out, pg] = evaluate(params);
  ASSERT_TRUE(pg.solved);
  const Eigen::VectorXd grad = backward(params, bounds, out.trace, pg.d_pg, pg.d_v);
  params.values() -= 1e-3 * grad / grad.norm();
  const auto after = evaluate(params).second;
  ASSERT_TRUE(after.solved);
  EXPECT_LE(after.loss, pg.loss);
}

TEST(Training, ReplaysOnlyCurrentEpochTargetsAndIsDeterministic) {
  const GridCase g = opf_test::load_case("case9");
  DatasetOptions opt;
  opt.count = 6;
  const std::vector<Sample> data = generate_dataset(g, opt);
  std::vector<Sample> val(data.begin() + 4, data.end());
  std::vector<Sample> train_set(data.begin(), data.begin() + 4);

  int replays = 0;
  std::set<int> seen_ids;
  TrainHooks hooks;
  hooks.on_replay = [&](int outer, const BufferEntry& e) {
    EXPECT_EQ(e.epoch, outer);
    seen_ids.insert(e.sample_id);
    ++replays;
  };
  const TrainConfig c = tiny_config();
  const TrainResult a = train(g, train_set, val, c, hooks);
  ASSERT_FALSE(a.aborted) << a.message;
  ASSERT_EQ(a.log.size(), 2u);
  EXPECT_GT(replays, 0);
  EXPECT_LE(replays, c.n_o * c.n_i * 4);
  for (int id : seen_ids) {
    EXPECT_LT(id, 4);
  }
  EXPECT_TRUE(std::isfinite(a.log[0].val_loss));

  const TrainResult b = train(g, train_set, val, c);
  EXPECT_EQ(log_text(a.log), log_text(b.log));
  EXPECT_EQ(a.last.params.values(), b.last.params.values());
}
