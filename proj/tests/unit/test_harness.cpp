#include <doctest.h>

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "protoosr/harness.hpp"

using namespace protoosr;

namespace {

RunConfig small_run() {
  RunConfig c;
  const std::string root = PROTOOSR_SOURCE_DIR "/data/mnist/";
  c.data.train_images = root + "train-images-idx3-ubyte";
  c.data.train_labels = root + "train-labels-idx1-ubyte";
  c.data.test_images = root + "t10k-images-idx3-ubyte";
  c.data.test_labels = root + "t10k-labels-idx1-ubyte";
  c.data.train_limit = 300;
  c.data.test_limit = 200;
  c.encoder.height = c.encoder.width = 12;
  c.encoder.stages = {4, 8};
  c.encoder.embedding_dim = 6;
  c.optim.batch_size = 32;
  c.optim.schedule.total_epochs = 3;
  c.optim.schedule.step_every = 2;
  return c;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream in(line);
  for (std::string cell; std::getline(in, cell, ',');) out.push_back(cell);
  return out;
}

}  // namespace

TEST_CASE("prepare_data") {
  auto config = small_run();
  const auto data = prepare_data(config);
  CHECK(data.split.known.size() == 6);
  CHECK(data.train_known.images.shape() == Shape{data.train_known.size(), 1, 12, 12});
  CHECK(data.train_known.size() > 100);
  // the training set only ever holds relabelled known classes
  for (int y : data.train_known.labels) {
    CHECK(y >= 0);
    CHECK(y < 6);
  }
  REQUIRE(data.test_unknown.size() == 1);
  for (int y : data.test_unknown[0].labels) CHECK(y == kUnknown);
  CHECK(data.test_known.size() + data.unknown_count() == 200);
  CHECK(data.test_full.size() == 200);

  SUBCASE("outlier sets") {
    config.split.style = SplitStyle::kOutlier;
    config.split.n_known = 10;
    config.outlier.noise_samples = 25;
    config.encoder.height = config.encoder.width = 28;
    config.outlier.mnist_noise = true;
    const auto o = prepare_data(config);
    REQUIRE(o.test_unknown.size() == 2);
    CHECK(o.test_unknown[0].name == "noise");
    CHECK(o.test_unknown[0].size() == 25);
    CHECK(o.test_unknown[1].size() == 200);
    CHECK(o.test_known.size() == 200);
    CHECK(o.test_unknown[0].images == prepare_data(config).test_unknown[0].images);
  }
  SUBCASE("cross needs a second dataset") {
    config.split.style = SplitStyle::kCross;
    CHECK_THROWS_AS(prepare_data(config), ConfigError);
  }
}

TEST_CASE("training") {
  const auto config = small_run();
  const auto data = prepare_data(config);
  std::vector<EpochLog> seen;
  const auto a = train(config, data, [&](const EpochLog& e) { seen.push_back(e); });
  REQUIRE(a.log.size() == 3);
  CHECK(seen.size() == 3);
  CHECK(a.epochs_done == 3);
  CHECK(a.log[2].learning_rate == doctest::Approx(0.01));
  for (const auto& e : a.log) {
    CHECK(std::isfinite(e.total));
    CHECK(e.total == doctest::Approx(e.ce + 0.1 * e.pl + e.slc));
    CHECK(e.val_accuracy >= 0.0);
  }
  CHECK(a.log.back().total < a.log.front().total);

  SUBCASE("bit-identical across runs") {
    CHECK(serialize(train(config, data)) == serialize(a));
  }
  SUBCASE("a different seed gives a different model") {
    auto other = config;
    other.seed = 1;
    CHECK(serialize(train(other, data)) != serialize(a));
  }
  SUBCASE("resuming equals training straight through") {
    auto short_config = config;
    short_config.optim.schedule.total_epochs = 1;
    auto c = train(short_config, data);
    const auto reloaded_bytes = serialize(c);
    c = deserialize(reloaded_bytes);
    c.config.optim.schedule.total_epochs = 3;
    resume(c, data);
    CHECK(serialize(c) == serialize(a));
  }
  SUBCASE("a wrong protocol is refused") {
    auto other = config;
    other.split.trial_seed = 5;
    const auto other_data = prepare_data(other);
    REQUIRE(other_data.split.known != data.split.known);
    CHECK_THROWS_AS(evaluate(a, other_data), ProtocolError);
    CHECK_THROWS_AS(check_protocol(a, other_data), ProtocolError);
  }
  SUBCASE("divergence is reported, not trained through") {
    auto bad = config;
    bad.optim.schedule.initial_lr = 1e30;
    bad.optim.clip_norm = 0.0;
    CHECK_THROWS_AS(train(bad, data), NumericError);
  }

  SUBCASE("evaluate matches a recomputation from the raw scores") {
    const auto r = evaluate(a, data);
    const auto s = score_model(a, data, 95.0);
    std::vector<double> ks, us;
    std::vector<int> closed, open, truth;
    for (std::size_t i = 0; i < s.test_known.size(); ++i) {
      ks.push_back(s.test_known[i].known_score);
      closed.push_back(s.test_known[i].nearest_class);
      open.push_back(s.test_known[i].min_distance > s.threshold ? kUnknown : s.test_known[i].nearest_class);
      truth.push_back(data.test_known.labels[i]);
    }
    for (const auto& u : s.test_unknown) {
      us.push_back(u.known_score);
      open.push_back(u.min_distance > s.threshold ? kUnknown : u.nearest_class);
      truth.push_back(kUnknown);
    }
    CHECK(r.auroc == auroc(ks, us));
    CHECK(r.closed_accuracy == closed_accuracy(closed, data.test_known.labels));
    CHECK(r.macro_f1 == macro_f1(open, truth, 6));
    CHECK(r.known_samples + r.unknown_samples == 200);
    CHECK(r.histograms.known.total() == r.known_samples);
    CHECK(r.histograms.unknown.total() == r.unknown_samples);

    // the threshold admits 95% of the training known samples
    std::size_t inside = 0;
    for (const auto& t : s.train_known) inside += t.min_distance <= s.threshold;
    CHECK(std::abs(double(inside) / s.train_known.size() - 0.95) < 0.01);

    const auto j = nlohmann::json::parse(report_json(r, config));
    CHECK(j["record"] == "eval");
    CHECK(j["auroc"].get<double>() == r.auroc);
    CHECK(j["config"]["loss.variant"] == "SLCPL");

    SUBCASE("the full sweep point equals evaluate") {
      const auto pts = sweep_openness(a, data, {data.split.unknown.size()});
      CHECK(pts[0].macro_f1 == r.macro_f1);
      CHECK(pts[0].openness == doctest::Approx(data.split.openness));
      const auto more = sweep_openness(a, data, {1, 2, 3, 4});
      for (std::size_t i = 1; i < more.size(); ++i) CHECK(more[i].openness > more[i - 1].openness);
      CHECK_THROWS_AS(sweep_openness(a, data, {5}), ProtocolError);
      std::ostringstream csv;
      write_sweep_csv(more, csv);
      CHECK(csv.str().rfind("unknown_classes,openness_percent,macro_f1\n", 0) == 0);
    }
  }

  SUBCASE("exported distances can be recomputed from the exported features") {
    std::ostringstream out;
    export_features(a, data, out);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    const auto header = split_csv(line);
    REQUIRE(header.size() == 3 + 6 + 2);
    std::vector<std::vector<double>> protos, samples;
    std::vector<double> min_d, center_d;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      const auto cells = split_csv(line);
      REQUIRE(cells.size() == header.size());
      std::vector<double> f;
      for (std::size_t k = 0; k < 6; ++k) f.push_back(std::stod(cells[3 + k]));
      if (cells[0] == "prototype") {
        protos.push_back(f);
        // prototype coordinates survive the text round trip exactly
        for (std::size_t k = 0; k < 6; ++k) CHECK(static_cast<float>(f[k]) == a.prototypes.points[protos.size() * 6 - 6 + k]);
      } else {
        samples.push_back(f);
        min_d.push_back(std::stod(cells[9]));
        ++rows;
      }
      center_d.push_back(std::stod(cells[10]));
    }
    CHECK(rows == 200);
    REQUIRE(protos.size() == 6);
    std::vector<double> center(6, 0.0);
    for (const auto& p : protos)
      for (std::size_t k = 0; k < 6; ++k) center[k] += p[k] / 6.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      double best = INFINITY, c2 = 0;
      for (const auto& p : protos) {
        double d2 = 0;
        for (std::size_t k = 0; k < 6; ++k) d2 += (samples[i][k] - p[k]) * (samples[i][k] - p[k]);
        best = std::min(best, d2);
      }
      for (std::size_t k = 0; k < 6; ++k) c2 += (samples[i][k] - center[k]) * (samples[i][k] - center[k]);
      CHECK(std::abs(std::sqrt(best) - min_d[i]) <= 1e-5 * std::max(1.0, min_d[i]));
      CHECK(std::abs(std::sqrt(c2) - center_d[i]) <= 1e-5 * std::max(1.0, center_d[i]));
    }
  }
}

TEST_CASE("aggregate_reports") {
  std::vector<std::string> lines;
  const std::vector<double> acc{0.98, 0.99, 0.97}, auc{0.9, 0.95, 0.92}, f1{0.8, 0.85, 0.9};
  for (std::size_t i = 0; i < 3; ++i) {
    nlohmann::json j{{"record", "eval"}, {"closed_accuracy", acc[i]}, {"auroc", auc[i]}, {"macro_f1", f1[i]}};
    lines.push_back(j.dump());
  }
  lines.push_back("");
  lines.push_back(R"({"record":"epoch","epoch":0})");
  const auto j = nlohmann::json::parse(aggregate_reports(lines));
  CHECK(j["runs"] == 3);
  CHECK(j["auroc"]["mean"].get<double>() == doctest::Approx((0.9 + 0.95 + 0.92) / 3).epsilon(1e-15));
  const double m = (0.98 + 0.99 + 0.97) / 3;
  const double sd = std::sqrt(((0.98 - m) * (0.98 - m) + (0.99 - m) * (0.99 - m) + (0.97 - m) * (0.97 - m)) / 2);
  CHECK(j["closed_accuracy"]["std"].get<double>() == doctest::Approx(sd).epsilon(1e-12));
  CHECK(summarize({4.0}).std == 0.0);
  CHECK_THROWS_AS(aggregate_reports({"{not json"}), FormatError);
  CHECK_THROWS_AS(aggregate_reports({}), FormatError);
}
