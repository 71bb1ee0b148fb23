#include <doctest.h>

#include <cstdlib>
#include <string>

#include "protoosr/config.hpp"
#include "protoosr/errors.hpp"

using namespace protoosr;

namespace {

std::string message_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("parse_config") {
  const auto c = parse_config(R"(
# comment line
[loss]
variant = GCPL   ; trailing comment
lambda = 0.25

[encoder]
stages = 8, 16
batch_norm = false

[run]
seed = 42
)");
  CHECK(c.loss.variant == LossVariant::kGCPL);
  CHECK(c.loss.lambda == 0.25);
  CHECK(c.encoder.stages == std::vector<std::size_t>{8, 16});
  CHECK_FALSE(c.encoder.batch_norm);
  CHECK(c.seed == 42);
  // untouched keys keep their defaults
  CHECK(c.optim.batch_size == RunConfig{}.optim.batch_size);

  SUBCASE("errors name the key and line") {
    auto m = message_of("[loss]\nlamda = 0.1\n");
    CHECK(m.find("loss.lamda") != std::string::npos);
    CHECK(m.find("line 2") != std::string::npos);
    m = message_of("[optim]\nbatch_size = 10\nbatch_size = 20\n");
    CHECK(m.find("duplicate") != std::string::npos);
    CHECK(m.find("line 3") != std::string::npos);
    CHECK(message_of("[optim]\nmomentum = fast\n").find("optim.momentum") != std::string::npos);
    CHECK_FALSE(message_of("[loss\n").empty());
    CHECK_FALSE(message_of("variant SLCPL\n").empty());
    CHECK_FALSE(message_of("[optim]\nbatch_size = -3\n").empty());
    CHECK_FALSE(message_of("[loss]\nvariant = XPL\n").empty());
    CHECK_FALSE(message_of("[encoder]\nbatch_norm = maybe\n").empty());
  }
}

TEST_CASE("canonical text round-trips") {
  RunConfig c;
  c.loss.lambda = 0.1 + 0.2;  // not representable in short decimal
  c.encoder.stages = {3, 5, 7};
  c.data.train_files = {"a.bin", "b.bin"};
  c.eval.sweep_unknown_counts = {0, 2, 4};
  c.split.style = SplitStyle::kOpennessSweep;
  c.seed = 18446744073709551615ull;
  c.output_dir = "runs/x";
  const auto text = to_text(c);
  const auto back = parse_config(text);
  CHECK(to_text(back) == text);
  CHECK(back.loss.lambda == c.loss.lambda);
  CHECK(back.seed == c.seed);
  CHECK(back.data.train_files == c.data.train_files);
  CHECK(back.eval.sweep_unknown_counts == c.eval.sweep_unknown_counts);
  // every key appears exactly once
  for (const auto& key : config_keys()) {
    const auto name = key.substr(key.find('.') + 1) + " = ";
    CHECK(text.find("\n" + name) != std::string::npos);
  }
}

TEST_CASE("overrides") {
  RunConfig c;
  apply_override(c, "loss.variant=PL");
  apply_override(c, " optim.total_epochs = 7 ");
  CHECK(c.loss.variant == LossVariant::kPL);
  CHECK(c.optim.schedule.total_epochs == 7);
  CHECK(get_value(c, "optim.total_epochs") == "7");
  CHECK(get_value(c, "loss.variant") == "PL");
  CHECK_THROWS_AS(apply_override(c, "loss.variant"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "nope.key=1"), ConfigError);
  CHECK_THROWS_AS(get_value(c, "nope.key"), ConfigError);
}

TEST_CASE("validate") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  auto bad = [](auto mutate) {
    RunConfig c;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), ConfigError);
  };
  bad([](RunConfig& c) { c.optim.batch_size = 0; });
  bad([](RunConfig& c) { c.optim.momentum = 1.0; });
  bad([](RunConfig& c) { c.eval.percentile = 100.0; });
  bad([](RunConfig& c) { c.split.n_known = 1; });
  bad([](RunConfig& c) { c.encoder.embedding_dim = 1; });
  bad([](RunConfig& c) { c.optim.schedule.initial_lr = 0.0; });
  bad([](RunConfig& c) { c.data.format = DataFormat::kCifar10; });
  bad([](RunConfig& c) { c.optim.clip_norm = -1.0; });
}

TEST_CASE("stream seeds") {
  RunConfig a, b;
  b.seed = 1;
  CHECK(a.stream_seed("init") != a.stream_seed("shuffle"));
  CHECK(a.stream_seed("init") != b.stream_seed("init"));
  CHECK(a.stream_seed("init") == RunConfig{}.stream_seed("init"));
}

TEST_CASE("output directory from the environment") {
  RunConfig c;
  c.output_dir = "runs/a";
  ::unsetenv(kOutputDirEnv);
  apply_environment(c);
  CHECK(c.output_dir == "runs/a");
  ::setenv(kOutputDirEnv, "/tmp/elsewhere", 1);
  apply_environment(c);
  CHECK(c.output_dir == "/tmp/elsewhere");
  ::unsetenv(kOutputDirEnv);
}
