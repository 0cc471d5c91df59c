#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "ccdc/config.hpp"
#include "test_support.hpp"

using namespace ccdc;
namespace fs = std::filesystem;

namespace {

// thread_cap caches its first answer, so the env var must be in place before
// anything in this binary asks for it.
const bool kEnvReady = [] {
  setenv("CCDC_THREADS", "3", 1);
  return true;
}();

fs::path write_config(const std::string& name, const std::string& text) {
  const fs::path d = fs::temp_directory_path() / "ccdc_config_test";
  fs::create_directories(d);
  const fs::path p = d / name;
  std::ofstream out(p);
  out << text;
  return p;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("presets are internally consistent") {
  CHECK_NOTHROW(desk_preset().validate());
  CHECK_NOTHROW(paper_preset().validate());
  CHECK_NOTHROW(mini_preset().validate());

  // the desk geometry actually is desk-scale
  const RunConfig desk = desk_preset();
  CHECK(desk.model.ct.input_extents == Shape{32, 32, 32});
  const RunConfig paper = paper_preset();
  CHECK(paper.model.ct.input_extents[0] > desk.model.ct.input_extents[0]);
}

TEST_CASE("overlay keeps every field the file does not mention") {
  const RunConfig base = desk_preset();
  const fs::path p = write_config("partial.json", R"({"hyper":{"tau":0.21}})");
  const RunConfig cfg = load_config(p, base);

  CHECK(cfg.hyper.tau == 0.21);
  CHECK(cfg.hyper.learning_rate == base.hyper.learning_rate);
  CHECK(cfg.hyper.batch_size == base.hyper.batch_size);
  CHECK(cfg.model.ct.embed_dim == base.model.ct.embed_dim);
  CHECK(cfg.train.folds == base.train.folds);
  CHECK(cfg.gen.bag_size == base.gen.bag_size);
  CHECK(cfg.preprocess.dilate_radius == base.preprocess.dilate_radius);
}

TEST_CASE("unknown keys are rejected with their dotted path") {
  auto load_text = [](const std::string& text) {
    return [text] { load_config(write_config("bad.json", text), desk_preset()); };
  };

  const std::string top = message_of(load_text(R"({"fooo":1})"));
  CHECK(top.find("config.fooo") != std::string::npos);

  const std::string nested = message_of(load_text(R"({"hyper":{"lr":0.1}})"));
  CHECK(nested.find("hyper.lr") != std::string::npos);

  const std::string deep = message_of(load_text(R"({"model":{"ct":{"inputs":[8,8,8]}}})"));
  CHECK(deep.find("model.ct.inputs") != std::string::npos);

  CHECK_THROWS_AS(load_config(write_config("bad.json", R"({"train":{"fold":3}})"), desk_preset()),
                  ConfigError);
}

TEST_CASE("malformed files and values fail as configuration errors") {
  CHECK_THROWS_AS(load_config(write_config("broken.json", "{"), desk_preset()), ConfigError);
  CHECK_THROWS_AS(
      load_config(write_config("schema.json", R"({"schema_version":2})"), desk_preset()),
      ConfigError);
  CHECK_THROWS_AS(
      load_config(write_config("type.json", R"({"hyper":{"batch_size":"four"}})"), desk_preset()),
      ConfigError);
  CHECK_THROWS_AS(
      load_config(write_config("shape.json", R"({"model":{"ct":{"input":[8,8]}}})"), desk_preset()),
      ConfigError);
  CHECK_THROWS_AS(
      load_config(write_config("neg.json", R"({"preprocess":{"voi":[0,36,36]}})"), desk_preset()),
      ConfigError);
  CHECK_THROWS_AS(
      load_config(write_config("mag.json", R"({"gen":{"magnifications":["X30"]}})"), desk_preset()),
      InputError);
  CHECK_THROWS_AS(
      load_config(write_config("color.json", R"({"preprocess":{"color_normalizer":"macenko"}})"),
                  desk_preset()),
      ConfigError);
  CHECK_THROWS_AS(load_config(fs::temp_directory_path() / "ccdc_config_test" / "absent.json",
                              desk_preset()),
                  IoError);
}

TEST_CASE("serialized config reloads into an identical config") {
  RunConfig cfg = desk_preset();
  cfg.seed = 99;
  cfg.hyper.tau = 0.11;
  cfg.train.contrastive = false;
  cfg.gen.magnifications = {Magnification::X40, Magnification::X10};
  cfg.preprocess.color_normalizer = ColorNormalizer::Identity;
  cfg.data_dir = "some/data";
  cfg.out_dir = "some/out";

  const fs::path p = write_config("full.json", config_to_json(cfg));
  // load over a very different base: every field must come from the file
  const RunConfig back = load_config(p, mini_preset());
  CHECK(config_to_json(back) == config_to_json(cfg));
  CHECK(back.seed == 99);
  CHECK(back.train.contrastive == false);
  REQUIRE(back.gen.magnifications.size() == 2);
  CHECK(back.gen.magnifications[0] == Magnification::X40);
  CHECK(back.preprocess.color_normalizer == ColorNormalizer::Identity);
}

TEST_CASE("model digest reflects architecture, not training hyperparameters") {
  const RunConfig a = desk_preset();
  RunConfig b = desk_preset();
  CHECK(model_digest(a) == model_digest(b));

  b.hyper.tau = 0.5;
  b.seed = 777;
  b.train.folds = 3;
  CHECK(model_digest(a) == model_digest(b));  // same network, same digest

  RunConfig c = desk_preset();
  c.model.ct.embed_dim = 32;
  CHECK(model_digest(a) != model_digest(c));
  RunConfig d = desk_preset();
  d.model.dyn.gen_kernel = 5;
  CHECK(model_digest(a) != model_digest(d));
}

TEST_CASE("cross-field validation catches geometry that cannot run") {
  RunConfig oversize = desk_preset();
  oversize.model.ct.input_extents = {40, 32, 32};  // VOI is 36^3
  CHECK_THROWS_AS(oversize.validate(), ConfigError);

  RunConfig mismatch = desk_preset();
  mismatch.gen.patch_side = 48;  // pathology input stays 64x64
  CHECK_THROWS_AS(mismatch.validate(), ConfigError);

  RunConfig mix = desk_preset();
  mix.train.mode_mix = 1.5;
  CHECK_THROWS_AS(mix.validate(), ConfigError);

  RunConfig frac = desk_preset();
  frac.train.test_fraction = 1.0;
  CHECK_THROWS_AS(frac.validate(), ConfigError);
}

TEST_CASE("thread cap honors the environment override") {
  REQUIRE(kEnvReady);
  CHECK(thread_cap() == 3);
}
