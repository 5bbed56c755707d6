#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "nfembed/cli/cli.hpp"
#include "nfembed/datamodel/container.hpp"
#include "nfembed/errors.hpp"
#include "nfembed/eval/report.hpp"
#include "nfembed/io/binary.hpp"
#include "nfembed/pipeline/bundle.hpp"

using namespace nfembed;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::initializer_list<std::string> args) {
  std::ostringstream out, err;
  const std::vector<std::string> v(args);
  const int code = run_cli(v, out, err);
  return {code, out.str(), err.str()};
}

const std::string kTinyConfig = std::string(NFEMBED_SOURCE_DIR) + "/configs/tiny.json";

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

}  // namespace

TEST_CASE("exit codes for library errors") {
  CHECK(exit_code_for(ConfigError("x")) == kExitUsage);
  CHECK(exit_code_for(UsageError("x")) == kExitUsage);
  CHECK(exit_code_for(PrerequisiteError("x")) == kExitPrerequisite);
  CHECK(exit_code_for(LookupError("x")) == kExitData);
  CHECK(exit_code_for(FormatError("x", 3)) == kExitData);
  CHECK(exit_code_for(std::runtime_error("x")) == kExitInternal);
}

TEST_CASE("usage") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"--help"}).code == kExitOk);
  const auto v = run({"--version"});
  CHECK(v.code == kExitOk);
  CHECK(v.out == "0.1.0\n");
  CHECK(run({"frobnicate"}).code == kExitUsage);
  const auto r = run({"generate"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("--out") != std::string::npos);
  CHECK(run({"train", "--stage", "cnn", "--data", "x", "--model-out", "y"}).code == kExitUsage);
}

TEST_CASE("generate") {
  TempDir dir("nfembed_cli_generate");
  SUBCASE("default config") {
    const auto r = run({"generate", "--out", dir / "d.nfd"});
    REQUIRE(r.code == kExitOk);
    CHECK(r.out.find("60 subjects") != std::string::npos);
    const Dataset ds = load_dataset(dir / "d.nfd");
    CHECK(ds.subjects.size() == 60);
    CHECK(ds.layout.dims == FrameDims{6, 5, 6});
    CHECK(ds.provenance.at("generator").at("seed") == 1);
  }
  SUBCASE("same seed, same file") {
    REQUIRE(run({"generate", "--config", kTinyConfig, "--seed", "9", "--out", dir / "a.nfd"}).code == kExitOk);
    REQUIRE(run({"generate", "--config", kTinyConfig, "--seed", "9", "--out", dir / "b.nfd"}).code == kExitOk);
    REQUIRE(run({"generate", "--config", kTinyConfig, "--seed", "10", "--out", dir / "c.nfd"}).code == kExitOk);
    CHECK(io::read_file(dir / "a.nfd") == io::read_file(dir / "b.nfd"));
    CHECK(io::read_file(dir / "a.nfd") != io::read_file(dir / "c.nfd"));
  }
  SUBCASE("environment override, flag wins") {
    ::setenv("NFEMBED_SEED", "9", 1);
    REQUIRE(run({"generate", "--config", kTinyConfig, "--out", dir / "env.nfd"}).code == kExitOk);
    REQUIRE(run({"generate", "--config", kTinyConfig, "--seed", "10", "--out", dir / "flag.nfd"}).code == kExitOk);
    ::unsetenv("NFEMBED_SEED");
    CHECK(load_dataset(dir / "env.nfd").provenance.at("generator").at("seed") == 9);
    CHECK(load_dataset(dir / "flag.nfd").provenance.at("generator").at("seed") == 10);
  }
  SUBCASE("bare generator config") {
    io::write_file(dir / "g.json", R"({"n_subjects": 7, "dims": [3, 3, 3]})");
    REQUIRE(run({"generate", "--config", dir / "g.json", "--out", dir / "g.nfd"}).code == kExitOk);
    CHECK(load_dataset(dir / "g.nfd").subjects.size() == 7);
  }
  SUBCASE("invalid config names the field") {
    io::write_file(dir / "bad.json", R"({"n_subjects": 2})");
    const auto r = run({"generate", "--config", dir / "bad.json", "--out", dir / "x.nfd"});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("n_subjects") != std::string::npos);
    io::write_file(dir / "broken.json", "{");
    CHECK(run({"generate", "--config", dir / "broken.json", "--out", dir / "x.nfd"}).code == kExitUsage);
    CHECK(run({"generate", "--config", dir / "missing.json", "--out", dir / "x.nfd"}).code == kExitUsage);
  }
}

TEST_CASE("staged training and embedding fitting") {
  TempDir dir("nfembed_cli_stages");
  const std::string data = dir / "d.nfd";
  REQUIRE(run({"generate", "--config", kTinyConfig, "--out", data}).code == kExitOk);

  // no p2a bundle yet
  auto r = run({"train", "--stage", "lstm", "--data", data, "--model-out", dir / "l.nfb", "--config", kTinyConfig});
  CHECK(r.code == kExitPrerequisite);
  CHECK(r.err.find("p2a") != std::string::npos);
  r = run({"train", "--stage", "lstm", "--data", data, "--model-in", dir / "none.nfb", "--model-out",
           dir / "l.nfb", "--config", kTinyConfig});
  CHECK(r.code == kExitPrerequisite);

  r = run({"train", "--stage", "p2a", "--data", data, "--model-out", dir / "p.nfb", "--config", kTinyConfig});
  REQUIRE(r.code == kExitOk);
  CHECK(fs::exists(dir / "p.nfb.loss.csv"));
  const ModelBundle p = load_bundle(dir / "p.nfb");
  CHECK(p.meta.at("master_seed") == 1);
  CHECK(p.meta.at("config").at("generator").at("n_subjects") == 10);

  r = run({"train", "--stage", "lstm", "--data", data, "--model-in", dir / "p.nfb", "--model-out", dir / "l.nfb",
           "--config", kTinyConfig});
  REQUIRE(r.code == kExitOk);
  r = run({"train", "--stage", "lstm", "--variant", "vanilla", "--data", data, "--model-in", dir / "p.nfb",
           "--model-out", dir / "v.nfb", "--config", kTinyConfig});
  REQUIRE(r.code == kExitOk);
  CHECK(load_bundle(dir / "v.nfb").meta.at("variant") == "vanilla");
  CHECK(load_bundle(dir / "l.nfb").meta.at("variant") == "conditioned");
  // the split travels with the bundles
  CHECK(load_bundle(dir / "l.nfb").meta.at("split") == p.meta.at("split"));

  SUBCASE("classifier") {
    r = run({"train", "--stage", "classifier", "--data", data, "--model-in", dir / "v.nfb", "--model-out",
             dir / "c.nfb", "--config", kTinyConfig});
    CHECK(r.code == kExitPrerequisite);
    r = run({"train", "--stage", "classifier", "--data", data, "--model-in", dir / "p.nfb", "--model-out",
             dir / "c.nfb", "--config", kTinyConfig});
    CHECK(r.code == kExitPrerequisite);
    r = run({"train", "--stage", "classifier", "--data", data, "--model-in", dir / "l.nfb", "--model-out",
             dir / "c.nfb", "--config", kTinyConfig});
    REQUIRE(r.code == kExitOk);
    for (auto t : {"tas20", "stai", "caps5", "age", "nf_experience"}) CHECK(r.out.find(t) != std::string::npos);
    const ModelBundle c = load_bundle(dir / "c.nfb");
    CHECK(c.kind() == "classifier");
    CHECK(c.meta.at("accuracy").at("stai").contains("eval"));
    CHECK(c.meta.at("bins").at("nf_experience").is_null());
  }
  SUBCASE("fit-embedding") {
    const auto train_id = load_bundle(dir / "l.nfb").meta.at("split").at("train").at(0).get<std::string>();
    r = run({"fit-embedding", "--model", dir / "l.nfb", "--data", data, "--subject-id", "nobody", "--out",
             dir / "e.json"});
    CHECK(r.code == kExitData);
    r = run({"fit-embedding", "--model", dir / "v.nfb", "--data", data, "--subject-id", train_id, "--out",
             dir / "e.json"});
    CHECK(r.code == kExitPrerequisite);
    r = run({"fit-embedding", "--model", dir / "l.nfb", "--data", data, "--subject-id", train_id, "--out",
             dir / "e.json", "--config", kTinyConfig});
    REQUIRE(r.code == kExitOk);
    const auto j = nlohmann::json::parse(io::read_file(dir / "e.json"));
    CHECK(j.at("embedding").size() == 12);
    CHECK(j.at("subject_id") == train_id);
    CHECK(j.at("final_loss").get<double>() > 0);
    CHECK(j.contains("trained_embedding_loss"));
    CHECK(j.at("fit").at("steps") == 100);
  }
}

TEST_CASE("evaluate and report") {
  TempDir dir("nfembed_cli_evaluate");
  const std::string out_dir = dir / "rep";
  auto r = run({"evaluate", "--config", kTinyConfig, "--out-dir", out_dir, "--threads", "1"});
  REQUIRE(r.code == kExitOk);
  for (auto m : {"p2a_only", "vanilla_lstm", "cond_lstm"}) CHECK(r.out.find(m) != std::string::npos);
  for (auto f : {"report.json", "next_frame.csv", "trait_accuracy.csv", "summary.txt"})
    CHECK(fs::exists(fs::path(out_dir) / f));
  const EvalReport first = load_report(out_dir);
  CHECK(first.repeats.size() == 2);

  r = run({"evaluate", "--config", kTinyConfig, "--out-dir", dir / "rep2", "--threads", "1"});
  REQUIRE(r.code == kExitOk);
  CHECK(io::read_file(out_dir + "/report.json") == io::read_file(dir / "rep2/report.json"));

  r = run({"evaluate", "--config", kTinyConfig, "--out-dir", dir / "rep3", "--repeats", "3", "--seed", "4"});
  REQUIRE(r.code == kExitOk);
  const EvalReport third = load_report(dir / "rep3");
  CHECK(third.repeats.size() == 3);
  CHECK(third.master_seed == 4);
  CHECK(third.config.at("seed") == 4);
  CHECK(third.config.at("repeats") == 3);

  CHECK(run({"evaluate", "--config", kTinyConfig, "--out-dir", dir / "x", "--repeats", "1"}).code == kExitUsage);

  r = run({"report", "--in", out_dir, "--format", "csv", "--task", "next_frame"});
  REQUIRE(r.code == kExitOk);
  CHECK(r.out == report_csv(first, kNextFrameTask));
  r = run({"report", "--in", out_dir + "/report.json", "--format", "json"});
  REQUIRE(r.code == kExitOk);
  CHECK(EvalReport::from_json(nlohmann::json::parse(r.out)) == first);
  r = run({"report", "--in", out_dir, "--out-dir", dir / "copy"});
  REQUIRE(r.code == kExitOk);
  CHECK(r.out == report_text(first));
  CHECK(load_report(dir / "copy") == first);
  CHECK(run({"report", "--in", dir / "nothing"}).code == kExitData);
}
