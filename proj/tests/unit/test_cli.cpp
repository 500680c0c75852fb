#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "pointmeta/checks.hpp"
#include "pointmeta/cli.hpp"
#include "pointmeta/cloud.hpp"

using namespace pmeta;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "pmeta_test_cli";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("analyze prints a cost table") {
  const Run r = run({"analyze", "--variant", "pointmetabase", "--family", "L", "--points", "16384"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.rfind("variant\tparams\tflops\tn_points\tmode\n", 0) == 0);
  CHECK(r.out.find("pointmetabase\t2665376\t1125449728\t16384\tmacs") != std::string::npos);

  const Run layers = run({"analyze", "--family", "S", "--layers"});
  CHECK(layers.out.find("enc.s1.sa") != std::string::npos);
  const Run rec = run({"analyze", "--family", "S", "--records", "--mode", "flops2x"});
  CHECK(rec.out.find("mode=flops2x") != std::string::npos);
}

TEST_CASE("compare prints one row per variant") {
  const Run r = run({"compare", "--variants", "plain_max,plain_epe_max,plain_ipe_max", "--points", "4096"});
  CHECK(r.code == kExitOk);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 4);
}

TEST_CASE("usage errors exit 1 with help") {
  for (const auto& args : std::vector<std::vector<std::string>>{
           {}, {"analyze", "--bogus"}, {"frobnicate"}, {"analyze", "--mode", "gflops"}, {"compare"}, {"-variant"}}) {
    const Run r = run(args);
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("error:") != std::string::npos);
    CHECK(r.err.find("Usage: pmeta") != std::string::npos);
  }
  CHECK(run({"bench", "--points", "12,x"}).code == kExitUsage);
}

TEST_CASE("help exits 0") {
  const Run r = run({"--help"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("check") != std::string::npos);
}

TEST_CASE("data errors exit 2") {
  CHECK(run({"analyze", "--variant", "resnet"}).code == kExitData);
  CHECK(run({"infer", "--input", scratch("nope.xyz").string(), "--output", scratch("o.bin").string()}).code ==
        kExitData);
  CHECK(run({"check", "--suite", "nonsense"}).code == kExitData);
}

TEST_CASE("check runs a suite") {
  const Run r = run({"check", "--suite", "numkernel"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("PASS ") != std::string::npos);
  CHECK(r.out.find("FAIL ") == std::string::npos);
}

TEST_CASE("analyze, compare and check are byte-identical across runs") {
  const std::vector<std::string> a{"analyze", "--family", "XL", "--layers"};
  CHECK(run(a).out == run(a).out);
  const std::vector<std::string> c{"compare", "--variants", "n1p1,n1p2", "--records"};
  CHECK(run(c).out == run(c).out);
  const std::vector<std::string> k{"check", "--suite", "cloud", "--seed", "9"};
  CHECK(run(k).out == run(k).out);
}

TEST_CASE("infer round trip through weights files") {
  checks::Rng rng(5);
  const auto in = scratch("cloud.xyz");
  save_cloud(rng.cloud(300, 3), in, CloudFormat::xyz_text);
  const auto w = scratch("w.pmwt"), o1 = scratch("o1.bin"), o2 = scratch("o2.bin"), o3 = scratch("o3.bin");

  const Run first = run({"infer", "--family", "S", "--input", in.string(), "--output", o1.string(), "--save-weights",
                         w.string(), "--seed", "3"});
  REQUIRE(first.code == kExitOk);
  const Run second =
      run({"infer", "--family", "S", "--input", in.string(), "--weights", w.string(), "--output", o2.string()});
  REQUIRE(second.code == kExitOk);
  CHECK(slurp(o1) == slurp(o2));
  const PointCloud out = load_cloud(o1, CloudFormat::pmeta_binary);
  CHECK(out.size() == 300);
  CHECK(out.feature_dim() == 32);

  ::setenv("PMETA_SEED", "3", 1);
  CHECK(run({"infer", "--family", "S", "--input", in.string(), "--output", o3.string()}).code == kExitOk);
  ::unsetenv("PMETA_SEED");
  CHECK(slurp(o3) == slurp(o1));

  const Run wrong = run({"infer", "--family", "L", "--input", in.string(), "--weights", w.string(), "--output",
                         o3.string()});
  CHECK(wrong.code == kExitData);
  CHECK(wrong.err.find("named-parameter") != std::string::npos);

  const Run pooled = run({"infer", "--family", "S", "--head", "pooled", "--classes", "4", "--input", in.string(),
                          "--output", scratch("p.xyz").string()});
  CHECK(pooled.code == kExitOk);
  CHECK(load_cloud(scratch("p.xyz"), CloudFormat::xyz_text).size() == 1);
}

TEST_CASE("bad PMETA_SEED is a usage error") {
  ::setenv("PMETA_SEED", "abc", 1);
  const Run r = run({"check", "--suite", "numkernel"});
  ::unsetenv("PMETA_SEED");
  CHECK(r.code == kExitUsage);
}

TEST_CASE("installed binary honors exit codes") {
  const std::string bin = PMETA_BINARY;
  CHECK(shell(bin + " --help > /dev/null") == 0);
  CHECK(shell(bin + " analyze --nope > /dev/null 2>&1") == 1);
  CHECK(shell(bin + " analyze --variant nope > /dev/null 2>&1") == 2);
  CHECK(shell(bin + " analyze --family S > /dev/null") == 0);
}
