#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result cli(const std::string& args) {
  const std::string cmd = std::string(L2RW_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path write_cfg(const fs::path& dir, const std::string& name, const std::string& text) {
  const fs::path p = dir / name;
  std::ofstream(p) << text;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const char* kSmall = R"([data]
classes = 4
per_class = 40
dim = 5
[student]
hidden = 8
batch_size = 16
epochs = 2
[teacher]
K = 4
B = 2
)";

}  // namespace

TEST_CASE("datagen reports corruption") {
  const auto dir = l2rw::test::scratch_dir("cli_datagen");
  const auto clean = write_cfg(dir, "clean.cfg", "[noise]\nkind = none\n");
  Result r = cli("datagen --config " + clean.string() + " --out " + (dir / "d0").string());
  CHECK(r.code == 0);
  CHECK(r.out.find("(0.00%)") != std::string::npos);
  for (const char* f : {"meta", "inputs", "labels"}) CHECK(fs::exists(dir / "d0" / f));

  const auto noisy = write_cfg(dir, "noisy.cfg", "[noise]\nkind = uniform\np = 0.4\n");
  r = cli("datagen --config " + noisy.string() + " --out " + (dir / "d1").string());
  CHECK(r.code == 0);
  const auto at = r.out.find('(', r.out.find("corrupted"));
  REQUIRE(at != std::string::npos);
  const double pct = std::stod(r.out.substr(at + 1));
  CHECK(pct > 34.0);
  CHECK(pct < 38.0);
}

TEST_CASE("exit codes") {
  const auto dir = l2rw::test::scratch_dir("cli_codes");
  CHECK(cli("").code == 2);
  CHECK(cli("train --config /nonexistent.cfg").code == 2);
  const auto bad = write_cfg(dir, "bad.cfg", "[student]\nlearnin_rate = 1\n");
  CHECK(cli("train --config " + bad.string() + " --out " + (dir / "o").string()).code == 2);
  CHECK(cli("train --config " + bad.string() + " --weighter random").code == 2);
  CHECK(cli("report " + (dir / "nothing").string()).code == 1);
  CHECK(cli("--version").code == 0);

  const auto gc = write_cfg(dir, "gc.cfg",
                            "[gradcheck]\nproblem = quadratic\nsteps = 2\ninput_dim = 3\n");
  Result r = cli("gradcheck --config " + gc.string());
  CHECK(r.code == 0);
  CHECK(r.out.find("gradcheck: PASS") != std::string::npos);
  const auto neg = write_cfg(dir, "neg.cfg",
                             "[gradcheck]\nproblem = quadratic\nsteps = 2\ninput_dim = 3\n"
                             "corrupt_sign = true\n");
  r = cli("gradcheck --config " + neg.string());
  CHECK(r.code == 4);
  CHECK(r.out.find("FAIL") != std::string::npos);

  const auto blow = write_cfg(dir, "blow.cfg",
                              "[data]\nclasses = 4\nper_class = 40\ndim = 5\n"
                              "[student]\nhidden = 8\nbatch_size = 16\nepochs = 2\nlr = 1e6\n"
                              "[teacher]\nK = 4\n");
  r = cli("train --config " + blow.string() + " --out " + (dir / "blow").string());
  CHECK(r.code == 3);
  CHECK(fs::exists(dir / "blow" / "seed_1" / "metrics.csv"));
}

TEST_CASE("train is byte-identical on rerun and feeds report") {
  const auto dir = l2rw::test::scratch_dir("cli_train");
  const auto cfg = write_cfg(dir, "small.cfg", kSmall);
  for (const char* out : {"a", "b"}) {
    const Result r = cli("train --config " + cfg.string() + " --out " + (dir / out).string() +
                         " --seed 1 --seed 2");
    CHECK(r.code == 0);
  }
  for (const char* s : {"seed_1", "seed_2"})
    for (const char* f : {"metrics.csv", "metrics.jsonl", "weight_report.csv"}) {
      CHECK(fs::exists(dir / "a" / s / f));
      CHECK(slurp(dir / "a" / s / f) == slurp(dir / "b" / s / f));
    }
  CHECK(fs::exists(dir / "a" / "manifest.json"));

  Result u = cli("train --config " + cfg.string() + " --out " + (dir / "u").string() +
                 " --seed 1 --seed 2 --weighter uniform");
  CHECK(u.code == 0);
  const Result rep = cli("report " + (dir / "u").string() + " " + (dir / "a").string() +
                         " --out " + (dir / "rep").string());
  CHECK(rep.code == 0);
  CHECK(fs::exists(dir / "rep" / "summary.csv"));
  CHECK(fs::exists(dir / "rep" / "weight_scatter.csv"));

  const Result resumed = cli("train --config " + cfg.string() + " --out " +
                             (dir / "a").string() + " --seed 1 --seed 2 --resume");
  CHECK(resumed.code == 0);
  CHECK(slurp(dir / "a" / "seed_1" / "metrics.csv") == slurp(dir / "b" / "seed_1" / "metrics.csv"));
}
