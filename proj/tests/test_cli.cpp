#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "cli.hpp"
#include "invmahal/data_io.hpp"
#include "invmahal/metric.hpp"

using namespace invmahal;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "invmahal");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch() {
  const fs::path dir = fs::temp_directory_path() / "invmahal_cli_test";
  fs::create_directories(dir);
  return dir;
}

std::string p(const fs::path& f) { return f.string(); }

void write_blobs(const fs::path& train, const fs::path& test) {
  LabeledSet all = make_blobs(2, 40, 3, 0.1, 5);
  std::vector<std::size_t> a, b;
  for (std::size_t i = 0; i < all.size(); ++i) (i % 2 ? b : a).push_back(i);
  write_feature_table(train, all.subset(a));
  write_feature_table(test, all.subset(b));
}

}  // namespace

TEST_CASE("learn on the two-negative fixture") {
  const auto dir = scratch();
  write_file(dir / "toy.csv", "A,0,0\nB,1,0\nB,0,1\n");
  const Run r = run({"learn", "--query", "0", "--negatives", p(dir / "toy.csv"), "--out", p(dir / "toy.metric")});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("support 2\n") != std::string::npos);
  CHECK(r.out.find("rank 2\n") != std::string::npos);
  const RowMatrix M = materialize(load_metric(dir / "toy.metric"));
  CHECK(M(0, 0) == doctest::Approx(2.0));
  CHECK(M(1, 1) == doctest::Approx(2.0));

  SUBCASE("query from a file uses every row as a negative") {
    write_file(dir / "q.csv", "A,0,0\n");
    write_file(dir / "negs.csv", "B,1,0\nB,0,1\n");
    const Run r2 = run({"learn", "--query", p(dir / "q.csv"), "--negatives", p(dir / "negs.csv"), "--out",
                        p(dir / "toy2.metric")});
    CHECK(r2.code == 0);
    CHECK(read_file(dir / "toy2.metric") == read_file(dir / "toy.metric"));
  }
}

TEST_CASE("learn argument errors") {
  const auto dir = scratch();
  write_file(dir / "toy.csv", "A,0,0\nB,1,0\n");
  CHECK(run({"learn", "--query", "0", "--negatives", p(dir / "toy.csv")}).code == 2);
  CHECK(run({"learn", "--query", "5", "--negatives", p(dir / "toy.csv"), "--out", p(dir / "x")}).code == 2);
  CHECK(run({"learn", "--query", "0", "--negatives", p(dir / "missing.csv"), "--out", p(dir / "x")}).code == 1);
  CHECK(run({"learn", "--query", "0", "--negatives", p(dir / "toy.csv"), "--margin", "-1", "--out",
             p(dir / "x")})
            .code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({}).code == 2);
}

TEST_CASE("tangents on a blank image change nothing") {
  const auto dir = scratch();
  write_file(dir / "blank.csv", "A,0,0,0,0\nB,1,0,0,0\nB,0,0,0.5,1\n");
  const Run plain = run({"learn", "--query", "0", "--negatives", p(dir / "blank.csv"), "--out", p(dir / "plain.m")});
  const Run tang = run({"learn", "--query", "0", "--negatives", p(dir / "blank.csv"), "--tangents", "shift:1",
                        "--out", p(dir / "tang.m")});
  REQUIRE(plain.code == 0);
  REQUIRE(tang.code == 0);
  CHECK(read_file(dir / "plain.m") == read_file(dir / "tang.m"));
}

TEST_CASE("knn-eval on blobs, determinism and k validation") {
  const auto dir = scratch();
  write_blobs(dir / "train.csv", dir / "test.csv");
  const std::vector<std::string> base{"knn-eval", "--table", p(dir / "train.csv"), "--test-table",
                                      p(dir / "test.csv"), "--methods", "l2,local_mahal", "--seed", "4"};
  auto with_report = [&](const std::string& stem) {
    auto a = base;
    a.push_back("--report");
    a.push_back(p(dir / stem));
    return a;
  };
  const Run r = run(with_report("rep1"));
  REQUIRE(r.code == 0);
  const std::string csv = read_file(dir / "rep1.csv");
  CHECK(csv ==
        "task,method,error_rate,error_std,errors,total,failures\n"
        "classification,l2,0,0,0,40,0\n"
        "classification,local_mahal,0,0,0,40,0\n");
  REQUIRE(run(with_report("rep2")).code == 0);
  CHECK(read_file(dir / "rep1.txt") == read_file(dir / "rep2.txt"));
  CHECK(read_file(dir / "rep1.csv") == read_file(dir / "rep2.csv"));
  CHECK(fs::exists(dir / "rep1.timings.csv"));

  auto even = with_report("rep3");
  even.insert(even.end(), {"--k", "2"});
  CHECK(run(even).code == 2);
  auto bad_method = with_report("rep4");
  bad_method.insert(bad_method.end(), {"--methods", "lmnn"});
  CHECK(run(bad_method).code == 2);
  CHECK(run(base).code == 2);  // no --report
}

TEST_CASE("args-file expands flags") {
  const auto dir = scratch();
  write_blobs(dir / "train.csv", dir / "test.csv");
  write_file(dir / "args.txt", "# blobs run\n--table " + p(dir / "train.csv") + "\n--test-table=" +
                                   p(dir / "test.csv") + "\n--methods l2\n--report " + p(dir / "argrep") + "\n");
  const Run r = run({"knn-eval", "--args-file", p(dir / "args.txt")});
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "argrep.txt"));
  CHECK(run({"knn-eval", "--args-file", p(dir / "none.txt")}).code == 2);
}

TEST_CASE("verify-pairs guards folds") {
  const auto dir = scratch();
  write_file(dir / "pairs.csv", "same,0,0,0,0\ndiff,0,0,5,5\nsame,5,5,5,5\ndiff,5,5,0,0\n");
  write_file(dir / "bank.csv", "x,1,1\nx,-1,2\nx,3,-1\n");
  const std::vector<std::string> a{"verify-pairs", "--pairs", p(dir / "pairs.csv"), "--bank", p(dir / "bank.csv"),
                                   "--report", p(dir / "vp")};
  auto one = a;
  one.insert(one.end(), {"--folds", "1"});
  CHECK(run(one).code == 2);
  auto two = a;
  two.insert(two.end(), {"--folds", "2", "--methods", "l2,local_mahal"});
  const Run r = run(two);
  CHECK(r.code == 0);
  CHECK(read_file(dir / "vp.txt").find("verification.local_mahal.error_rate=0\n") != std::string::npos);
}

TEST_CASE("bench with n=1 prints one row") {
  const auto dir = scratch();
  const Run r = run({"bench", "--n", "1", "--d", "16", "--out", p(dir / "bench.csv")});
  REQUIRE(r.code == 0);
  std::istringstream lines(read_file(dir / "bench.csv"));
  std::size_t rows = 0;
  for (std::string line; std::getline(lines, line);) {
    if (!line.empty() && line[0] != '#' && line.rfind("n,", 0) != 0) ++rows;
  }
  CHECK(rows == 1);
  CHECK(run({"bench", "--n", "0"}).code == 2);
}

TEST_CASE("oracle-check passes with defaults") {
  const Run r = run({"oracle-check"});
  CHECK(r.code == 0);
  CHECK(r.out.find("failed 0") != std::string::npos);
}

TEST_CASE("help on every command") {
  for (const char* cmd : {"learn", "knn-eval", "verify-pairs", "bench", "oracle-check"}) {
    const Run r = run({cmd, "--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("--seed") != std::string::npos);
    CHECK(r.out.find("--args-file") != std::string::npos);
  }
  CHECK(run({"--help"}).code == 0);
}
