#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "gradapprox/bench.hpp"
#include "gradapprox/blas.hpp"

using namespace gradapprox;

TEST_CASE("bench result arithmetic holds exactly") {
  blas_init();
  BenchCase bc{2, 3, 6, 6, 4, 3, 5, 1};
  BenchResult r = run_bench(bc, 7);
  REQUIRE(r.approx_total_us == r.approx_kernel_us + r.transpose_us);
  REQUIRE(r.speedup == r.dense_us / r.approx_total_us);
  REQUIRE(r.dense_us > 0);
  REQUIRE(r.approx_kernel_us > 0);
}

TEST_CASE("bench rejects invalid cases") {
  REQUIRE_THROWS_AS(run_bench({0, 3, 6, 6, 4, 3}, 0), std::invalid_argument);
  REQUIRE_THROWS_AS(run_bench({2, 3, 6, 6, 4, 4}, 0), std::invalid_argument);  // even k
  BenchCase few{2, 3, 6, 6, 4, 3};
  few.iters = 3;
  REQUIRE_THROWS_AS(run_bench(few, 0), std::invalid_argument);
}

TEST_CASE("empty sweep emits a header-only csv") {
  std::ostringstream csv;
  auto rows = sweep({}, 0, csv);
  REQUIRE(rows.empty());
  REQUIRE(csv.str() ==
          "n,ci,h,w,co,k,dense_us,approx_kernel_us,transpose_us,approx_total_us,speedup\n");
}

TEST_CASE("a 3-case sweep emits 3 data rows") {
  blas_init();
  std::ostringstream csv;
  std::vector<BenchCase> cases = {{2, 3, 6, 6, 4, 3, 5, 1},
                                  {1, 2, 4, 4, 2, 1, 5, 1},
                                  {2, 2, 5, 5, 3, 5, 5, 1}};
  auto rows = sweep(cases, 11, csv);
  REQUIRE(rows.size() == 3);
  for (const auto &row : rows) {
    REQUIRE(row.error.empty());
    REQUIRE(row.result.has_value());
  }
  int lines = 0;
  std::string line;
  std::istringstream in(csv.str());
  while (std::getline(in, line)) ++lines;
  REQUIRE(lines == 4);  // header + 3 rows
}

TEST_CASE("an invalid case becomes a marked error row, not an abort") {
  std::ostringstream csv;
  std::vector<BenchCase> cases = {{2, 3, 6, 6, 4, 4, 5, 1}};  // even k
  auto rows = sweep(cases, 0, csv);
  REQUIRE(rows.size() == 1);
  REQUIRE_FALSE(rows[0].result.has_value());
  REQUIRE_FALSE(rows[0].error.empty());
  REQUIRE(csv.str().find("error") != std::string::npos);
}

TEST_CASE("repeated identical cases give speedups within 25 percent") {
  blas_init();
  BenchCase bc{8, 16, 8, 8, 16, 3, 9, 2};
  const double a = run_bench(bc, 3).speedup;
  const double b = run_bench(bc, 3).speedup;
  REQUIRE(std::abs(a - b) / std::max(a, b) < 0.25);
}
