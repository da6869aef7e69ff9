#include <catch2/catch_amalgamated.hpp>

#include "bopkit/oracle.hpp"
#include "helpers.hpp"

using namespace bopkit;

TEST_CASE("truncated enumeration") {
  const WeightMatrix g2 = testutil::g2();

  SECTION("total weight of the 2-cycle converges to the closed form") {
    QuantitySpec spec;
    spec.s = 0;
    spec.t = 0;
    const EnumerationResult r = enumerate_paths(g2, spec, 30);
    CHECK(r.remainder_bound < 1e-9);
    CHECK(r.value == Catch::Approx(1.25).margin(1e-9));
  }

  SECTION("hitting paths cannot avoid their destination") {
    QuantitySpec spec;
    spec.hitting = true;
    spec.s = 0;
    spec.t = 1;
    spec.avoids = {1};
    for (int depth : {0, 3, 12}) CHECK(enumerate_paths(g2, spec, depth).value == 0.0);
  }

  SECTION("zero-length paths carry presence of their own node only") {
    QuantitySpec same;
    same.s = 0;
    same.t = 0;
    same.contains = {0};
    CHECK(enumerate_paths(g2, same, 0).value == 1.0);
    QuantitySpec other = same;
    other.contains = {1};
    CHECK(enumerate_paths(g2, other, 0).value == 0.0);
  }

  SECTION("aggregated endpoints sum the whole table") {
    const WeightMatrix wm = testutil::random_weight_matrix(4, 23);
    const PathWeightTables tables = fundamental_matrix(wm);
    QuantitySpec everything;  // s = t = -1
    const EnumerationResult total = enumerate_paths(wm, everything, 12);
    CHECK(std::abs(total.value - tables.z_total()) <= total.remainder_bound + 1e-12);
    QuantitySpec one_row = everything;
    one_row.s = 2;
    const EnumerationResult row = enumerate_paths(wm, one_row, 12);
    CHECK(std::abs(row.value - tables.z_row_sum(2)) <= row.remainder_bound + 1e-12);
    CHECK(hitting_matrix(tables) == tables.hitting());
  }

  SECTION("remainder bound shrinks monotonically with depth") {
    QuantitySpec spec;
    spec.s = 0;
    spec.t = 1;
    double previous = std::numeric_limits<double>::infinity();
    for (int depth : {2, 4, 8, 16}) {
      const double bound = enumerate_paths(g2, spec, depth).remainder_bound;
      CHECK(bound < previous);
      CHECK(bound >= 0.0);
      previous = bound;
    }
  }

  SECTION("presence values grow monotonically in depth and stay below closed form") {
    const WeightMatrix wm = testutil::random_weight_matrix(4, 17);
    const PathWeightTables tables = fundamental_matrix(wm);
    QuantitySpec spec;
    spec.s = 1;
    spec.t = 2;
    double previous = -1.0;
    for (int depth : {1, 2, 4, 8, 14}) {
      const EnumerationResult r = enumerate_paths(wm, spec, depth);
      CHECK(r.value >= previous);
      CHECK(r.value <= tables.z(1, 2) + 1e-12);
      previous = r.value;
    }
  }

  SECTION("guards") {
    QuantitySpec spec;
    CHECK_THROWS_AS(enumerate_paths(g2, spec, 41), ValidationError);
    CHECK_THROWS_AS(enumerate_paths(testutil::random_weight_matrix(9, 1), spec, 5),
                    ValidationError);
    QuantitySpec bad;
    bad.contains = {7};
    CHECK_THROWS_AS(enumerate_paths(g2, bad, 5), ValidationError);
  }
}

TEST_CASE("full verification sweep") {
  SECTION("2-cycle fixture passes at 1e-8") {
    const VerifyReport report = verify_all(testutil::g2(), 1e-8);
    INFO(report.render());
    CHECK(report.pass);
  }

  SECTION("random graph passes at 1e-8") {
    const VerifyReport report = verify_all(testutil::random_weight_matrix(5, 42), 1e-8);
    INFO(report.render());
    CHECK(report.pass);
    CHECK(report.checks.size() >= 20);
    for (const auto& check : report.checks) CHECK(check.comparisons > 0);
  }

  SECTION("a corrupted fundamental matrix fails on the total weight first") {
    const VerifyReport report =
        verify_all(testutil::random_weight_matrix(4, 7), 1e-8, InjectedFault{0, 0, 1e-3});
    CHECK_FALSE(report.pass);
    REQUIRE(report.first_failure() != nullptr);
    CHECK(report.first_failure()->kind == "total-weight");
  }
}

TEST_CASE("finite difference derivative checks") {
  SECTION("2-cycle fixture gradient") {
    const WeightMatrix g2 = testutil::g2();
    const PathWeightTables tables = fundamental_matrix(g2);
    CHECK(weight_gradient(tables, 0, 1)(0, 0) == Catch::Approx(0.625));
    const DerivativeCheckReport report = finite_difference_check(g2, 50, 1e-6);
    INFO(report.render());
    CHECK(report.pass());
  }

  SECTION("zero weights reproduce the Kronecker gradient to O(h^2)") {
    const WeightMatrix zero = validate_weight_matrix(Eigen::MatrixXd::Zero(3, 3));
    const DerivativeCheckReport report = finite_difference_check(zero, 40, 1e-6);
    CHECK(report.max_first_error < 1e-10);
  }

  SECTION("random graphs stay under the 1e-4 tolerance") {
    const DerivativeCheckReport report =
        finite_difference_check(testutil::random_weight_matrix(4, 99), 100, 1e-6);
    INFO(report.render());
    CHECK(report.max_first_error < 1e-4);
    CHECK(report.max_second_error < 1e-4);
  }
}
