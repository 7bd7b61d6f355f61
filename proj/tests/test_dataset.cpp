#include <doctest.h>

#include <cmath>

#include "hte/types.hpp"

using namespace hte;

namespace {

Dataset small_dataset() {
  Dataset d;
  d.features = Matrix(4, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    d.features(i, 0) = static_cast<double>(i);
    d.features(i, 1) = static_cast<double>(i % 2);
  }
  d.treatment = {1, 0, 1, 0};
  d.response = {3.0, 1.0, 5.0, 1.0};
  return d;
}

}  // namespace

TEST_CASE("validate_dataset accepts a well-formed dataset") {
  CHECK_NOTHROW(validate_dataset(small_dataset()));
}

TEST_CASE("validate_dataset rejects a single-arm dataset") {
  Dataset d = small_dataset();
  d.treatment = {1, 1, 1, 1};
  CHECK_THROWS_WITH_AS(validate_dataset(d), doctest::Contains("degenerate-arm"), Error);
}

TEST_CASE("validate_dataset rejects non-finite responses") {
  Dataset d = small_dataset();
  d.response[2] = std::nan("");
  CHECK_THROWS_WITH_AS(validate_dataset(d), doctest::Contains("non-finite-value"), Error);
}

TEST_CASE("validate_dataset rejects length mismatches") {
  Dataset d = small_dataset();
  d.response.pop_back();
  CHECK_THROWS_WITH_AS(validate_dataset(d), doctest::Contains("dimension-mismatch"), Error);
}

TEST_CASE("validate_dataset rejects non-binary treatment") {
  Dataset d = small_dataset();
  d.treatment[1] = 2;
  CHECK_THROWS_AS(validate_dataset(d), Error);
}

TEST_CASE("derived arm counts") {
  const Dataset d = small_dataset();
  CHECK(d.n_treated() == 2);
  CHECK(d.n_control() == 2);
}

TEST_CASE("subset keeps rows in order") {
  const Dataset d = small_dataset();
  const std::vector<std::size_t> rows{2, 3};
  const Dataset s = d.subset(rows);
  CHECK(s.n() == 2);
  CHECK(s.response[0] == 5.0);
  CHECK(s.treatment[1] == 0);
  CHECK(s.features(0, 0) == 2.0);
}
