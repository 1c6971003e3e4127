#include <cmath>
#include <limits>
#include <string>

#include "cat/error.hpp"
#include "cat/losses.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace cat;
using namespace cat::losses;

TEST_CASE("all-zero terms give zero") { CHECK(total_loss({}).total == 0.0); }

TEST_CASE("unit terms sum the default weights") {
  const auto r = total_loss({1, 1, 1, 1, 1, 1});
  CHECK(r.total == 39.25);
  CHECK(r.weights.sem == 20.0);
  CHECK(r.weights.rec == 15.0);
  CHECK(r.weights.cmt == 0.25);
  CHECK(r.weights.code == 1.0);
  CHECK(r.weights.adv == 1.0);
  CHECK(r.weights.feat == 2.0);
}

TEST_CASE("each term enters linearly with its weight") {
  const LossTerms base{0.3, 1.7, 0.9, 2.2, 0.4, 1.1};
  const double t0 = total_loss(base).total;
  const LossWeights w;
  const double weights[] = {w.sem, w.rec, w.cmt, w.code, w.adv, w.feat};
  for (int i = 0; i < 6; ++i) {
    LossTerms bumped = base;
    double* fields[] = {&bumped.sem, &bumped.rec, &bumped.cmt, &bumped.code, &bumped.adv, &bumped.feat};
    *fields[i] += 0.5;
    CHECK(total_loss(bumped).total - t0 == doctest::Approx(0.5 * weights[i]).epsilon(1e-12));
  }
  LossWeights custom;
  custom.sem = 0.0;
  CHECK(total_loss({5, 0, 0, 0, 0, 0}, custom).total == 0.0);
}

TEST_CASE("non-finite terms and bad weights are rejected") {
  LossTerms t;
  t.cmt = std::numeric_limits<double>::quiet_NaN();
  try {
    total_loss(t);
    FAIL("expected a contract error");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("cmt") != std::string::npos);
  }
  t.cmt = 0.0;
  t.feat = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(total_loss(t), ContractError);
  LossWeights w;
  w.rec = -1.0;
  CHECK_THROWS_AS(total_loss({}, w), ContractError);
}

TEST_CASE("report serializes terms, weights and total") {
  const auto r = total_loss({1, 2, 3, 4, 5, 6});
  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j.at("total").get<double>() == r.total);
  CHECK(j.at("terms").at("rec").get<double>() == 2.0);
  CHECK(j.at("weights").at("feat").get<double>() == 2.0);
}
