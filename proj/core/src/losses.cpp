#include "cat/losses.hpp"

#include <cmath>

#include "json.hpp"

#include "cat/error.hpp"

namespace cat::losses {

void LossWeights::validate() const {
  const std::pair<const char*, double> all[] = {{"sem", sem}, {"rec", rec},   {"cmt", cmt},
                                                {"code", code}, {"adv", adv}, {"feat", feat}};
  for (const auto& [name, w] : all) {
    require(std::isfinite(w) && w >= 0.0, std::string("loss weight ") + name + " must be finite and >= 0");
  }
}

LossReport total_loss(const LossTerms& terms, const LossWeights& weights) {
  weights.validate();
  const std::pair<const char*, double> all[] = {{"sem", terms.sem},   {"rec", terms.rec}, {"cmt", terms.cmt},
                                                {"code", terms.code}, {"adv", terms.adv}, {"feat", terms.feat}};
  for (const auto& [name, v] : all) {
    require(std::isfinite(v), std::string("loss term ") + name + " is not finite");
  }
  LossReport r{terms, weights, 0.0};
  r.total = weights.sem * terms.sem;
  r.total += weights.rec * terms.rec;
  r.total += weights.cmt * terms.cmt;
  r.total += weights.code * terms.code;
  r.total += weights.adv * terms.adv;
  r.total += weights.feat * terms.feat;
  return r;
}

std::string LossReport::to_json() const {
  nlohmann::json j;
  j["terms"] = {{"sem", terms.sem}, {"rec", terms.rec}, {"cmt", terms.cmt},
                {"code", terms.code}, {"adv", terms.adv}, {"feat", terms.feat}};
  j["weights"] = {{"sem", weights.sem}, {"rec", weights.rec}, {"cmt", weights.cmt},
                  {"code", weights.code}, {"adv", weights.adv}, {"feat", weights.feat}};
  j["total"] = total;
  return j.dump();
}

}  // namespace cat::losses
