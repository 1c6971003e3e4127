#pragma once

#include <string>

namespace cat::losses {

struct LossWeights {
  double sem = 20.0;
  double rec = 15.0;
  double cmt = 0.25;
  double code = 1.0;
  double adv = 1.0;
  double feat = 2.0;

  void validate() const;
};

/// Raw per-term values. adv and feat come from an external discriminator.
struct LossTerms {
  double sem = 0.0;
  double rec = 0.0;
  double cmt = 0.0;
  double code = 0.0;
  double adv = 0.0;
  double feat = 0.0;
};

struct LossReport {
  LossTerms terms;
  LossWeights weights;
  double total = 0.0;

  std::string to_json() const;
};

/// total = sum of weight * term, accumulated in the field order above.
LossReport total_loss(const LossTerms& terms, const LossWeights& weights = {});

}  // namespace cat::losses
