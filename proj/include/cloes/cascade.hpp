#pragma once

#include <span>
#include <vector>

#include "cloes/core.hpp"

namespace cloes {

/// Standard logistic function, evaluated without overflow for any finite input.
double sigmoid(double z);
/// log(sigmoid(z)), finite for every finite z.
double log_sigmoid(double z);

struct StageProbs {
  std::vector<double> per_stage;   // p_{q,x,j}
  std::vector<double> cumulative;  // probability of passing stages 0..k
  double final = 0.0;              // cumulative.back()
};

/// w_{x,j} . f_{c_j}(x) + w_{q,j} . g(q)
double stage_logit(const CascadeModel& model, std::span<const double> query_features,
                   std::span<const double> item_features, std::size_t j);

double stage_probability(const CascadeModel& model, const QueryGroup& group, std::span<const double> item_features,
                         std::size_t j);

StageProbs cascade_probabilities(const CascadeModel& model, const QueryGroup& group,
                                 std::span<const double> item_features);

std::vector<StageProbs> score_group(const CascadeModel& model, const QueryGroup& group);

}  // namespace cloes
