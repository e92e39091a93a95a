#pragma once

#include "nano/vocab.hpp"

#include <string>
#include <string_view>

namespace nano {

// Ratings live on 1..2nu-1 with nu the neutral midpoint.
inline int max_rating(int nu) { return 2 * nu - 1; }
bool rating_in_range(int r, int nu);
void check_rating(int r, int nu);  // throws std::out_of_range

// Generator loss strength |r - nu| / (nu - 1).
double kappa(int r, int nu);
// Signed distribution-critic weight (r - nu) / (nu - 1).
double c_factor(int r, int nu);

enum class Origin { generated, manual };
std::string_view to_string(Origin o);
Origin origin_from_string(std::string_view s);

struct RatedSample {
  Sequence seq;
  int rating = 0;
  Origin origin = Origin::generated;
  int iteration = 0;

  bool operator==(const RatedSample&) const = default;
};

inline constexpr int kMaxManualSamples = 5;

}  // namespace nano
