#include "nano/feedback.hpp"

#include <cstdlib>
#include <stdexcept>

namespace nano {

bool rating_in_range(int r, int nu) { return nu > 1 && r >= 1 && r <= max_rating(nu); }

void check_rating(int r, int nu) {
  if (nu < 2) throw std::invalid_argument("nu must be > 1");
  if (!rating_in_range(r, nu)) {
    throw std::out_of_range("rating " + std::to_string(r) + " outside 1.." + std::to_string(max_rating(nu)));
  }
}

double kappa(int r, int nu) {
  check_rating(r, nu);
  return static_cast<double>(std::abs(r - nu)) / static_cast<double>(nu - 1);
}

double c_factor(int r, int nu) {
  check_rating(r, nu);
  return static_cast<double>(r - nu) / static_cast<double>(nu - 1);
}

std::string_view to_string(Origin o) { return o == Origin::manual ? "manual" : "generated"; }

Origin origin_from_string(std::string_view s) {
  if (s == "manual") return Origin::manual;
  if (s == "generated") return Origin::generated;
  throw std::invalid_argument("unknown sample origin: " + std::string(s));
}

}  // namespace nano
