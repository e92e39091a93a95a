#pragma once

// Evaluation of a batch of generations: attribute accuracy / proportions,
// total-variation distance to the target mixture, perplexity under a judge LM
// and dist-n diversity.

#include "nano/corpus.hpp"
#include "nano/lm.hpp"

#include "json.hpp"

#include <optional>

namespace nano {

// Either a single target attribute or a target mixture over all attributes.
struct EvalTargets {
  std::optional<std::size_t> attribute;
  std::vector<double> mixture;

  static EvalTargets single(std::size_t a) { return {a, {}}; }
  static EvalTargets distribution(std::vector<double> m) { return {std::nullopt, std::move(m)}; }
  // Target proportion per attribute (one-hot for a single attribute).
  std::vector<double> proportions(std::size_t attributes) const;
};

struct EvalReport {
  std::size_t samples = 0;
  std::vector<std::string> attributes;
  std::vector<double> proportions;  // labeled share per attribute
  double unlabeled = 0.0;           // remainder with no majority attribute
  std::vector<double> targets;
  // Share of the target attribute; for a mixture target, 1 - tv.
  double accuracy = 0.0;
  double tv = 0.0;
  double perplexity = 0.0;  // 0 when no judge was given
  double dist1 = 0.0, dist2 = 0.0, dist3 = 0.0;
  int fallbacks = 0;

  bool operator==(const EvalReport&) const = default;
};

// 0.5 * sum |p - q|, with the unlabeled remainder counted as its own cell
// (target share 0).
double total_variation(std::span<const double> p, std::span<const double> q, double unlabeled = 0.0);

EvalReport evaluate(std::span<const Sequence> generations, const Labeler& labeler, const EvalTargets& targets,
                    const LMParams* judge = nullptr, int fallbacks = 0);

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

// Aligned desired-vs-achieved table, one row per attribute.
std::string render_table(const EvalReport& r);

}  // namespace nano
