#include "nano/metrics.hpp"

#include "nano/decoder.hpp"
#include "nano/pretrain.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace nano {

std::vector<double> EvalTargets::proportions(std::size_t attributes) const {
  if (attribute) {
    if (*attribute >= attributes) throw std::out_of_range("eval: target attribute out of range");
    std::vector<double> out(attributes, 0.0);
    out[*attribute] = 1.0;
    return out;
  }
  if (mixture.size() != attributes) throw std::invalid_argument("eval: target mixture size mismatch");
  return mixture;
}

double total_variation(std::span<const double> p, std::span<const double> q, double unlabeled) {
  if (p.size() != q.size()) throw std::invalid_argument("total_variation: size mismatch");
  double s = std::abs(unlabeled);
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

EvalReport evaluate(std::span<const Sequence> generations, const Labeler& labeler, const EvalTargets& targets,
                    const LMParams* judge, int fallbacks) {
  if (generations.empty()) throw std::invalid_argument("evaluate: no generations");
  EvalReport r;
  r.samples = generations.size();
  const std::size_t m = labeler.attributes();
  for (std::size_t a = 0; a < m; ++a) r.attributes.push_back(labeler.name(a));
  r.targets = targets.proportions(m);
  r.proportions.assign(m, 0.0);
  const double n = static_cast<double>(generations.size());
  std::vector<std::size_t> counts(m, 0);
  std::size_t unlabeled = 0;
  for (const auto& g : generations) {
    auto label = labeler.label(g.ids);
    if (label) {
      ++counts[*label];
    } else {
      ++unlabeled;
    }
    r.dist1 += dist_n(g.ids, 1) / n;
    r.dist2 += dist_n(g.ids, 2) / n;
    r.dist3 += dist_n(g.ids, 3) / n;
  }
  for (std::size_t a = 0; a < m; ++a) r.proportions[a] = static_cast<double>(counts[a]) / n;
  r.unlabeled = static_cast<double>(unlabeled) / n;
  r.tv = total_variation(r.proportions, r.targets, r.unlabeled);
  r.accuracy = targets.attribute ? r.proportions[*targets.attribute] : 1.0 - r.tv;
  if (judge) r.perplexity = perplexity(*judge, generations);
  r.fallbacks = fallbacks;
  return r;
}

nlohmann::json to_json(const EvalReport& r) {
  return {{"samples", r.samples},     {"attributes", r.attributes}, {"proportions", r.proportions},
          {"unlabeled", r.unlabeled}, {"targets", r.targets},       {"accuracy", r.accuracy},
          {"tv", r.tv},               {"perplexity", r.perplexity}, {"dist1", r.dist1},
          {"dist2", r.dist2},         {"dist3", r.dist3},           {"fallbacks", r.fallbacks}};
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.samples = j.at("samples").get<std::size_t>();
  r.attributes = j.at("attributes").get<std::vector<std::string>>();
  r.proportions = j.at("proportions").get<std::vector<double>>();
  r.unlabeled = j.at("unlabeled").get<double>();
  r.targets = j.at("targets").get<std::vector<double>>();
  r.accuracy = j.at("accuracy").get<double>();
  r.tv = j.at("tv").get<double>();
  r.perplexity = j.at("perplexity").get<double>();
  r.dist1 = j.at("dist1").get<double>();
  r.dist2 = j.at("dist2").get<double>();
  r.dist3 = j.at("dist3").get<double>();
  r.fallbacks = j.at("fallbacks").get<int>();
  return r;
}

std::string render_table(const EvalReport& r) {
  std::size_t w = 9;
  for (const auto& a : r.attributes) w = std::max(w, a.size());
  std::ostringstream out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-*s  %8s  %8s\n", static_cast<int>(w), "attribute", "desired", "achieved");
  out << buf;
  for (std::size_t a = 0; a < r.attributes.size(); ++a) {
    std::snprintf(buf, sizeof buf, "%-*s  %7.1f%%  %7.1f%%\n", static_cast<int>(w), r.attributes[a].c_str(),
                  100.0 * r.targets[a], 100.0 * r.proportions[a]);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%-*s  %8s  %7.1f%%\n", static_cast<int>(w), "unlabeled", "", 100.0 * r.unlabeled);
  out << buf;
  std::snprintf(buf, sizeof buf, "n=%zu  accuracy=%.3f  tv=%.3f  ppl=%.2f  dist-1/2/3=%.3f/%.3f/%.3f  fallbacks=%d\n",
                r.samples, r.accuracy, r.tv, r.perplexity, r.dist1, r.dist2, r.dist3, r.fallbacks);
  out << buf;
  return out.str();
}

}  // namespace nano
