#include "voxharm/evaluation.hpp"

#include <algorithm>
#include <limits>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "voxharm/error.hpp"
#include "voxharm/parallel.hpp"

namespace voxharm {
namespace {

void check_regions(const std::vector<RegionSpec>& regions) {
  std::set<std::string> names;
  for (const auto& r : regions) {
    if (r.labels.empty())
      throw Error(ErrorKind::invalid_argument, fmt::format("region '{}' has no labels", r.name));
    if (!names.insert(r.name).second)
      throw Error(ErrorKind::invalid_argument, fmt::format("duplicate region name '{}'", r.name));
  }
}

}  // namespace

std::optional<double> dice_from_counts(std::size_t pred, std::size_t gt, std::size_t overlap) {
  if (overlap > std::min(pred, gt))
    throw Error(ErrorKind::invalid_argument, "dice: overlap exceeds mask size");
  if (pred + gt == 0) return std::nullopt;
  return 2.0 * static_cast<double>(overlap) / static_cast<double>(pred + gt);
}

std::optional<double> dice(const BinaryMask& pred, const BinaryMask& gt) {
  if (!(pred.geometry == gt.geometry) || pred.data.size() != gt.data.size())
    throw Error(ErrorKind::geometry_mismatch, "dice: masks have different geometry");
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool a = pred.data[i] != 0, b = gt.data[i] != 0;
    p += a;
    g += b;
    both += a && b;
  }
  return dice_from_counts(p, g, both);
}

Vocabulary kits_vocabulary() { return {{1, "kidney"}, {2, "tumor"}, {3, "cyst"}}; }

std::vector<RegionSpec> default_regions() {
  return {
      {"kidney&masses", {1, 2, 3}, true},
      {"masses", {2, 3}, true},
      {"kidney", {1}, true},
      {"tumor", {2}, true},
      {"cyst", {3}, true},
  };
}

RegionScores evaluate_case(const LabelMap& pred, const LabelMap& gt,
                           const std::vector<RegionSpec>& regions, EmptyPolicy policy) {
  if (!(pred.geometry() == gt.geometry()))
    throw Error(ErrorKind::geometry_mismatch, "evaluate_case: prediction and ground truth differ in geometry");
  check_regions(regions);
  for (const auto& r : regions) {
    if (r.allow_absent) continue;
    for (Label l : r.labels)
      if (!pred.knows(l) && !gt.knows(l))
        throw Error(ErrorKind::invalid_argument,
                    fmt::format("region '{}' uses label {} unknown to both vocabularies", r.name, l));
  }

  // Confusion counts over (pred, gt) label pairs, compacted to present labels.
  const auto p_data = pred.data();
  const auto g_data = gt.data();
  std::vector<int> slot(std::numeric_limits<Label>::max() + 1, -1);
  std::vector<Label> present;
  auto slot_of = [&](Label l) {
    if (slot[l] < 0) {
      slot[l] = static_cast<int>(present.size());
      present.push_back(l);
    }
    return static_cast<std::size_t>(slot[l]);
  };
  for (const auto& [l, n] : pred.histogram()) slot_of(l);
  for (const auto& [l, n] : gt.histogram()) slot_of(l);
  const std::size_t k = present.size();
  std::vector<std::size_t> confusion(k * k, 0);
  for (std::size_t i = 0; i < p_data.size(); ++i)
    ++confusion[static_cast<std::size_t>(slot[p_data[i]]) * k + static_cast<std::size_t>(slot[g_data[i]])];

  RegionScores scores;
  for (const auto& r : regions) {
    std::vector<bool> in(k, false);
    for (std::size_t s = 0; s < k; ++s) in[s] = r.labels.contains(present[s]);
    std::size_t p = 0, g = 0, both = 0;
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) {
        const std::size_t c = confusion[a * k + b];
        if (in[a]) p += c;
        if (in[b]) g += c;
        if (in[a] && in[b]) both += c;
      }
    auto score = dice_from_counts(p, g, both);
    if (!score && policy == EmptyPolicy::score_one) score = 1.0;
    scores[r.name] = score;
  }
  return scores;
}

EvalReport evaluate_dataset(const std::vector<EvalCase>& cases,
                            const std::vector<RegionSpec>& regions, EmptyPolicy policy) {
  check_regions(regions);
  std::set<std::string> ids;
  for (const auto& c : cases)
    if (!ids.insert(c.id).second)
      throw Error(ErrorKind::invalid_argument, fmt::format("duplicate case ID '{}'", c.id));

  std::vector<RegionScores> scores(cases.size());
  parallel_for(cases.size(), [&](std::size_t i) {
    try {
      scores[i] = evaluate_case(cases[i].pred, cases[i].gt, regions, policy);
    } catch (const Error& e) {
      throw Error(e.kind(), fmt::format("case '{}': {}", cases[i].id, e.what()));
    }
  });

  EvalReport report;
  for (const auto& r : regions) report.region_order.push_back(r.name);
  for (std::size_t i = 0; i < cases.size(); ++i) report.cases[cases[i].id] = std::move(scores[i]);

  for (const auto& r : regions) {
    double sum = 0.0;
    std::size_t defined = 0, undefined = 0;
    for (const auto& [id, s] : report.cases) {  // sorted by case ID
      const auto& v = s.at(r.name);
      if (v) {
        sum += *v;
        ++defined;
      } else {
        ++undefined;
      }
    }
    report.aggregate[r.name] =
        defined ? std::optional<double>(sum / static_cast<double>(defined)) : std::nullopt;
    report.undefined_counts[r.name] = undefined;
  }
  return report;
}

std::string EvalReport::to_json() const {
  using nlohmann::ordered_json;
  auto score = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  ordered_json j;
  j["cases"] = ordered_json::object();
  for (const auto& [id, s] : cases) {
    ordered_json row = ordered_json::object();
    for (const auto& name : region_order) row[name] = score(s.at(name));
    j["cases"][id] = row;
  }
  j["aggregate"] = ordered_json::object();
  for (const auto& name : region_order) j["aggregate"][name] = score(aggregate.at(name));
  j["undefined_counts"] = ordered_json::object();
  for (const auto& name : region_order) j["undefined_counts"][name] = undefined_counts.at(name);
  return j.dump(2) + "\n";
}

std::string EvalReport::to_csv() const {
  std::string out = "case,region,dice\n";
  for (const auto& [id, s] : cases)
    for (const auto& name : region_order) {
      const auto& v = s.at(name);
      out += v ? fmt::format("{},{},{}\n", id, name, *v) : fmt::format("{},{},\n", id, name);
    }
  return out;
}

std::vector<RegionSpec> regions_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    std::vector<RegionSpec> out;
    for (const auto& item : j) {
      RegionSpec r;
      r.name = item.at("name").get<std::string>();
      for (const auto& l : item.at("labels")) {
        const long v = l.get<long>();
        if (v < 0 || v > std::numeric_limits<Label>::max())
          throw Error(ErrorKind::format, fmt::format("region label {} out of range", v));
        r.labels.insert(static_cast<Label>(v));
      }
      r.allow_absent = item.value("allow_absent", true);
      out.push_back(std::move(r));
    }
    check_regions(out);
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, fmt::format("bad regions document: {}", e.what()));
  }
}

}  // namespace voxharm
