#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "voxharm/volume.hpp"

namespace voxharm {

/// Dice = 2|P and G| / (|P| + |G|). nullopt when both masks are empty.
std::optional<double> dice(const BinaryMask& pred, const BinaryMask& gt);

/// Scores from raw overlap counts; nullopt when both sets are empty.
std::optional<double> dice_from_counts(std::size_t pred, std::size_t gt, std::size_t overlap);

/// KiTS-style labels: 1 kidney, 2 tumor, 3 cyst.
Vocabulary kits_vocabulary();

/// kidney&masses, masses, kidney, tumor, cyst (the five reported columns).
std::vector<RegionSpec> default_regions();

/// How a region that is empty in both prediction and ground truth is scored.
enum class EmptyPolicy {
  undefined,  // excluded from means, counted separately
  score_one,  // true negative scores 1.0
};

using RegionScores = std::map<std::string, std::optional<double>>;

/// Region Dice for one case from a single pass of label-pair confusion counts.
RegionScores evaluate_case(const LabelMap& pred, const LabelMap& gt,
                           const std::vector<RegionSpec>& regions,
                           EmptyPolicy policy = EmptyPolicy::undefined);

struct EvalReport {
  std::vector<std::string> region_order;
  std::map<std::string, RegionScores> cases;         // case ID -> region -> score
  std::map<std::string, std::optional<double>> aggregate;  // nullopt if no defined case
  std::map<std::string, std::size_t> undefined_counts;

  /// {cases: {id: {region: score|null}}, aggregate: {region: score|null},
  ///  undefined_counts: {region: n}}
  std::string to_json() const;
  /// "case,region,dice" rows; undefined scores are empty fields.
  std::string to_csv() const;
};

struct EvalCase {
  std::string id;
  LabelMap pred;
  LabelMap gt;
};

/// Evaluates cases in parallel; aggregates are arithmetic means of the defined
/// scores, summed in sorted case-ID order. Duplicate IDs are rejected.
EvalReport evaluate_dataset(const std::vector<EvalCase>& cases,
                            const std::vector<RegionSpec>& regions,
                            EmptyPolicy policy = EmptyPolicy::undefined);

/// Loads [{"name": ..., "labels": [...], "allow_absent": bool}, ...].
std::vector<RegionSpec> regions_from_json(std::string_view text);

}  // namespace voxharm
