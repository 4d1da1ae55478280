#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "clipfit/model.hpp"
#include "clipfit/params.hpp"
#include "clipfit/synthdata.hpp"
#include "clipfit/train.hpp"

namespace clipfit {

// --- where did fine-tuning move the model ---

struct ChangeRow {
  std::string group;
  double squared_change = 0.0;
  std::size_t rank = 0;  // 1 = largest change
};

// diff() plus a descending ranking. GroupBy::Layer merges LN gain/bias pairs.
std::vector<ChangeRow> change_report(const Snapshot& pre, const Snapshot& post,
                                     GroupBy by = GroupBy::Parameter,
                                     bool trainable_only = false,
                                     const FreezeMask* mask = nullptr);

// Squared change per tracked group at the final logged step of a run; matches
// diff(report.pre, report.post) on the same groups.
std::vector<GroupChange> final_changes(const TrainReport& report);

// Cumulative squared gradient mass per tracked group, with ranking.
struct GradientRow {
  std::string group;
  double squared_sum = 0.0;
  std::size_t rank = 0;
};
std::vector<GradientRow> gradient_report(const TrainReport& report);

// Spearman rank correlation with average ranks for ties. Inputs must have
// equal size >= 2 and nonzero rank variance (DegenerateInputError).
double spearman(const std::vector<double>& a, const std::vector<double>& b);

// --- freeze-subset ablations ---

// Grammar: all | none | first | last | top<k> | bottom<k>.
// Selections act on the *layer groups* of the base strategy's trainable set
// (an LN layer counts gain+bias together). first/last follow depth order;
// top/bottom follow the squared-change ranking of an unrestricted run with
// the same seed. "none" skips training entirely (zero-shot baseline); any
// other selector resolving to an empty set is an EmptyMaskError.
struct AblationSelector {
  enum class Kind { All, None, First, Last, TopK, BottomK };
  Kind kind = Kind::All;
  std::size_t k = 0;

  static AblationSelector parse(const std::string& text);
  std::string name() const;
};

struct AblationRow {
  std::string selector;
  std::vector<std::string> kept_groups;
  std::size_t trainable_scalars = 0;
  EvalResult eval;
};

struct AblationOutcome {
  TrainReport unrestricted;  // phase-1 run that produced the change ranking
  EvalResult unrestricted_eval;
  std::vector<AblationRow> rows;
};

// Two-phase protocol: run the base strategy once to rank layer groups by
// squared change, then re-finetune from the same pretrained weights with each
// selector's kept subset trainable. Deterministic given cfg.seed.
AblationOutcome freeze_ablation(const DualEncoder& pretrained,
                                const Dataset& ds,
                                const std::vector<Example>& shots,
                                const Strategy& base,
                                const std::vector<AblationSelector>& selectors,
                                const TrainConfig& cfg);

// --- feature-space forensics ---

struct FeatureExport {
  std::vector<std::uint64_t> ids;
  std::vector<int> labels;
  std::vector<std::vector<double>> features;  // L2-normalized embeddings
  std::vector<std::array<double, 2>> pca;     // 2-D PCA projection
  std::array<double, 2> pca_eigenvalues = {0.0, 0.0};
};

FeatureExport export_features(const DualEncoder& model,
                              const std::vector<Example>& split);

struct Pca2d {
  std::vector<std::array<double, 2>> coords;
  std::array<double, 2> eigenvalues = {0.0, 0.0};
};

// Dependency-free PCA via a cyclic Jacobi eigensolver on the covariance
// matrix. Needs at least two rows and two columns. Component signs are fixed
// by making each eigenvector's largest-magnitude entry positive.
Pca2d pca_2d(const std::vector<std::vector<double>>& rows);

// Trace ratio of between-class to within-class scatter; higher = classes
// more separable. DegenerateInputError when the within-class scatter is zero.
double fisher_ratio(const std::vector<std::vector<double>>& rows,
                    const std::vector<int>& labels);

}  // namespace clipfit
