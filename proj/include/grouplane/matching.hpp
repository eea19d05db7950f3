#pragma once

#include <vector>

#include "grouplane/lane.hpp"
#include "grouplane/network.hpp"
#include "grouplane/tensor.hpp"

namespace grouplane {

struct CostMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  CostMatrix() = default;
  CostMatrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c) {}
  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
};

struct Assignment {
  std::vector<int> row_to_col;  // one column per row
  double total = 0.0;           // sum of chosen entries in row order
};

// Minimum-cost injective assignment of rows onto columns (rows <= cols).
// Among cost ties the lexicographically smallest row_to_col vector wins.
Assignment hungarian(const CostMatrix& cost);

struct LossFlags {
  // Reproduces the printed positive-only visibility term instead of the
  // full binary cross-entropy.
  bool visibility_positive_only = false;
};

// Matching cost between one prediction slot and one encoded label: the loss
// terms at N_l = 1, including the positive existence term.
double pair_cost(const SlotView& slot, const LaneTargets& targets,
                 const LossFlags& flags = {});

struct MatchEntry {
  int label = -1;
  Orientation orientation = Orientation::Vertical;
  int slot = -1;
};

struct MatchResult {
  std::vector<MatchEntry> entries;       // one per supervised label
  std::vector<int> dropped_labels;       // not representable by any enabled group
  std::vector<int> unmatched_vertical;   // slots with a negative existence target
  std::vector<int> unmatched_horizontal;
};

// Single-win one-to-one matching: Hungarian independently against the
// vertical and horizontal slots, then each label keeps the orientation with
// the larger crossed-line count (ties go Vertical); the losing slot is
// released as unmatched.
MatchResult som_match(const ForwardResult& outputs, int64_t batch_index,
                      const std::vector<Lane3D>& labels, const BevGridSpec& grid,
                      int categories, const LossFlags& flags = {});

// Baseline association: labels sorted by lateral position at their nearest
// visible line supervise the same-index slot of their winning orientation.
MatchResult index_match(const ForwardResult& outputs, int64_t batch_index,
                        const std::vector<Lane3D>& labels,
                        const BevGridSpec& grid, int categories);

enum class MatcherKind { Som, Index };

struct LossBreakdown {
  Tensor existence;
  Tensor visibility;
  Tensor row_index;
  Tensor category;
  Tensor offsets;
  Tensor total;       // unweighted sum of the five
  int matched_labels = 0;  // N_l over the batch
};

// The five losses over a batch, differentiable end to end. labels holds one
// lane list per batch element.
LossBreakdown total_loss(const ForwardResult& outputs,
                         const std::vector<std::vector<Lane3D>>& labels,
                         const BevGridSpec& grid, int categories,
                         MatcherKind matcher, const LossFlags& flags = {});

}  // namespace grouplane
