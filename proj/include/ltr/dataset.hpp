#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ltr/tensor.hpp"

namespace ltr {

enum class LabelKind { graded, binary, unlabeled };

std::string label_kind_name(LabelKind k);
LabelKind label_kind_from_name(const std::string& s);

struct Item {
  std::vector<double> features;
  std::optional<int> relevance;
  bool operator==(const Item&) const = default;
};

struct QueryGroup {
  std::string qid;
  std::vector<Item> items;
  bool operator==(const QueryGroup&) const = default;
};

struct Dataset {
  std::vector<QueryGroup> groups;
  int feature_dim = 0;
  LabelKind label_kind = LabelKind::graded;
  bool operator==(const Dataset&) const = default;

  size_t n_items() const;
  const QueryGroup* find(const std::string& qid) const;
};

// Half-open row range of one query group inside a stacked feature matrix.
struct QgSpan {
  int start = 0;
  int len = 0;
};

struct LabelMask {
  std::set<std::string> labeled_qids;
  double fraction = 1.0;
  uint64_t seed = 0;
};

struct BinaryLabelConfig {
  double t = 4.0;
  double tau_target = 4.5;
  uint64_t seed = 0;
};

// --- LETOR I/O ---------------------------------------------------------------
// Lines: `<label> qid:<qid> <fid>:<val> ...` with 1-based, possibly sparse
// feature ids; `#` starts a comment. Items carrying a `# unlabeled` comment
// have no relevance label; a leading `# label_kind: <kind>` comment pins the
// dataset kind.

Dataset parse_letor(std::istream& in);
Dataset load_letor(const std::string& path);
void write_letor(const Dataset& ds, std::ostream& out);
void save_letor(const Dataset& ds, const std::string& path);

// --- label-scarcity simulators ------------------------------------------------

// Uniformly samples round(fraction*N) qids (min 1) without replacement.
LabelMask subsample_labels(const Dataset& ds, double fraction, uint64_t seed);

// Draws y = 1{t*r + G1 > t*tau_target + G0} per item, G standard Gumbels;
// the implied marginal is P(y=1) = sigmoid(t*(r - tau_target)).
Dataset generate_binary_labels(const Dataset& ds, const BinaryLabelConfig& cfg);

Dataset labeled_subset(const Dataset& ds, const LabelMask& mask);
LabelMask positives_mask(const Dataset& binary_ds);

struct DatasetStats {
  size_t n_groups = 0;
  size_t n_items = 0;
  int feature_dim = 0;
  LabelKind label_kind = LabelKind::graded;
  double pct_labeled_qgs = 0.0;
  double mean_items_per_qg = 0.0;
  double mean_pct_positives_per_labeled_qg = 0.0;
  nlohmann::json to_json() const;
};

DatasetStats dataset_stats(const Dataset& ds,
                           const LabelMask* mask = nullptr);

// --- helpers shared by trainers/evaluators ------------------------------------

// Stacks every item's features into an n_items x feature_dim matrix.
Tensor features_matrix(const Dataset& ds);
// Batches of QG indices: whole QGs packed greedily until the item budget is
// reached; an oversized QG forms its own batch.
std::vector<std::vector<int>> make_batches(const Dataset& ds, int batch_items);
std::vector<QgSpan> group_spans(const Dataset& ds);
// Relevance labels in stacked order; missing labels forbidden (throws).
std::vector<int> stacked_labels(const Dataset& ds);

void validate_dataset(const Dataset& ds);

}  // namespace ltr
