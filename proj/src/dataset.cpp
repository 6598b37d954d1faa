#include "ltr/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "ltr/rng.hpp"

namespace ltr {

std::string label_kind_name(LabelKind k) {
  switch (k) {
    case LabelKind::graded: return "graded";
    case LabelKind::binary: return "binary";
    case LabelKind::unlabeled: return "unlabeled";
  }
  return "graded";
}

LabelKind label_kind_from_name(const std::string& s) {
  if (s == "graded") return LabelKind::graded;
  if (s == "binary") return LabelKind::binary;
  if (s == "unlabeled") return LabelKind::unlabeled;
  fail(ErrorCode::ParseError, "unknown label_kind: " + s);
}

size_t Dataset::n_items() const {
  size_t n = 0;
  for (const QueryGroup& g : groups) n += g.items.size();
  return n;
}

const QueryGroup* Dataset::find(const std::string& qid) const {
  for (const QueryGroup& g : groups)
    if (g.qid == qid) return &g;
  return nullptr;
}

void validate_dataset(const Dataset& ds) {
  if (ds.groups.empty())
    fail(ErrorCode::InvalidDataset, "dataset has no query groups");
  std::set<std::string> seen;
  for (const QueryGroup& g : ds.groups) {
    if (g.items.empty())
      fail(ErrorCode::InvalidDataset, "query group " + g.qid + " is empty");
    if (!seen.insert(g.qid).second)
      fail(ErrorCode::InvalidDataset, "duplicate qid " + g.qid);
    for (const Item& it : g.items) {
      if (static_cast<int>(it.features.size()) != ds.feature_dim)
        fail(ErrorCode::InvalidDataset,
             "qid " + g.qid + ": feature dim mismatch");
      if (it.relevance && *it.relevance < 0)
        fail(ErrorCode::InvalidDataset, "qid " + g.qid + ": negative label");
    }
  }
}

namespace {

[[noreturn]] void parse_fail(size_t line_no, const std::string& what) {
  fail(ErrorCode::ParseError,
       "line " + std::to_string(line_no) + ": " + what);
}

double parse_double(const char*& p, size_t line_no, const char* what) {
  char* end = nullptr;
  double v = std::strtod(p, &end);
  if (end == p) parse_fail(line_no, std::string("non-numeric ") + what);
  p = end;
  return v;
}

void skip_ws(const char*& p) {
  while (*p == ' ' || *p == '\t') ++p;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc())
    fail(ErrorCode::IoError, "failed to format feature value");
  return std::string(buf, ptr);
}

}  // namespace

Dataset parse_letor(std::istream& in) {
  Dataset ds;
  std::map<std::string, size_t> group_index;
  std::optional<LabelKind> declared_kind;
  int max_fid = 0;
  bool any_labeled = false;

  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    // Split off the comment.
    std::string comment;
    size_t hash = line.find('#');
    if (hash != std::string::npos) {
      comment = line.substr(hash + 1);
      line.resize(hash);
      // trim comment
      size_t b = comment.find_first_not_of(" \t");
      size_t e = comment.find_last_not_of(" \t");
      comment = b == std::string::npos ? "" : comment.substr(b, e - b + 1);
    }
    const char* p = line.c_str();
    skip_ws(p);
    if (*p == '\0') {
      if (comment.rfind("label_kind:", 0) == 0) {
        std::string name = comment.substr(11);
        size_t b = name.find_first_not_of(" \t");
        declared_kind = label_kind_from_name(
            b == std::string::npos ? name : name.substr(b));
      }
      continue;  // blank or comment-only line
    }

    double label = parse_double(p, line_no, "label");
    skip_ws(p);
    if (std::strncmp(p, "qid:", 4) != 0)
      parse_fail(line_no, "expected qid:<id> after label");
    p += 4;
    const char* qstart = p;
    while (*p && *p != ' ' && *p != '\t') ++p;
    std::string qid(qstart, p);
    if (qid.empty()) parse_fail(line_no, "empty qid");

    Item item;
    std::vector<std::pair<int, double>> feats;
    for (;;) {
      skip_ws(p);
      if (*p == '\0') break;
      char* end = nullptr;
      long fid = std::strtol(p, &end, 10);
      if (end == p || *end != ':')
        parse_fail(line_no, "malformed feature token");
      if (fid <= 0) parse_fail(line_no, "feature ids are 1-based");
      p = end + 1;
      double v = parse_double(p, line_no, "feature value");
      feats.emplace_back(static_cast<int>(fid), v);
      max_fid = std::max(max_fid, static_cast<int>(fid));
    }

    if (comment == "unlabeled") {
      item.relevance = std::nullopt;
    } else {
      if (label < 0) parse_fail(line_no, "negative label");
      double rounded = std::nearbyint(label);
      if (std::abs(label - rounded) > 1e-9)
        parse_fail(line_no, "label has nonzero fractional part");
      item.relevance = static_cast<int>(rounded);
      any_labeled = true;
    }

    int local_dim = 0;
    for (auto& [fid, v] : feats) local_dim = std::max(local_dim, fid);
    item.features.assign(local_dim, 0.0);
    for (auto& [fid, v] : feats) item.features[fid - 1] = v;

    auto it = group_index.find(qid);
    if (it == group_index.end()) {
      group_index.emplace(qid, ds.groups.size());
      ds.groups.push_back(QueryGroup{qid, {std::move(item)}});
    } else {
      ds.groups[it->second].items.push_back(std::move(item));
    }
  }

  if (ds.groups.empty()) fail(ErrorCode::EmptyInput, "empty input");
  ds.feature_dim = max_fid;
  for (QueryGroup& g : ds.groups)
    for (Item& item : g.items) item.features.resize(max_fid, 0.0);
  if (declared_kind) {
    ds.label_kind = *declared_kind;
  } else {
    ds.label_kind = any_labeled ? LabelKind::graded : LabelKind::unlabeled;
  }
  validate_dataset(ds);
  return ds;
}

Dataset load_letor(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  return parse_letor(in);
}

void write_letor(const Dataset& ds, std::ostream& out) {
  validate_dataset(ds);
  if (ds.label_kind != LabelKind::graded)
    out << "# label_kind: " << label_kind_name(ds.label_kind) << "\n";
  for (const QueryGroup& g : ds.groups) {
    for (const Item& item : g.items) {
      out << (item.relevance ? *item.relevance : 0) << " qid:" << g.qid;
      for (size_t j = 0; j < item.features.size(); ++j)
        out << ' ' << (j + 1) << ':' << format_double(item.features[j]);
      if (!item.relevance) out << " # unlabeled";
      out << '\n';
    }
  }
  if (!out) fail(ErrorCode::IoError, "write failed");
}

void save_letor(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot open " + path + " for writing");
  write_letor(ds, out);
}

LabelMask subsample_labels(const Dataset& ds, double fraction, uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0)
    fail(ErrorCode::InvalidConfig, "fraction must be in (0, 1]");
  const size_t n = ds.groups.size();
  if (n == 0) fail(ErrorCode::InvalidDataset, "dataset has no query groups");
  // Round half up, clamped to [1, n].
  size_t k = static_cast<size_t>(std::floor(fraction * n + 0.5));
  k = std::min(std::max<size_t>(k, 1), n);
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  // Partial Fisher-Yates: the first k slots are the sample.
  for (size_t i = 0; i < k; ++i) {
    size_t j = i + rng.below(n - i);
    std::swap(idx[i], idx[j]);
  }
  LabelMask mask;
  mask.fraction = fraction;
  mask.seed = seed;
  for (size_t i = 0; i < k; ++i)
    mask.labeled_qids.insert(ds.groups[idx[i]].qid);
  return mask;
}

Dataset generate_binary_labels(const Dataset& ds,
                               const BinaryLabelConfig& cfg) {
  if (cfg.t <= 0.0) fail(ErrorCode::InvalidConfig, "t must be > 0");
  if (ds.label_kind == LabelKind::unlabeled)
    fail(ErrorCode::InvalidDataset,
         "generate_binary_labels requires a labeled dataset");
  Dataset out = ds;
  out.label_kind = LabelKind::binary;
  Rng rng(cfg.seed);
  for (QueryGroup& g : out.groups) {
    for (Item& item : g.items) {
      if (!item.relevance)
        fail(ErrorCode::InvalidDataset,
             "qid " + g.qid + ": item without relevance label");
      double r = static_cast<double>(*item.relevance);
      double g1 = rng.gumbel();
      double g0 = rng.gumbel();
      item.relevance =
          (cfg.t * r + g1 > cfg.t * cfg.tau_target + g0) ? 1 : 0;
    }
  }
  return out;
}

Dataset labeled_subset(const Dataset& ds, const LabelMask& mask) {
  std::set<std::string> known;
  for (const QueryGroup& g : ds.groups) known.insert(g.qid);
  for (const std::string& q : mask.labeled_qids)
    if (!known.count(q))
      fail(ErrorCode::UnknownQid, "mask references unknown qid " + q);
  Dataset out;
  out.feature_dim = ds.feature_dim;
  out.label_kind = ds.label_kind;
  for (const QueryGroup& g : ds.groups)
    if (mask.labeled_qids.count(g.qid)) out.groups.push_back(g);
  return out;
}

LabelMask positives_mask(const Dataset& binary_ds) {
  if (binary_ds.label_kind != LabelKind::binary)
    fail(ErrorCode::InvalidDataset, "positives_mask expects a binary dataset");
  LabelMask mask;
  mask.fraction = 1.0;
  for (const QueryGroup& g : binary_ds.groups) {
    for (const Item& item : g.items)
      if (item.relevance && *item.relevance == 1) {
        mask.labeled_qids.insert(g.qid);
        break;
      }
  }
  return mask;
}

nlohmann::json DatasetStats::to_json() const {
  return nlohmann::json{
      {"n_groups", n_groups},
      {"n_items", n_items},
      {"feature_dim", feature_dim},
      {"label_kind", label_kind_name(label_kind)},
      {"pct_labeled_qgs", pct_labeled_qgs},
      {"mean_items_per_qg", mean_items_per_qg},
      {"mean_pct_positives_per_labeled_qg",
       mean_pct_positives_per_labeled_qg},
  };
}

DatasetStats dataset_stats(const Dataset& ds, const LabelMask* mask) {
  DatasetStats s;
  s.n_groups = ds.groups.size();
  s.n_items = ds.n_items();
  s.feature_dim = ds.feature_dim;
  s.label_kind = ds.label_kind;
  s.mean_items_per_qg =
      s.n_groups ? static_cast<double>(s.n_items) / s.n_groups : 0.0;

  std::set<std::string> labeled;
  if (mask) {
    labeled = mask->labeled_qids;
  } else if (ds.label_kind == LabelKind::binary) {
    labeled = positives_mask(ds).labeled_qids;
  } else if (ds.label_kind == LabelKind::graded) {
    for (const QueryGroup& g : ds.groups) labeled.insert(g.qid);
  }
  s.pct_labeled_qgs =
      s.n_groups ? 100.0 * labeled.size() / s.n_groups : 0.0;

  double pos_pct_sum = 0.0;
  size_t n_labeled = 0;
  for (const QueryGroup& g : ds.groups) {
    if (!labeled.count(g.qid)) continue;
    size_t pos = 0;
    for (const Item& item : g.items)
      if (item.relevance && *item.relevance >= 1) ++pos;
    pos_pct_sum += 100.0 * pos / g.items.size();
    ++n_labeled;
  }
  s.mean_pct_positives_per_labeled_qg =
      n_labeled ? pos_pct_sum / n_labeled : 0.0;
  return s;
}

Tensor features_matrix(const Dataset& ds) {
  Tensor m(static_cast<int>(ds.n_items()), ds.feature_dim);
  int r = 0;
  for (const QueryGroup& g : ds.groups)
    for (const Item& item : g.items) {
      std::copy(item.features.begin(), item.features.end(), m.row_ptr(r));
      ++r;
    }
  return m;
}

std::vector<std::vector<int>> make_batches(const Dataset& ds, int batch_items) {
  std::vector<std::vector<int>> batches;
  std::vector<int> cur;
  int cur_items = 0;
  for (size_t q = 0; q < ds.groups.size(); ++q) {
    int len = static_cast<int>(ds.groups[q].items.size());
    if (cur_items > 0 && cur_items + len > batch_items) {
      batches.push_back(std::move(cur));
      cur.clear();
      cur_items = 0;
    }
    cur.push_back(static_cast<int>(q));
    cur_items += len;
  }
  if (!cur.empty()) batches.push_back(std::move(cur));
  return batches;
}

std::vector<QgSpan> group_spans(const Dataset& ds) {
  std::vector<QgSpan> spans;
  spans.reserve(ds.groups.size());
  int start = 0;
  for (const QueryGroup& g : ds.groups) {
    spans.push_back({start, static_cast<int>(g.items.size())});
    start += static_cast<int>(g.items.size());
  }
  return spans;
}

std::vector<int> stacked_labels(const Dataset& ds) {
  std::vector<int> labels;
  labels.reserve(ds.n_items());
  for (const QueryGroup& g : ds.groups)
    for (const Item& item : g.items) {
      if (!item.relevance)
        fail(ErrorCode::InvalidDataset,
             "qid " + g.qid + ": item without relevance label");
      labels.push_back(*item.relevance);
    }
  return labels;
}

}  // namespace ltr
