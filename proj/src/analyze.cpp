#include "clipfit/analyze.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clipfit/errors.hpp"
#include "clipfit/ops.hpp"

namespace clipfit {

namespace {

// Stable descending order by value; ties keep the earlier (canonical) entry
// first so rankings are deterministic.
template <typename T, typename Get>
void assign_ranks(std::vector<T>& rows, Get value, std::size_t T::* rank) {
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return value(rows[a]) > value(rows[b]);
  });
  for (std::size_t i = 0; i < order.size(); ++i) {
    rows[order[i]].*rank = i + 1;
  }
}

}  // namespace

std::vector<ChangeRow> change_report(const Snapshot& pre, const Snapshot& post,
                                     GroupBy by, bool trainable_only,
                                     const FreezeMask* mask) {
  if (trainable_only && mask == nullptr) {
    throw ConfigError("change_report: trainable_only needs a mask");
  }
  std::vector<ChangeRow> rows;
  for (const GroupChange& gc : diff(pre, post, by)) {
    if (trainable_only) {
      // keep groups with at least one trainable member
      bool keep = false;
      for (const ParamInfo& p : mask->params()) {
        const std::string g =
            by == GroupBy::Parameter ? p.name : layer_group_of(p.name);
        if (g == gc.group && mask->trainable(p.name)) {
          keep = true;
          break;
        }
      }
      if (!keep) continue;
    }
    rows.push_back(ChangeRow{gc.group, gc.squared_change, 0});
  }
  assign_ranks(rows, [](const ChangeRow& r) { return r.squared_change; },
               &ChangeRow::rank);
  return rows;
}

std::vector<GroupChange> final_changes(const TrainReport& report) {
  std::vector<GroupChange> out;
  for (std::size_t i = 0; i < report.tracked_groups.size(); ++i) {
    if (report.change_curves[i].empty()) {
      throw DimensionError("final_changes: empty change curve for " +
                           report.tracked_groups[i]);
    }
    out.push_back(GroupChange{report.tracked_groups[i],
                              report.change_curves[i].back()});
  }
  return out;
}

std::vector<GradientRow> gradient_report(const TrainReport& report) {
  std::vector<GradientRow> rows;
  for (std::size_t i = 0; i < report.tracked_groups.size(); ++i) {
    rows.push_back(
        GradientRow{report.tracked_groups[i], report.gradient_sums[i], 0});
  }
  assign_ranks(rows, [](const GradientRow& r) { return r.squared_sum; },
               &GradientRow::rank);
  return rows;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;  // average rank
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw DimensionError("spearman: size mismatch " + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()));
  }
  if (a.size() < 2) {
    throw DegenerateInputError("spearman: need at least two observations");
  }
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) {
    throw DegenerateInputError("spearman: constant ranking");
  }
  return sab / std::sqrt(saa * sbb);
}

AblationSelector AblationSelector::parse(const std::string& text) {
  AblationSelector s;
  if (text == "all") {
    s.kind = Kind::All;
  } else if (text == "none") {
    s.kind = Kind::None;
  } else if (text == "first") {
    s.kind = Kind::First;
  } else if (text == "last") {
    s.kind = Kind::Last;
  } else if (text.rfind("top", 0) == 0 || text.rfind("bottom", 0) == 0) {
    const bool top = text.rfind("top", 0) == 0;
    const std::string num = text.substr(top ? 3 : 6);
    try {
      s.k = std::stoul(num);
    } catch (...) {
      throw ConfigError("bad ablation selector \"" + text + "\"");
    }
    if (s.k == 0) throw ConfigError("ablation selector needs k >= 1");
    s.kind = top ? Kind::TopK : Kind::BottomK;
  } else {
    throw ConfigError("unknown ablation selector \"" + text + "\"");
  }
  return s;
}

std::string AblationSelector::name() const {
  switch (kind) {
    case Kind::All: return "all";
    case Kind::None: return "none";
    case Kind::First: return "first";
    case Kind::Last: return "last";
    case Kind::TopK: return "top" + std::to_string(k);
    case Kind::BottomK: return "bottom" + std::to_string(k);
  }
  return "?";
}

AblationOutcome freeze_ablation(const DualEncoder& pretrained,
                                const Dataset& ds,
                                const std::vector<Example>& shots,
                                const Strategy& base,
                                const std::vector<AblationSelector>& selectors,
                                const TrainConfig& cfg) {
  AblationOutcome out;

  // Phase 1: unrestricted run establishes the change ranking.
  DualEncoder probe = pretrained.clone();
  out.unrestricted = finetune(probe, ds, shots, base, cfg);
  out.unrestricted_eval = evaluate(probe, ds);

  // Layer groups of the base strategy's trainable set, in depth order.
  std::vector<std::string> groups;
  for (const std::string& name : out.unrestricted.tracked_groups) {
    const std::string g = layer_group_of(name);
    if (std::find(groups.begin(), groups.end(), g) == groups.end()) {
      groups.push_back(g);
    }
  }
  if (groups.empty()) {
    throw EmptyMaskError("freeze_ablation: base strategy trains nothing");
  }

  // Ranking by squared change, descending, from the phase-1 run.
  std::vector<std::string> ranked = groups;
  {
    std::vector<GroupChange> layer_diff =
        diff(out.unrestricted.pre, out.unrestricted.post, GroupBy::Layer);
    auto change_of = [&](const std::string& g) {
      for (const GroupChange& gc : layer_diff) {
        if (gc.group == g) return gc.squared_change;
      }
      return 0.0;
    };
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](const std::string& a, const std::string& b) {
                       return change_of(a) > change_of(b);
                     });
  }

  for (const AblationSelector& sel : selectors) {
    AblationRow row;
    row.selector = sel.name();

    if (sel.kind == AblationSelector::Kind::None) {
      DualEncoder m = pretrained.clone();
      row.eval = evaluate(m, ds);
      out.rows.push_back(std::move(row));
      continue;
    }

    switch (sel.kind) {
      case AblationSelector::Kind::All:
        row.kept_groups = groups;
        break;
      case AblationSelector::Kind::First:
        row.kept_groups = {groups.front()};
        break;
      case AblationSelector::Kind::Last:
        row.kept_groups = {groups.back()};
        break;
      case AblationSelector::Kind::TopK:
      case AblationSelector::Kind::BottomK: {
        if (sel.k > ranked.size()) {
          throw ConfigError("ablation selector " + sel.name() + " exceeds " +
                            std::to_string(ranked.size()) + " layer groups");
        }
        if (sel.kind == AblationSelector::Kind::TopK) {
          row.kept_groups.assign(ranked.begin(),
                                 ranked.begin() + static_cast<long>(sel.k));
        } else {
          row.kept_groups.assign(ranked.end() - static_cast<long>(sel.k),
                                 ranked.end());
        }
        break;
      }
      case AblationSelector::Kind::None:
        break;
    }

    // Parameters of the base mask whose layer group was kept.
    std::string patterns;
    for (const std::string& name : out.unrestricted.tracked_groups) {
      const std::string g = layer_group_of(name);
      if (std::find(row.kept_groups.begin(), row.kept_groups.end(), g) !=
          row.kept_groups.end()) {
        if (!patterns.empty()) patterns += ',';
        patterns += name;
      }
    }
    if (patterns.empty()) {
      throw EmptyMaskError("ablation selector " + sel.name() +
                           " keeps no parameters");
    }

    DualEncoder m = pretrained.clone();
    TrainReport r = finetune(m, ds, shots, Strategy::custom(patterns), cfg);
    row.trainable_scalars = r.trainable_scalars;
    row.eval = evaluate(m, ds);
    out.rows.push_back(std::move(row));
  }
  return out;
}

FeatureExport export_features(const DualEncoder& model,
                              const std::vector<Example>& split) {
  if (split.empty()) throw EmptyDatasetError("export_features: empty split");
  FeatureExport fx;
  for (const Example& e : split) {
    Tensor f = model.encode_image(e.image);
    Tensor n = ops::l2_normalize_rows(
        ops::reshape(f, {1, model.config().embed_dim}));
    fx.ids.push_back(e.id);
    fx.labels.push_back(e.label);
    fx.features.push_back(n.vec());
  }
  Pca2d p = pca_2d(fx.features);
  fx.pca = std::move(p.coords);
  fx.pca_eigenvalues = p.eigenvalues;
  return fx;
}

Pca2d pca_2d(const std::vector<std::vector<double>>& rows) {
  const std::size_t n = rows.size();
  if (n < 2) {
    throw DegenerateInputError("pca_2d: need at least two points");
  }
  const std::size_t d = rows[0].size();
  if (d < 2) throw DegenerateInputError("pca_2d: need at least two dims");
  for (const auto& r : rows) {
    if (r.size() != d) throw DimensionError("pca_2d: ragged feature rows");
  }

  std::vector<double> mean(d, 0.0);
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
  }
  for (double& m : mean) m /= static_cast<double>(n);

  // Covariance (d x d), symmetric.
  std::vector<double> cov(d * d, 0.0);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < d; ++i) {
      const double ci = r[i] - mean[i];
      for (std::size_t j = i; j < d; ++j) {
        cov[i * d + j] += ci * (r[j] - mean[j]);
      }
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      cov[i * d + j] /= static_cast<double>(n - 1);
      cov[j * d + i] = cov[i * d + j];
    }
  }

  // Cyclic Jacobi: V accumulates rotations, cov converges to diagonal.
  std::vector<double> v(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) v[i * d + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) off += cov[p * d + q] * cov[p * d + q];
    }
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = cov[p * d + q];
        if (apq == 0.0) continue;
        const double app = cov[p * d + p];
        const double aqq = cov[q * d + q];
        const double theta = 0.5 * (aqq - app) / apq;
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t i = 0; i < d; ++i) {
          const double aip = cov[i * d + p];
          const double aiq = cov[i * d + q];
          cov[i * d + p] = c * aip - s * aiq;
          cov[i * d + q] = s * aip + c * aiq;
        }
        for (std::size_t j = 0; j < d; ++j) {
          const double apj = cov[p * d + j];
          const double aqj = cov[q * d + j];
          cov[p * d + j] = c * apj - s * aqj;
          cov[q * d + j] = s * apj + c * aqj;
        }
        for (std::size_t i = 0; i < d; ++i) {
          const double vip = v[i * d + p];
          const double viq = v[i * d + q];
          v[i * d + p] = c * vip - s * viq;
          v[i * d + q] = s * vip + c * viq;
        }
      }
    }
  }

  // Two largest eigenpairs; deterministic sign (largest |entry| positive).
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return cov[a * d + a] > cov[b * d + b];
  });
  Pca2d out;
  std::vector<std::vector<double>> comps(2, std::vector<double>(d));
  for (std::size_t c2 = 0; c2 < 2; ++c2) {
    const std::size_t col = order[c2];
    out.eigenvalues[c2] = cov[col * d + col];
    std::size_t big = 0;
    for (std::size_t i = 0; i < d; ++i) {
      comps[c2][i] = v[i * d + col];
      if (std::abs(comps[c2][i]) > std::abs(comps[c2][big])) big = i;
    }
    if (comps[c2][big] < 0.0) {
      for (double& x : comps[c2]) x = -x;
    }
  }
  out.coords.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c2 = 0; c2 < 2; ++c2) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        acc += (rows[i][j] - mean[j]) * comps[c2][j];
      }
      out.coords[i][c2] = acc;
    }
  }
  return out;
}

double fisher_ratio(const std::vector<std::vector<double>>& rows,
                    const std::vector<int>& labels) {
  if (rows.size() != labels.size()) {
    throw DimensionError("fisher_ratio: rows/labels size mismatch");
  }
  if (rows.empty()) throw EmptyDatasetError("fisher_ratio: no rows");
  const std::size_t d = rows[0].size();

  std::vector<int> classes;
  for (int l : labels) {
    if (std::find(classes.begin(), classes.end(), l) == classes.end()) {
      classes.push_back(l);
    }
  }
  std::sort(classes.begin(), classes.end());

  std::vector<double> global_mean(d, 0.0);
  for (const auto& r : rows) {
    if (r.size() != d) throw DimensionError("fisher_ratio: ragged rows");
    for (std::size_t j = 0; j < d; ++j) global_mean[j] += r[j];
  }
  for (double& m : global_mean) m /= static_cast<double>(rows.size());

  double between = 0.0, within = 0.0;
  for (int c : classes) {
    std::vector<double> cm(d, 0.0);
    std::size_t nc = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (labels[i] != c) continue;
      ++nc;
      for (std::size_t j = 0; j < d; ++j) cm[j] += rows[i][j];
    }
    for (double& m : cm) m /= static_cast<double>(nc);
    for (std::size_t j = 0; j < d; ++j) {
      const double dm = cm[j] - global_mean[j];
      between += static_cast<double>(nc) * dm * dm;
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (labels[i] != c) continue;
      for (std::size_t j = 0; j < d; ++j) {
        const double dv = rows[i][j] - cm[j];
        within += dv * dv;
      }
    }
  }
  if (within == 0.0) {
    throw DegenerateInputError("fisher_ratio: zero within-class scatter");
  }
  return between / within;
}

}  // namespace clipfit
