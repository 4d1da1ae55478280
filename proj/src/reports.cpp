#include "clipfit/reports.hpp"

#include <fstream>
#include <sstream>

#include "clipfit/errors.hpp"
#include "clipfit/hash.hpp"

namespace clipfit {

namespace {

// Shortest round-trip decimal for a double, same renderer as the JSON dump,
// so CSV and JSON agree byte for byte.
std::string num(double v) { return json(v).dump(); }

}  // namespace

json eval_result_to_json(const EvalResult& r) {
  json per_class = json::array();
  for (const ClassAccuracy& c : r.per_class) {
    per_class.push_back(json{{"class", c.class_id},
                             {"split", c.split},
                             {"count", c.count},
                             {"correct", c.correct},
                             {"accuracy", c.accuracy}});
  }
  return json{{"base_acc", r.base_acc},
              {"new_acc", r.new_acc},
              {"hm", r.hm},
              {"per_class", std::move(per_class)}};
}

json pretrain_report_to_json(const PretrainReport& r,
                             const EvalResult* zero_shot) {
  json j{{"steps", r.steps},
         {"seed", r.seed},
         {"final_tau", r.final_tau},
         {"loss", r.loss}};
  if (zero_shot != nullptr) j["zero_shot"] = eval_result_to_json(*zero_shot);
  return j;
}

json train_report_to_json(const TrainReport& r) {
  json curves = json::object();
  for (std::size_t i = 0; i < r.tracked_groups.size(); ++i) {
    curves[r.tracked_groups[i]] = r.change_curves[i];
  }
  json grads = json::object();
  for (std::size_t i = 0; i < r.tracked_groups.size(); ++i) {
    grads[r.tracked_groups[i]] = r.gradient_sums[i];
  }
  return json{{"strategy", r.strategy},
              {"seed", r.seed},
              {"steps", r.steps},
              {"trainable_scalars", r.trainable_scalars},
              {"loss", r.loss},
              {"ce", r.ce},
              {"reg", r.reg},
              {"lr", r.lr},
              {"logged_steps", r.logged_steps},
              {"change_curves", std::move(curves)},
              {"gradient_sums", std::move(grads)},
              {"initial_reg", r.initial_reg},
              {"final_ref_cosine", r.final_ref_cosine}};
}

json change_report_to_json(const std::vector<ChangeRow>& rows) {
  json arr = json::array();
  for (const ChangeRow& r : rows) {
    arr.push_back(json{{"group", r.group},
                       {"squared_change", r.squared_change},
                       {"rank", r.rank}});
  }
  return json{{"changes", std::move(arr)}};
}

json gradient_report_to_json(const std::vector<GradientRow>& rows) {
  json arr = json::array();
  for (const GradientRow& r : rows) {
    arr.push_back(json{{"group", r.group},
                       {"squared_sum", r.squared_sum},
                       {"rank", r.rank}});
  }
  return json{{"gradients", std::move(arr)}};
}

json ablation_to_json(const AblationOutcome& o) {
  json rows = json::array();
  for (const AblationRow& r : o.rows) {
    rows.push_back(json{{"selector", r.selector},
                        {"kept_groups", r.kept_groups},
                        {"trainable_scalars", r.trainable_scalars},
                        {"eval", eval_result_to_json(r.eval)}});
  }
  return json{{"unrestricted", train_report_to_json(o.unrestricted)},
              {"unrestricted_eval", eval_result_to_json(o.unrestricted_eval)},
              {"rows", std::move(rows)}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

void write_json(const std::filesystem::path& path, const json& j) {
  write_text(path, j.dump(1) + "\n");
}

std::string loss_csv(const TrainReport& r) {
  std::ostringstream os;
  os << "# schema: clipfit.loss.v1\n";
  os << "step,loss,ce,reg,lr\n";
  for (std::size_t i = 0; i < r.loss.size(); ++i) {
    os << i << ',' << num(r.loss[i]) << ',' << num(r.ce[i]) << ','
       << num(r.reg[i]) << ',' << num(r.lr[i]) << '\n';
  }
  return os.str();
}

std::string changes_csv(const TrainReport& r) {
  std::ostringstream os;
  os << "# schema: clipfit.changes.v1\n";
  os << "step";
  for (const std::string& g : r.tracked_groups) os << ',' << g;
  os << '\n';
  for (std::size_t t = 0; t < r.logged_steps.size(); ++t) {
    os << r.logged_steps[t];
    for (std::size_t i = 0; i < r.tracked_groups.size(); ++i) {
      os << ',' << num(r.change_curves[i][t]);
    }
    os << '\n';
  }
  return os.str();
}

std::string per_class_csv(const EvalResult& r) {
  std::ostringstream os;
  os << "# schema: clipfit.per_class.v1\n";
  os << "class,split,count,correct,accuracy\n";
  for (const ClassAccuracy& c : r.per_class) {
    os << c.class_id << ',' << c.split << ',' << c.count << ',' << c.correct
       << ',' << num(c.accuracy) << '\n';
  }
  return os.str();
}

std::string features_csv(const FeatureExport& fx) {
  std::ostringstream os;
  os << "# schema: clipfit.features.v1\n";
  os << "id,label,pc1,pc2";
  const std::size_t d = fx.features.empty() ? 0 : fx.features[0].size();
  for (std::size_t j = 0; j < d; ++j) os << ",f" << j;
  os << '\n';
  for (std::size_t i = 0; i < fx.ids.size(); ++i) {
    os << fx.ids[i] << ',' << fx.labels[i] << ',' << num(fx.pca[i][0]) << ','
       << num(fx.pca[i][1]);
    for (std::size_t j = 0; j < d; ++j) os << ',' << num(fx.features[i][j]);
    os << '\n';
  }
  return os.str();
}

void RunManifest::add_input(const std::filesystem::path& p) {
  inputs[p.string()] = hex64(fnv1a64_file(p));
}

json RunManifest::to_json() const {
  json in = json::object();
  for (const auto& [path, hash] : inputs) in[path] = hash;
  return json{{"tool", kToolName},
              {"version", kToolVersion},
              {"command", command},
              {"config", config},
              {"inputs", std::move(in)},
              {"outputs", outputs}};
}

void write_manifest(const std::filesystem::path& dir, const RunManifest& m) {
  write_json(dir / "manifest.json", m.to_json());
}

}  // namespace clipfit
