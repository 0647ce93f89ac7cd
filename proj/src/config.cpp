#include "dualuv/config.hpp"

#include "dualuv/error.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace dualuv {

using ojson = nlohmann::ordered_json;

namespace {

void check(bool ok, const std::string& field, const std::string& range) {
  if (!ok) throw Error("config: " + field + " must be in " + range);
}

bool finite_in(double v, double lo, double hi) { return std::isfinite(v) && v >= lo && v <= hi; }

void check_grid(const GridSize& g, const std::string& name) {
  check(g.height >= 1 && g.height <= 8192 && g.width >= 1 && g.width <= 8192, name, "[1, 8192]");
}

void check_stage(const StageWeights& w, const std::string& name) {
  for (double v : {w.reproj, w.reg, w.mask, w.up, w.smo, w.head, w.hand, w.side}) {
    check(std::isfinite(v) && v >= 0.0, name + " weights", "[0, inf)");
  }
}

// Reads only known keys and rejects the rest so typos surface.
class Reader {
 public:
  Reader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw IoError("config: " + where_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& dst) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      dst = it->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw IoError("config: " + where_ + key + " has the wrong type");
    }
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw IoError("config: unknown key '" + where_ + key + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_grid(Reader& r, const char* key, GridSize& g) {
  if (const auto* c = r.child(key)) {
    if (!c->is_array() || c->size() != 2 || !(*c)[0].is_number_integer() || !(*c)[1].is_number_integer()) {
      throw IoError(std::string("config: ") + key + " must be [height, width]");
    }
    g.height = (*c)[0].get<int>();
    g.width = (*c)[1].get<int>();
  }
}

void read_stage(Reader& parent, const char* key, StageWeights& w) {
  const auto* c = parent.child(key);
  if (!c) return;
  Reader r(*c, std::string("stage_weights.") + key + ".");
  r.get("reproj", w.reproj);
  r.get("reg", w.reg);
  r.get("mask", w.mask);
  r.get("up", w.up);
  r.get("smo", w.smo);
  r.get("head", w.head);
  r.get("hand", w.hand);
  r.get("side", w.side);
  r.finish();
}

ojson stage_json(const StageWeights& w) {
  return {{"reproj", w.reproj}, {"reg", w.reg}, {"mask", w.mask}, {"up", w.up},
          {"smo", w.smo},       {"head", w.head}, {"hand", w.hand}, {"side", w.side}};
}

}  // namespace

ScatterKernel kernel_from_string(const std::string& s) {
  if (s == "nearest") return ScatterKernel::kNearest;
  if (s == "tent") return ScatterKernel::kTent;
  throw Error("unknown kernel '" + s + "' (expected nearest or tent)");
}

std::string to_string(ScatterKernel k) { return k == ScatterKernel::kNearest ? "nearest" : "tent"; }

const StageWeights& PipelineConfig::weights(Stage stage) const {
  switch (stage) {
    case Stage::kBody: return body;
    case Stage::kHead: return head;
    case Stage::kHand: return hand;
  }
  return body;
}

int PipelineConfig::steps(Stage stage) const {
  switch (stage) {
    case Stage::kBody: return body_steps;
    case Stage::kHead: return head_steps;
    case Stage::kHand: return hand_steps;
  }
  return body_steps;
}

void PipelineConfig::validate() const {
  check_grid(core_grid, "core_grid");
  check_grid(shell_grid, "shell_grid");
  if (shell_delta) check(finite_in(*shell_delta, 0.0, 1.0), "shell_delta", "[0, 1]");
  check(std::isfinite(scatter_eps) && scatter_eps > 0.0 && scatter_eps <= 1e-2, "scatter_eps", "(0, 1e-2]");
  check(finite_in(visibility_eps, 0.0, 0.1), "visibility_eps", "[0, 0.1]");
  check(surface_samples >= 1 && surface_samples <= 100000000, "surface_samples", "[1, 1e8]");
  for (double v : {loss.offset, loss.scale, loss.ratio, loss.hand, loss.opacity}) {
    check(std::isfinite(v) && v >= 0.0, "loss_weights", "[0, inf)");
  }
  check_stage(body, "body");
  check_stage(head, "head");
  check_stage(hand, "hand");
  check(std::isfinite(adam.lr) && adam.lr > 0.0 && adam.lr <= 1.0, "adam.lr", "(0, 1]");
  check(finite_in(adam.beta1, 0.0, 1.0) && adam.beta1 < 1.0, "adam.beta1", "[0, 1)");
  check(finite_in(adam.beta2, 0.0, 1.0) && adam.beta2 < 1.0, "adam.beta2", "[0, 1)");
  check(std::isfinite(adam.eps) && adam.eps > 0.0, "adam.eps", "(0, inf)");
  for (int s : {body_steps, head_steps, hand_steps}) check(s >= 0 && s <= 1000000, "steps", "[0, 1e6]");
  check(std::isfinite(gmof_sigma) && gmof_sigma > 0.0, "gmof_sigma", "(0, inf)");
  check(finite_in(conf_thresh, 0.0, 1.0), "conf_thresh", "[0, 1]");
}

PipelineConfig parse_config(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("config: ") + e.what());
  }
  PipelineConfig c;
  Reader r(j, "");
  read_grid(r, "core_grid", c.core_grid);
  read_grid(r, "shell_grid", c.shell_grid);
  if (const auto* d = r.child("shell_delta"); d && !d->is_null()) {
    if (!d->is_number()) throw IoError("config: shell_delta must be a number or null");
    c.shell_delta = d->get<double>();
  }
  r.get("scatter_eps", c.scatter_eps);
  r.get("visibility_eps", c.visibility_eps);
  if (const auto* k = r.child("kernel")) {
    if (!k->is_string()) throw IoError("config: kernel must be a string");
    c.kernel = kernel_from_string(k->get<std::string>());
  }
  r.get("surface_samples", c.surface_samples);
  if (const auto* lw = r.child("loss_weights")) {
    Reader lr(*lw, "loss_weights.");
    lr.get("offset", c.loss.offset);
    lr.get("scale", c.loss.scale);
    lr.get("ratio", c.loss.ratio);
    lr.get("hand", c.loss.hand);
    lr.get("opacity", c.loss.opacity);
    lr.finish();
  }
  if (const auto* sw = r.child("stage_weights")) {
    Reader sr(*sw, "stage_weights.");
    read_stage(sr, "body", c.body);
    read_stage(sr, "head", c.head);
    read_stage(sr, "hand", c.hand);
    sr.finish();
  }
  if (const auto* a = r.child("adam")) {
    Reader ar(*a, "adam.");
    ar.get("lr", c.adam.lr);
    ar.get("beta1", c.adam.beta1);
    ar.get("beta2", c.adam.beta2);
    ar.get("eps", c.adam.eps);
    ar.finish();
  }
  if (const auto* s = r.child("steps")) {
    Reader sr(*s, "steps.");
    sr.get("body", c.body_steps);
    sr.get("head", c.head_steps);
    sr.get("hand", c.hand_steps);
    sr.finish();
  }
  r.get("gmof_sigma", c.gmof_sigma);
  r.get("conf_thresh", c.conf_thresh);
  r.get("seed", c.seed);
  r.finish();
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const PipelineConfig& c) {
  ojson j;
  j["core_grid"] = {c.core_grid.height, c.core_grid.width};
  j["shell_grid"] = {c.shell_grid.height, c.shell_grid.width};
  j["shell_delta"] = c.shell_delta ? ojson(*c.shell_delta) : ojson(nullptr);
  j["scatter_eps"] = c.scatter_eps;
  j["visibility_eps"] = c.visibility_eps;
  j["kernel"] = to_string(c.kernel);
  j["surface_samples"] = c.surface_samples;
  j["loss_weights"] = {{"offset", c.loss.offset}, {"scale", c.loss.scale}, {"ratio", c.loss.ratio},
                       {"hand", c.loss.hand}, {"opacity", c.loss.opacity}};
  j["stage_weights"] = {{"body", stage_json(c.body)}, {"head", stage_json(c.head)}, {"hand", stage_json(c.hand)}};
  j["adam"] = {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}};
  j["steps"] = {{"body", c.body_steps}, {"head", c.head_steps}, {"hand", c.hand_steps}};
  j["gmof_sigma"] = c.gmof_sigma;
  j["conf_thresh"] = c.conf_thresh;
  j["seed"] = c.seed;
  return j.dump(2) + "\n";
}

}  // namespace dualuv
