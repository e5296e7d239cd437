#include "gatecross/config_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace gatecross {
namespace {

using nlohmann::json;

int line_of_byte(const std::string& text, std::size_t byte) {
  int line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') ++line;
  }
  return line;
}

// Best-effort line lookup for a dotted path: locate each quoted component
// in order. Returns -1 when the text does not contain the path.
int line_of_path(const std::string& text, const std::vector<std::string>& path) {
  std::size_t pos = 0;
  for (const auto& comp : path) {
    const std::string needle = "\"" + comp + "\"";
    const std::size_t at = text.find(needle, pos);
    if (at == std::string::npos) return -1;
    pos = at;
  }
  return path.empty() ? -1 : line_of_byte(text, pos);
}

struct Ctx {
  const std::string* text = nullptr;
  std::string origin;
};

std::string join_path(const std::vector<std::string>& path) {
  std::string out = "$";
  for (const auto& comp : path) out += "." + comp;
  return out;
}

[[noreturn]] void fail(const Ctx& ctx, const std::vector<std::string>& path,
                       const std::string& msg) {
  std::ostringstream os;
  os << ctx.origin;
  const int line = ctx.text ? line_of_path(*ctx.text, path) : -1;
  if (line > 0) os << ":" << line;
  os << ": " << join_path(path) << ": " << msg;
  throw ConfigError(os.str());
}

// One JSON object with a fixed key vocabulary. Readers type-check and
// range-check; unknown keys are rejected in the constructor so typos
// surface immediately.
class Section {
 public:
  Section(const Ctx& ctx, const json& node, std::vector<std::string> path,
          std::initializer_list<const char*> allowed)
      : ctx_(ctx), node_(node), path_(std::move(path)) {
    if (!node_.is_object()) fail(ctx_, path_, "expected an object");
    for (const auto& item : node_.items()) {
      bool known = false;
      for (const char* key : allowed) {
        if (item.key() == key) {
          known = true;
          break;
        }
      }
      if (!known) {
        auto path = path_;
        path.push_back(item.key());
        fail(ctx_, path, "unknown key");
      }
    }
  }

  bool has(const char* key) const { return node_.contains(key); }

  void read_double(const char* key, double& out) const {
    if (!has(key)) return;
    const json& v = node_.at(key);
    if (!v.is_number()) fail_at(key, "expected a number");
    out = v.get<double>();
    if (!std::isfinite(out)) fail_at(key, "expected a finite number");
  }

  void read_int(const char* key, int& out) const {
    if (!has(key)) return;
    const json& v = node_.at(key);
    if (!v.is_number_integer()) fail_at(key, "expected an integer");
    out = v.get<int>();
  }

  void read_int64(const char* key, long long& out) const {
    if (!has(key)) return;
    const json& v = node_.at(key);
    if (!v.is_number_integer()) fail_at(key, "expected an integer");
    out = v.get<long long>();
  }

  void read_uint64(const char* key, std::uint64_t& out) const {
    if (!has(key)) return;
    const json& v = node_.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
      fail_at(key, "expected a non-negative integer");
    }
    out = v.get<std::uint64_t>();
  }

  void read_bool(const char* key, bool& out) const {
    if (!has(key)) return;
    const json& v = node_.at(key);
    if (!v.is_boolean()) fail_at(key, "expected a boolean");
    out = v.get<bool>();
  }

  void read_array(const char* key, double* out, int n) const {
    if (!has(key)) return;
    const json& v = node_.at(key);
    if (!v.is_array() || static_cast<int>(v.size()) != n) {
      fail_at(key, "expected an array of " + std::to_string(n) + " numbers");
    }
    for (int i = 0; i < n; ++i) {
      if (!v[i].is_number()) fail_at(key, "expected numeric entries");
      out[i] = v[i].get<double>();
      if (!std::isfinite(out[i])) fail_at(key, "expected finite entries");
    }
  }

  [[noreturn]] void fail_at(const char* key, const std::string& msg) const {
    auto path = path_;
    path.push_back(key);
    fail(ctx_, path, msg);
  }

 private:
  const Ctx& ctx_;
  const json& node_;
  std::vector<std::string> path_;
};

void load_dynamics(const Ctx& ctx, const json& node, DynamicsParams& dyn) {
  Section s(ctx, node, {"dynamics"},
            {"mass", "gravity", "f_max", "omega_max"});
  s.read_double("mass", dyn.m);
  s.read_double("gravity", dyn.g);
  // The thrust ceiling tracks 4*m*g unless pinned explicitly.
  if (s.has("f_max")) {
    s.read_double("f_max", dyn.f_max);
  } else {
    dyn.f_max = 4.0 * dyn.m * dyn.g;
  }
  s.read_double("omega_max", dyn.omega_max);
}

void load_ocp(const Ctx& ctx, const json& node, OcpConfig& ocp) {
  Section s(ctx, node, {"ocp"},
            {"N", "dt", "t_ref", "q_v_goal", "q_q_goal", "q_u", "z_min",
             "z_max", "barrier_mu", "tol_stationarity", "max_iters",
             "reg_init", "reg_max"});
  s.read_int("N", ocp.N);
  s.read_double("dt", ocp.dt);
  s.read_double("t_ref", ocp.t_ref);
  s.read_array("q_v_goal", ocp.q_v_goal.data(), 3);
  s.read_array("q_q_goal", ocp.q_q_goal.data(), 4);
  s.read_array("q_u", ocp.q_u.data(), 4);
  s.read_double("z_min", ocp.z_min);
  s.read_double("z_max", ocp.z_max);
  s.read_double("barrier_mu", ocp.barrier_mu);
  s.read_double("tol_stationarity", ocp.tol_stationarity);
  s.read_int("max_iters", ocp.max_iters);
  s.read_double("reg_init", ocp.reg_init);
  s.read_double("reg_max", ocp.reg_max);
}

void load_collision(const Ctx& ctx, const json& node, CollisionOptions& opts) {
  Section s(ctx, node, {"collision"}, {"max_iters", "tol"});
  s.read_int("max_iters", opts.max_iters);
  s.read_double("tol", opts.tol);
}

void load_loss(const Ctx& ctx, const json& node, LossWeights& loss) {
  Section s(ctx, node, {"loss"},
            {"beta_gate", "beta_goal", "beta_control_diff", "h",
             "proximity_threshold"});
  s.read_double("beta_gate", loss.beta_gate);
  s.read_double("beta_goal", loss.beta_goal);
  s.read_double("beta_control_diff", loss.beta_control_diff);
  s.read_int("h", loss.h);
  s.read_double("proximity_threshold", loss.proximity_threshold);
}

void load_policy(const Ctx& ctx, const json& node, TrainConfig& t) {
  Section s(ctx, node, {"policy"},
            {"hidden", "p_off_lo", "p_off_hi", "head_lo", "head_hi",
             "pretrain_samples", "pretrain_mse_tol", "pretrain_max_epochs",
             "pretrain_lr"});
  s.read_int("hidden", t.hidden);
  s.read_double("p_off_lo", t.scaling.p_off_lo);
  s.read_double("p_off_hi", t.scaling.p_off_hi);
  s.read_array("head_lo", t.scaling.lo.data(), 8);
  s.read_array("head_hi", t.scaling.hi.data(), 8);
  s.read_int("pretrain_samples", t.pretrain_samples);
  s.read_double("pretrain_mse_tol", t.pretrain_mse_tol);
  s.read_int("pretrain_max_epochs", t.pretrain_max_epochs);
  s.read_double("pretrain_lr", t.pretrain_lr);
}

void load_env(const Ctx& ctx, const json& node, EnvConfig& env) {
  Section s(ctx, node, {"env"},
            {"gate_center", "tilt_min", "tilt_max", "inner_width",
             "inner_height", "bar_thickness", "bar_depth", "x_init",
             "p_goal", "pos_jitter", "quad_semi_axes", "inflation_z",
             "goal_radius", "traversal_speed"});
  s.read_array("gate_center", env.gate_center.data(), 3);
  s.read_double("tilt_min", env.tilt_min);
  s.read_double("tilt_max", env.tilt_max);
  s.read_double("inner_width", env.inner_width);
  s.read_double("inner_height", env.inner_height);
  s.read_double("bar_thickness", env.bar_thickness);
  s.read_double("bar_depth", env.bar_depth);
  s.read_array("x_init", env.x_init_nominal.data(), 3);
  s.read_array("p_goal", env.p_goal_nominal.data(), 3);
  s.read_double("pos_jitter", env.pos_jitter);
  s.read_array("quad_semi_axes", env.quad_semi_axes.data(), 3);
  s.read_double("inflation_z", env.inflation_z);
  s.read_double("goal_radius", env.goal_radius);
  s.read_double("traversal_speed", env.traversal_speed);
}

void load_trainer(const Ctx& ctx, const json& node, TrainConfig& t) {
  Section s(ctx, node, {"trainer"},
            {"batch_size", "horizon", "epochs", "max_sim_steps", "lr",
             "lr_decay", "lr_decay_every", "adam_beta1", "adam_beta2",
             "adam_eps", "use_adam", "eval_every", "eval_trials", "seed",
             "threads", "max_consecutive_mpc_failures", "divergence_factor",
             "divergence_patience"});
  s.read_int("batch_size", t.batch_size);
  s.read_int("horizon", t.horizon);
  s.read_int("epochs", t.epochs);
  s.read_int64("max_sim_steps", t.max_sim_steps);
  s.read_double("lr", t.lr);
  s.read_double("lr_decay", t.lr_decay);
  s.read_int("lr_decay_every", t.lr_decay_every);
  s.read_double("adam_beta1", t.adam_beta1);
  s.read_double("adam_beta2", t.adam_beta2);
  s.read_double("adam_eps", t.adam_eps);
  s.read_bool("use_adam", t.use_adam);
  s.read_int("eval_every", t.eval_every);
  s.read_int("eval_trials", t.eval_trials);
  s.read_uint64("seed", t.seed);
  s.read_int("threads", t.threads);
  s.read_int("max_consecutive_mpc_failures", t.max_consecutive_mpc_failures);
  s.read_double("divergence_factor", t.divergence_factor);
  s.read_int("divergence_patience", t.divergence_patience);
}

void check(bool ok, const Ctx& ctx, std::initializer_list<const char*> path,
           const std::string& msg) {
  if (ok) return;
  std::vector<std::string> p;
  for (const char* comp : path) p.emplace_back(comp);
  fail(ctx, p, msg);
}

void validate(const ProjectConfig& cfg, const Ctx& ctx) {
  const TrainConfig& t = cfg.train;
  const DynamicsParams& d = t.ocp.dyn;
  check(d.m > 0, ctx, {"dynamics", "mass"}, "must be positive");
  check(d.g > 0, ctx, {"dynamics", "gravity"}, "must be positive");
  check(d.f_max > 0, ctx, {"dynamics", "f_max"}, "must be positive");
  check(d.omega_max > 0, ctx, {"dynamics", "omega_max"}, "must be positive");

  check(t.ocp.N >= 1, ctx, {"ocp", "N"}, "must be at least 1");
  check(t.ocp.dt > 0, ctx, {"ocp", "dt"}, "must be positive");
  check(t.ocp.t_ref > 0, ctx, {"ocp", "t_ref"}, "must be positive");
  check(t.ocp.z_min < t.ocp.z_max, ctx, {"ocp", "z_min"},
        "must be below z_max");
  check(t.ocp.barrier_mu > 0, ctx, {"ocp", "barrier_mu"}, "must be positive");
  check(t.ocp.tol_stationarity > 0, ctx, {"ocp", "tol_stationarity"},
        "must be positive");
  check(t.ocp.max_iters >= 1, ctx, {"ocp", "max_iters"}, "must be at least 1");
  check(t.ocp.reg_init > 0, ctx, {"ocp", "reg_init"}, "must be positive");
  check(t.ocp.reg_max >= t.ocp.reg_init, ctx, {"ocp", "reg_max"},
        "must be at least reg_init");
  check((t.ocp.q_v_goal.array() >= 0).all(), ctx, {"ocp", "q_v_goal"},
        "must be non-negative");
  check((t.ocp.q_q_goal.array() >= 0).all(), ctx, {"ocp", "q_q_goal"},
        "must be non-negative");
  check((t.ocp.q_u.array() >= 0).all(), ctx, {"ocp", "q_u"},
        "must be non-negative");

  check(t.loss.collision.max_iters >= 1, ctx, {"collision", "max_iters"},
        "must be at least 1");
  check(t.loss.collision.tol > 0, ctx, {"collision", "tol"},
        "must be positive");

  check(t.loss.beta_gate >= 0, ctx, {"loss", "beta_gate"},
        "must be non-negative");
  check(t.loss.beta_goal >= 0, ctx, {"loss", "beta_goal"},
        "must be non-negative");
  check(t.loss.beta_control_diff >= 0, ctx, {"loss", "beta_control_diff"},
        "must be non-negative");
  check(t.loss.h >= 1 && t.loss.h <= t.ocp.N, ctx, {"loss", "h"},
        "must lie in [1, ocp.N]");
  check(t.loss.proximity_threshold >= 0, ctx, {"loss", "proximity_threshold"},
        "must be non-negative");

  check(t.hidden >= 1, ctx, {"policy", "hidden"}, "must be at least 1");
  check(t.scaling.p_off_lo < t.scaling.p_off_hi, ctx, {"policy", "p_off_lo"},
        "must be below p_off_hi");
  check((t.scaling.lo.array() < t.scaling.hi.array()).all(), ctx,
        {"policy", "head_lo"}, "must be below head_hi componentwise");
  check(t.pretrain_samples >= 1, ctx, {"policy", "pretrain_samples"},
        "must be at least 1");
  check(t.pretrain_mse_tol > 0, ctx, {"policy", "pretrain_mse_tol"},
        "must be positive");
  check(t.pretrain_max_epochs >= 1, ctx, {"policy", "pretrain_max_epochs"},
        "must be at least 1");
  check(t.pretrain_lr > 0, ctx, {"policy", "pretrain_lr"},
        "must be positive");

  check(t.env.tilt_min <= t.env.tilt_max, ctx, {"env", "tilt_min"},
        "must not exceed tilt_max");
  check(t.env.inner_width > 0, ctx, {"env", "inner_width"},
        "must be positive");
  check(t.env.inner_height > 0, ctx, {"env", "inner_height"},
        "must be positive");
  check(t.env.bar_thickness > 0, ctx, {"env", "bar_thickness"},
        "must be positive");
  check(t.env.bar_depth > 0, ctx, {"env", "bar_depth"}, "must be positive");
  check(t.env.pos_jitter >= 0, ctx, {"env", "pos_jitter"},
        "must be non-negative");
  check((t.env.quad_semi_axes.array() > 0).all(), ctx,
        {"env", "quad_semi_axes"}, "must be positive");
  check(t.env.inflation_z >= 1, ctx, {"env", "inflation_z"},
        "must be at least 1");
  check(t.env.goal_radius > 0, ctx, {"env", "goal_radius"},
        "must be positive");
  check(t.env.traversal_speed > 0, ctx, {"env", "traversal_speed"},
        "must be positive");

  check(t.batch_size >= 1, ctx, {"trainer", "batch_size"},
        "must be at least 1");
  check(t.horizon >= 1, ctx, {"trainer", "horizon"}, "must be at least 1");
  check(t.epochs >= 1, ctx, {"trainer", "epochs"}, "must be at least 1");
  check(t.max_sim_steps >= 1, ctx, {"trainer", "max_sim_steps"},
        "must be at least 1");
  check(t.lr > 0, ctx, {"trainer", "lr"}, "must be positive");
  check(t.lr_decay > 0 && t.lr_decay <= 1, ctx, {"trainer", "lr_decay"},
        "must lie in (0, 1]");
  check(t.lr_decay_every >= 1, ctx, {"trainer", "lr_decay_every"},
        "must be at least 1");
  check(t.adam_beta1 >= 0 && t.adam_beta1 < 1, ctx, {"trainer", "adam_beta1"},
        "must lie in [0, 1)");
  check(t.adam_beta2 >= 0 && t.adam_beta2 < 1, ctx, {"trainer", "adam_beta2"},
        "must lie in [0, 1)");
  check(t.adam_eps > 0, ctx, {"trainer", "adam_eps"}, "must be positive");
  check(t.eval_every >= 0, ctx, {"trainer", "eval_every"},
        "must be non-negative");
  check(t.eval_trials >= 1, ctx, {"trainer", "eval_trials"},
        "must be at least 1");
  check(t.threads >= 1, ctx, {"trainer", "threads"}, "must be at least 1");
  check(t.max_consecutive_mpc_failures >= 1, ctx,
        {"trainer", "max_consecutive_mpc_failures"}, "must be at least 1");
  check(t.divergence_factor > 1, ctx, {"trainer", "divergence_factor"},
        "must exceed 1");
  check(t.divergence_patience >= 1, ctx, {"trainer", "divergence_patience"},
        "must be at least 1");
}

ProjectConfig parse_impl(const std::string& text, const std::string& origin) {
  Ctx ctx{&text, origin};
  json root;
  try {
    root = json::parse(text, /*cb=*/nullptr, /*allow_exceptions=*/true,
                       /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    std::ostringstream os;
    os << origin << ":" << line_of_byte(text, e.byte > 0 ? e.byte - 1 : 0)
       << ": " << e.what();
    throw ConfigError(os.str());
  }
  if (!root.is_object()) {
    throw ConfigError(origin + ": top level must be an object");
  }

  ProjectConfig cfg;
  TrainConfig& t = cfg.train;
  for (const auto& item : root.items()) {
    const std::string& key = item.key();
    if (key == "dynamics") {
      load_dynamics(ctx, item.value(), t.ocp.dyn);
    } else if (key == "ocp") {
      load_ocp(ctx, item.value(), t.ocp);
    } else if (key == "collision") {
      load_collision(ctx, item.value(), t.loss.collision);
    } else if (key == "loss") {
      load_loss(ctx, item.value(), t.loss);
    } else if (key == "policy") {
      load_policy(ctx, item.value(), t);
    } else if (key == "env") {
      load_env(ctx, item.value(), t.env);
    } else if (key == "trainer") {
      load_trainer(ctx, item.value(), t);
    } else {
      fail(ctx, {key}, "unknown section");
    }
  }

  // Single time step and a single collision-solver setting feed both the
  // predictive model and the environment/judge sides.
  t.ocp.dyn.dt = t.ocp.dt;
  t.env.collision = t.loss.collision;
  t.env.proximity_threshold = t.loss.proximity_threshold;

  validate(cfg, ctx);
  return cfg;
}

json vec_to_json(const double* data, int n) {
  json arr = json::array();
  for (int i = 0; i < n; ++i) arr.push_back(data[i]);
  return arr;
}

}  // namespace

ProjectConfig load_project_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_impl(buf.str(), path);
}

ProjectConfig parse_project_config(const std::string& text,
                                   const std::string& origin) {
  return parse_impl(text, origin);
}

void validate_project_config(const ProjectConfig& cfg,
                             const std::string& origin) {
  Ctx ctx{nullptr, origin};
  validate(cfg, ctx);
}

std::string render_project_config(const ProjectConfig& cfg) {
  const TrainConfig& t = cfg.train;
  json root;
  root["dynamics"] = {{"mass", t.ocp.dyn.m},
                      {"gravity", t.ocp.dyn.g},
                      {"f_max", t.ocp.dyn.f_max},
                      {"omega_max", t.ocp.dyn.omega_max}};
  root["ocp"] = {{"N", t.ocp.N},
                 {"dt", t.ocp.dt},
                 {"t_ref", t.ocp.t_ref},
                 {"q_v_goal", vec_to_json(t.ocp.q_v_goal.data(), 3)},
                 {"q_q_goal", vec_to_json(t.ocp.q_q_goal.data(), 4)},
                 {"q_u", vec_to_json(t.ocp.q_u.data(), 4)},
                 {"z_min", t.ocp.z_min},
                 {"z_max", t.ocp.z_max},
                 {"barrier_mu", t.ocp.barrier_mu},
                 {"tol_stationarity", t.ocp.tol_stationarity},
                 {"max_iters", t.ocp.max_iters},
                 {"reg_init", t.ocp.reg_init},
                 {"reg_max", t.ocp.reg_max}};
  root["collision"] = {{"max_iters", t.loss.collision.max_iters},
                       {"tol", t.loss.collision.tol}};
  root["loss"] = {{"beta_gate", t.loss.beta_gate},
                  {"beta_goal", t.loss.beta_goal},
                  {"beta_control_diff", t.loss.beta_control_diff},
                  {"h", t.loss.h},
                  {"proximity_threshold", t.loss.proximity_threshold}};
  root["policy"] = {{"hidden", t.hidden},
                    {"p_off_lo", t.scaling.p_off_lo},
                    {"p_off_hi", t.scaling.p_off_hi},
                    {"head_lo", vec_to_json(t.scaling.lo.data(), 8)},
                    {"head_hi", vec_to_json(t.scaling.hi.data(), 8)},
                    {"pretrain_samples", t.pretrain_samples},
                    {"pretrain_mse_tol", t.pretrain_mse_tol},
                    {"pretrain_max_epochs", t.pretrain_max_epochs},
                    {"pretrain_lr", t.pretrain_lr}};
  root["env"] = {{"gate_center", vec_to_json(t.env.gate_center.data(), 3)},
                 {"tilt_min", t.env.tilt_min},
                 {"tilt_max", t.env.tilt_max},
                 {"inner_width", t.env.inner_width},
                 {"inner_height", t.env.inner_height},
                 {"bar_thickness", t.env.bar_thickness},
                 {"bar_depth", t.env.bar_depth},
                 {"x_init", vec_to_json(t.env.x_init_nominal.data(), 3)},
                 {"p_goal", vec_to_json(t.env.p_goal_nominal.data(), 3)},
                 {"pos_jitter", t.env.pos_jitter},
                 {"quad_semi_axes", vec_to_json(t.env.quad_semi_axes.data(), 3)},
                 {"inflation_z", t.env.inflation_z},
                 {"goal_radius", t.env.goal_radius},
                 {"traversal_speed", t.env.traversal_speed}};
  root["trainer"] = {
      {"batch_size", t.batch_size},
      {"horizon", t.horizon},
      {"epochs", t.epochs},
      {"max_sim_steps", t.max_sim_steps},
      {"lr", t.lr},
      {"lr_decay", t.lr_decay},
      {"lr_decay_every", t.lr_decay_every},
      {"adam_beta1", t.adam_beta1},
      {"adam_beta2", t.adam_beta2},
      {"adam_eps", t.adam_eps},
      {"use_adam", t.use_adam},
      {"eval_every", t.eval_every},
      {"eval_trials", t.eval_trials},
      {"seed", t.seed},
      {"threads", t.threads},
      {"max_consecutive_mpc_failures", t.max_consecutive_mpc_failures},
      {"divergence_factor", t.divergence_factor},
      {"divergence_patience", t.divergence_patience}};
  return root.dump(2) + "\n";
}

void save_project_config(const std::string& path, const ProjectConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw ConfigError(path + ": cannot open for writing");
  out << render_project_config(cfg);
  if (!out) throw ConfigError(path + ": write failed");
}

void apply_env_overrides(ProjectConfig& cfg) {
  if (const char* s = std::getenv("GATECROSS_SEED")) {
    try {
      cfg.train.seed = std::stoull(s);
    } catch (const std::exception&) {
      throw ConfigError(std::string("GATECROSS_SEED: not an integer: ") + s);
    }
  }
  if (const char* s = std::getenv("GATECROSS_THREADS")) {
    try {
      cfg.train.threads = std::max(1, std::stoi(s));
    } catch (const std::exception&) {
      throw ConfigError(std::string("GATECROSS_THREADS: not an integer: ") + s);
    }
  }
}

}  // namespace gatecross
