#include "illid/config.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <set>

#include "illid/error.hpp"

namespace illid {

using nlohmann::json;

static_assert(std::is_same_v<std::uint64_t, std::size_t> || sizeof(std::size_t) == 8,
              "seeds are read through the size_t overload");

namespace {

// Walks one JSON object, reading known keys and rejecting everything else.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string pointer) : j_(j), pointer_(std::move(pointer)) {
    if (!j_.is_object()) throw ConfigError(pointer_.empty() ? "/" : pointer_, "expected an object");
  }
  ~ObjectReader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError(child(key), "unknown key");
  }

  std::string child(const std::string& key) const {
    std::string escaped;
    for (char ch : key) {
      if (ch == '~') escaped += "~0";
      else if (ch == '/') escaped += "~1";
      else escaped += ch;
    }
    return pointer_ + "/" + escaped;
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(child(key), "expected a number");
      out = v->get<double>();
      if (!std::isfinite(out)) throw ConfigError(child(key), "must be finite");
    }
  }
  void read(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(child(key), "expected a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(child(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  template <class T>
  void read_list(const std::string& key, std::vector<T>& out) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_array()) throw ConfigError(child(key), "expected an array");
    out.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      const json& e = (*v)[i];
      const std::string at = child(key) + "/" + std::to_string(i);
      if constexpr (std::is_floating_point_v<T>) {
        if (!e.is_number()) throw ConfigError(at, "expected a number");
      } else {
        if (!e.is_number_unsigned()) throw ConfigError(at, "expected a non-negative integer");
      }
      out.push_back(e.get<T>());
    }
  }

 private:
  const json& j_;
  std::string pointer_;
  std::set<std::string> seen_;
};

void read_net(ObjectReader& r, const std::string& key, NetShape& out) {
  if (const json* v = r.find(key)) {
    ObjectReader sub(*v, r.child(key));
    sub.read("layers", out.layers);
    sub.read("width", out.width);
  }
}

void read_model(const json& j, const std::string& pointer, ModelConfig& m) {
  ObjectReader r(j, pointer);
  if (const json* v = r.find("kind")) {
    if (*v == "il-lidvae") m.kind = ModelConfig::Kind::vae;
    else if (*v == "il-lidmvae") m.kind = ModelConfig::Kind::mixture;
    else throw ConfigError(r.child("kind"), "expected \"il-lidvae\" or \"il-lidmvae\"");
  }
  r.read("latent_dim", m.latent_dim);
  r.read("data_dim", m.data_dim);
  r.read("c", m.c);
  r.read("L1", m.L1);
  r.read("L2", m.L2);
  read_net(r, "icnn", m.icnn);
  read_net(r, "encoder", m.encoder);
  r.read("sigma_dec", m.sigma_dec);
  if (const json* v = r.find("likelihood")) {
    if (*v == "gaussian") m.likelihood = ModelConfig::Likelihood::gaussian;
    else if (*v == "bernoulli") m.likelihood = ModelConfig::Likelihood::bernoulli;
    else throw ConfigError(r.child("likelihood"), "expected \"gaussian\" or \"bernoulli\"");
  }
}

void read_train(const json& j, const std::string& pointer, TrainConfig& t) {
  ObjectReader r(j, pointer);
  r.read("epochs", t.epochs);
  r.read("batch_size", t.batch_size);
  r.read("learning_rate", t.learning_rate);
  r.read("beta1", t.beta1);
  r.read("beta2", t.beta2);
  r.read("eps", t.eps);
  r.read("eval_every", t.eval_every);
  r.read("seed", t.seed);
  if (const json* v = r.find("anneal")) {
    if (v->is_null()) {
      t.anneal.reset();
    } else {
      AnnealConfig a;
      ObjectReader sub(*v, r.child("anneal"));
      sub.read("decay", a.decay);
      sub.read("trigger_ratio", a.trigger_ratio);
      sub.read("min_L", a.min_L);
      t.anneal = a;
    }
  }
}

json model_json(const ModelConfig& m) {
  return {{"kind", m.kind == ModelConfig::Kind::vae ? "il-lidvae" : "il-lidmvae"},
          {"latent_dim", m.latent_dim},
          {"data_dim", m.data_dim},
          {"c", m.c},
          {"L1", m.L1},
          {"L2", m.L2},
          {"icnn", {{"layers", m.icnn.layers}, {"width", m.icnn.width}}},
          {"encoder", {{"layers", m.encoder.layers}, {"width", m.encoder.width}}},
          {"sigma_dec", m.sigma_dec},
          {"likelihood", std::string(to_string(m.likelihood))}};
}

json parse_or_throw(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("/", std::string("malformed JSON: ") + e.what());
  }
}

}  // namespace

std::string_view to_string(ModelConfig::Kind kind) {
  return kind == ModelConfig::Kind::vae ? "il-lidvae" : "il-lidmvae";
}

std::string_view to_string(ModelConfig::Likelihood likelihood) {
  return likelihood == ModelConfig::Likelihood::gaussian ? "gaussian" : "bernoulli";
}

void validate(const ModelConfig& m, const std::string& p) {
  if (m.latent_dim == 0) throw ConfigError(p + "/latent_dim", "must be positive");
  if (m.data_dim < m.latent_dim) throw ConfigError(p + "/data_dim", "must be at least latent_dim");
  if (m.kind == ModelConfig::Kind::mixture && m.c == 0) throw ConfigError(p + "/c", "must be positive");
  if (m.L1 < 0) throw ConfigError(p + "/L1", "must be non-negative");
  if (m.L2 < 0) throw ConfigError(p + "/L2", "must be non-negative");
  if (m.icnn.layers > 0 && m.icnn.width == 0) throw ConfigError(p + "/icnn/width", "must be positive");
  if (m.encoder.width == 0) throw ConfigError(p + "/encoder/width", "must be positive");
  if (!(m.sigma_dec > 0)) throw ConfigError(p + "/sigma_dec", "must be positive");
}

void validate(const TrainConfig& t, const std::string& p) {
  if (t.batch_size == 0) throw ConfigError(p + "/batch_size", "must be positive");
  if (t.learning_rate < 0) throw ConfigError(p + "/learning_rate", "must be non-negative");
  if (!(t.beta1 >= 0 && t.beta1 < 1)) throw ConfigError(p + "/beta1", "must lie in [0, 1)");
  if (!(t.beta2 >= 0 && t.beta2 < 1)) throw ConfigError(p + "/beta2", "must lie in [0, 1)");
  if (!(t.eps > 0)) throw ConfigError(p + "/eps", "must be positive");
  if (t.anneal) {
    if (!(t.anneal->decay > 0 && t.anneal->decay < 1)) throw ConfigError(p + "/anneal/decay", "must lie in (0, 1)");
    if (!(t.anneal->trigger_ratio >= 1)) throw ConfigError(p + "/anneal/trigger_ratio", "must be at least 1");
    if (t.anneal->min_L < 0) throw ConfigError(p + "/anneal/min_L", "must be non-negative");
  }
}

ModelConfig parse_model_config(std::string_view json_text) {
  ModelConfig m;
  read_model(parse_or_throw(json_text), "", m);
  validate(m, "");
  return m;
}

RunConfig parse_run_config(std::string_view json_text) {
  const json j = parse_or_throw(json_text);
  RunConfig cfg;
  ObjectReader r(j, "");
  if (const json* v = r.find("model")) read_model(*v, "/model", cfg.model);
  if (const json* v = r.find("train")) read_train(*v, "/train", cfg.train);
  if (const json* v = r.find("data")) {
    ObjectReader d(*v, "/data");
    if (const json* toy = d.find("toy")) {
      ToyDataConfig t;
      ObjectReader tr(*toy, "/data/toy");
      tr.read("sigma", t.sigma);
      tr.read("n", t.n_per_class);
      if (!(t.sigma > 0)) throw ConfigError("/data/toy/sigma", "must be positive");
      if (t.n_per_class < 2) throw ConfigError("/data/toy/n", "need at least 2 samples per class");
      cfg.data.toy = t;
    }
    if (const json* idx = d.find("idx")) {
      IdxDataConfig i;
      ObjectReader ir(*idx, "/data/idx");
      ir.read("images", i.images);
      ir.read("labels", i.labels);
      if (i.images.empty()) throw ConfigError("/data/idx/images", "path required");
      cfg.data.idx = i;
    }
    if (cfg.data.toy && cfg.data.idx) throw ConfigError("/data", "give either toy or idx, not both");
  }
  if (!cfg.data.toy && !cfg.data.idx) cfg.data.toy = ToyDataConfig{};
  if (const json* v = r.find("eval")) {
    ObjectReader e(*v, "/eval");
    e.read("n_mc", cfg.eval.n_mc);
    e.read("n_eval_points", cfg.eval.n_eval_points);
    e.read("iw_samples", cfg.eval.iw_samples);
    if (cfg.eval.n_mc < 100) throw ConfigError("/eval/n_mc", "must be at least 100");
    if (cfg.eval.n_eval_points < 2) throw ConfigError("/eval/n_eval_points", "must be at least 2");
    if (cfg.eval.iw_samples == 0) throw ConfigError("/eval/iw_samples", "must be positive");
  }
  if (const json* v = r.find("experiment")) {
    ObjectReader e(*v, "/experiment");
    e.read_list("sigma_grid", cfg.experiment.sigma_grid);
    e.read_list("L_grid", cfg.experiment.L_grid);
    e.read_list("seeds", cfg.experiment.seeds);
    if (cfg.experiment.sigma_grid.empty()) throw ConfigError("/experiment/sigma_grid", "must not be empty");
    if (cfg.experiment.L_grid.empty()) throw ConfigError("/experiment/L_grid", "must not be empty");
    if (cfg.experiment.seeds.empty()) throw ConfigError("/experiment/seeds", "must not be empty");
    for (std::size_t i = 0; i < cfg.experiment.sigma_grid.size(); ++i)
      if (!(cfg.experiment.sigma_grid[i] > 0))
        throw ConfigError("/experiment/sigma_grid/" + std::to_string(i), "must be positive");
    for (std::size_t i = 0; i < cfg.experiment.L_grid.size(); ++i)
      if (cfg.experiment.L_grid[i] < 0)
        throw ConfigError("/experiment/L_grid/" + std::to_string(i), "must be non-negative");
  }
  r.read("out_dir", cfg.out_dir);
  validate(cfg.model);
  validate(cfg.train);
  if (cfg.data.toy && cfg.model.data_dim != 2) throw ConfigError("/model/data_dim", "toy data is two-dimensional");
  return cfg;
}

std::string to_json(const ModelConfig& cfg, int indent) { return model_json(cfg).dump(indent); }

std::string to_json(const RunConfig& cfg, int indent) {
  const auto& t = cfg.train;
  json train = {{"epochs", t.epochs},     {"batch_size", t.batch_size}, {"learning_rate", t.learning_rate},
                {"beta1", t.beta1},       {"beta2", t.beta2},           {"eps", t.eps},
                {"eval_every", t.eval_every}, {"seed", t.seed}};
  train["anneal"] = t.anneal ? json{{"decay", t.anneal->decay},
                                    {"trigger_ratio", t.anneal->trigger_ratio},
                                    {"min_L", t.anneal->min_L}}
                             : json(nullptr);
  json data = json::object();
  if (cfg.data.toy) data["toy"] = {{"sigma", cfg.data.toy->sigma}, {"n", cfg.data.toy->n_per_class}};
  if (cfg.data.idx) data["idx"] = {{"images", cfg.data.idx->images}, {"labels", cfg.data.idx->labels}};
  const json j = {
      {"model", model_json(cfg.model)},
      {"train", train},
      {"data", data},
      {"eval", {{"n_mc", cfg.eval.n_mc}, {"n_eval_points", cfg.eval.n_eval_points}, {"iw_samples", cfg.eval.iw_samples}}},
      {"experiment",
       {{"sigma_grid", cfg.experiment.sigma_grid}, {"L_grid", cfg.experiment.L_grid}, {"seeds", cfg.experiment.seeds}}},
      {"out_dir", cfg.out_dir}};
  return j.dump(indent);
}

}  // namespace illid
