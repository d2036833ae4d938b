#include "fngd/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>

namespace fngd {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"data",
       {"source", "n", "test_n", "dim", "classes", "seed", "train_images", "train_labels",
        "test_images", "test_labels", "limit", "test_limit"}},
      {"model", {"layers", "loss", "init_seed"}},
      {"optim",
       {"kind", "lr", "momentum", "weight_decay", "beta1", "beta2", "eps", "alpha", "lambda_floor",
        "fixed_lambda", "path", "u_cap_mb"}},
      {"train", {"epochs", "batch_size", "seed", "schedule", "milestones"}},
      {"output", {"dir", "metrics", "timing", "ablation"}},
      {"bench", {"epochs", "kinds", "lrs"}},
  };
  return keys;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class T>
T parse_number(const std::string& field, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty())
    throw ConfigError(field, "'" + text + "' is not a valid number");
  return v;
}

// Trailing "; ..." or "# ..." after a value, when preceded by whitespace.
std::string strip_comment(const std::string& value) {
  for (std::size_t i = 1; i < value.size(); ++i)
    if ((value[i] == ';' || value[i] == '#') && (value[i - 1] == ' ' || value[i - 1] == '\t'))
      return value.substr(0, i);
  return value;
}

class Reader {
 public:
  explicit Reader(const pt::ptree& root) : root_(root) {}

  std::optional<std::string> raw(const std::string& section, const std::string& key) const {
    const auto sec = root_.get_child_optional(pt::ptree::path_type(section, '\0'));
    if (!sec) return std::nullopt;
    const auto v = sec->get_optional<std::string>(pt::ptree::path_type(key, '\0'));
    if (!v) return std::nullopt;
    return trim(strip_comment(*v));
  }

  template <class T>
  void number(const std::string& section, const std::string& key, T& out) const {
    if (auto v = raw(section, key)) out = parse_number<T>(section + "." + key, *v);
  }

  void text(const std::string& section, const std::string& key, std::string& out) const {
    if (auto v = raw(section, key)) out = *v;
  }

 private:
  const pt::ptree& root_;
};

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field, what);
}

std::size_t parse_count(const std::string& field, const std::string& token) {
  return parse_number<std::size_t>(field, token);
}

}  // namespace

ConfigError::ConfigError(const std::string& field, const std::string& what)
    : std::runtime_error(field + ": " + what), field_(field) {}

std::vector<LayerSpec> parse_layers(std::string_view text) {
  const std::string field = "model.layers";
  std::vector<LayerSpec> specs;
  for (const std::string& item : split(text, ',')) {
    if (item.empty()) throw ConfigError(field, "empty layer entry");
    const std::vector<std::string> t = split(item, ':');
    LayerSpec spec;
    std::size_t flags_from = 0;
    if (t[0] == "dense") {
      require(t.size() >= 3, field, "'" + item + "': expected dense:IN:OUT[:flags]");
      spec = LayerSpec::dense(parse_count(field, t[1]), parse_count(field, t[2]));
      flags_from = 3;
    } else if (t[0] == "conv") {
      require(t.size() >= 7, field, "'" + item + "': expected conv:IN:OUT:K:same|valid:H:W[:flags]");
      require(t[4] == "same" || t[4] == "valid", field, "'" + t[4] + "' is not same or valid");
      spec = LayerSpec::conv(parse_count(field, t[1]), parse_count(field, t[2]),
                             parse_count(field, t[3]), t[4] == "same" ? Padding::same : Padding::valid,
                             parse_count(field, t[5]), parse_count(field, t[6]));
      flags_from = 7;
    } else {
      throw ConfigError(field, "unknown layer kind '" + t[0] + "'");
    }
    for (std::size_t i = flags_from; i < t.size(); ++i) {
      if (t[i] == "relu") spec.activation = Activation::relu;
      else if (t[i] == "none") spec.activation = Activation::none;
      else if (t[i] == "nobias") spec.bias = false;
      else if (t[i] == "plain") spec.precondition = false;
      else throw ConfigError(field, "unknown layer flag '" + t[i] + "'");
    }
    try {
      spec.validate();
    } catch (const std::exception& e) {
      throw ConfigError(field, "'" + item + "': " + e.what());
    }
    specs.push_back(spec);
  }
  return specs;
}

TrainConfig parse_config(std::istream& in) {
  pt::ptree root;
  try {
    pt::read_ini(in, root);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config", "line " + std::to_string(e.line()) + ": " + e.message());
  }
  for (const auto& [section, body] : root) {
    const auto it = known_keys().find(section);
    if (it == known_keys().end()) {
      if (body.empty())
        throw ConfigError(section, "key outside of any section");
      throw ConfigError(section, "unknown section");
    }
    for (const auto& kv : body)
      if (!it->second.count(kv.first)) throw ConfigError(section + "." + kv.first, "unknown key");
  }

  const Reader r(root);
  TrainConfig c;

  r.text("data", "source", c.data.source);
  r.number("data", "n", c.data.n);
  r.number("data", "test_n", c.data.test_n);
  r.number("data", "dim", c.data.dim);
  r.number("data", "classes", c.data.classes);
  r.number("data", "seed", c.data.seed);
  r.number("data", "limit", c.data.limit);
  r.number("data", "test_limit", c.data.test_limit);
  for (auto [key, dst] : {std::pair{"train_images", &c.data.train_images},
                          std::pair{"train_labels", &c.data.train_labels},
                          std::pair{"test_images", &c.data.test_images},
                          std::pair{"test_labels", &c.data.test_labels}})
    if (auto v = r.raw("data", key)) *dst = *v;

  if (auto v = r.raw("model", "layers")) c.model.layers = parse_layers(*v);
  if (auto v = r.raw("model", "loss")) {
    if (*v == "cross_entropy") c.model.loss = LossKind::cross_entropy;
    else if (*v == "squared_error") c.model.loss = LossKind::squared_error;
    else throw ConfigError("model.loss", "'" + *v + "' is not cross_entropy or squared_error");
  }
  r.number("model", "init_seed", c.model.init_seed);

  if (auto v = r.raw("optim", "kind")) {
    try {
      c.optim.kind = parse_optimizer_kind(*v);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("optim.kind", e.what());
    }
  }
  const bool natural = c.optim.kind == OptimizerKind::ngd_smw || c.optim.kind == OptimizerKind::fngd;
  r.number("optim", "lr", c.optim.lr);
  if (auto v = r.raw("optim", "momentum")) {
    const double beta = parse_number<double>("optim.momentum", *v);
    if (c.optim.kind == OptimizerKind::sgd_momentum) c.optim.momentum = beta;
    else if (natural) c.optim.fngd.momentum = beta;
    else throw ConfigError("optim.momentum", "not used by " + std::string(to_string(c.optim.kind)));
  }
  if (auto v = r.raw("optim", "weight_decay")) {
    const double wd = parse_number<double>("optim.weight_decay", *v);
    if (c.optim.kind == OptimizerKind::adamw) c.optim.adamw.weight_decay = wd;
    else if (natural) c.optim.fngd.weight_decay = wd;
    else if (wd != 0.0)
      throw ConfigError("optim.weight_decay", "not used by " + std::string(to_string(c.optim.kind)));
  }
  r.number("optim", "beta1", c.optim.adamw.beta1);
  r.number("optim", "beta2", c.optim.adamw.beta2);
  r.number("optim", "eps", c.optim.adamw.eps);
  r.number("optim", "alpha", c.optim.fngd.damping.alpha);
  r.number("optim", "lambda_floor", c.optim.fngd.damping.floor);
  if (auto v = r.raw("optim", "fixed_lambda"))
    c.optim.fngd.damping.fixed_lambda = parse_number<double>("optim.fixed_lambda", *v);
  if (auto v = r.raw("optim", "path")) {
    if (*v == "weighted_input") c.optim.fngd.path = PreconditionPath::weighted_input;
    else if (*v == "explicit_u") c.optim.fngd.path = PreconditionPath::explicit_u;
    else throw ConfigError("optim.path", "'" + *v + "' is not weighted_input or explicit_u");
  }
  if (auto v = r.raw("optim", "u_cap_mb"))
    c.optim.fngd.u_byte_cap = parse_count("optim.u_cap_mb", *v) << 20;

  r.number("train", "epochs", c.train.epochs);
  r.number("train", "batch_size", c.train.batch_size);
  r.number("train", "seed", c.train.seed);
  r.text("train", "schedule", c.train.schedule);
  if (auto v = r.raw("train", "milestones"))
    for (const std::string& tok : split(*v, ','))
      if (!tok.empty()) c.train.milestones.push_back(parse_count("train.milestones", tok));

  if (auto v = r.raw("output", "dir")) c.output.dir = *v;
  r.text("output", "metrics", c.output.metrics);
  r.text("output", "timing", c.output.timing);
  r.text("output", "ablation", c.output.ablation);

  r.number("bench", "epochs", c.bench.epochs);
  if (auto v = r.raw("bench", "kinds")) {
    c.bench.kinds.clear();
    for (const std::string& tok : split(*v, ',')) {
      try {
        c.bench.kinds.push_back(parse_optimizer_kind(tok));
      } catch (const std::invalid_argument& e) {
        throw ConfigError("bench.kinds", e.what());
      }
    }
  }

  if (auto v = r.raw("bench", "lrs")) {
    for (const std::string& tok : split(*v, ',')) {
      const auto parts = split(tok, ':');
      if (parts.size() != 2) throw ConfigError("bench.lrs", "expected kind:lr, got '" + tok + "'");
      try {
        c.bench.lrs[parse_optimizer_kind(parts[0])] = parse_number<double>("bench.lrs", parts[1]);
      } catch (const std::invalid_argument& e) {
        throw ConfigError("bench.lrs", e.what());
      }
    }
  }

  c.validate();
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path.string());
  TrainConfig c = parse_config(in);
  const auto base = path.parent_path();
  for (auto* p : {&c.data.train_images, &c.data.train_labels, &c.data.test_images,
                  &c.data.test_labels})
    if (!p->empty() && p->is_relative()) *p = base / *p;
  if (c.data.source == "idx") {
    for (auto [name, p] : {std::pair{"data.train_images", &c.data.train_images},
                           std::pair{"data.train_labels", &c.data.train_labels},
                           std::pair{"data.test_images", &c.data.test_images},
                           std::pair{"data.test_labels", &c.data.test_labels}})
      if (!p->empty() && !std::filesystem::exists(*p))
        throw ConfigError(name, "file not found: " + p->string());
  }
  return c;
}

void TrainConfig::validate() const {
  require(data.source == "synthetic" || data.source == "idx", "data.source",
          "'" + data.source + "' is not synthetic or idx");
  if (data.source == "synthetic") {
    require(data.n > 0, "data.n", "must be positive");
    require(data.test_n > 0, "data.test_n", "must be positive");
    require(data.dim > 0, "data.dim", "must be positive");
    require(data.classes >= 2, "data.classes", "needs at least 2 classes");
  } else {
    require(!data.train_images.empty(), "data.train_images", "required for idx data");
    require(!data.train_labels.empty(), "data.train_labels", "required for idx data");
    require(data.test_images.empty() == data.test_labels.empty(), "data.test_images",
            "test images and labels go together");
    if (data.test_images.empty())
      require(data.test_n > 0, "data.test_n", "held-out count must be positive without test files");
  }

  require(!model.layers.empty(), "model.layers", "at least one layer is required");
  for (std::size_t i = 1; i < model.layers.size(); ++i)
    require(model.layers[i - 1].output_size() == model.layers[i].input_size(), "model.layers",
            "layer " + std::to_string(i) + " expects " + std::to_string(model.layers[i].input_size()) +
                " inputs, previous layer gives " + std::to_string(model.layers[i - 1].output_size()));
  require(model.layers.back().activation == Activation::none, "model.layers",
          "the output layer must not have an activation");
  if (data.source == "synthetic") {
    require(model.layers.front().input_size() == data.dim, "model.layers",
            "first layer takes " + std::to_string(model.layers.front().input_size()) +
                " inputs, data.dim is " + std::to_string(data.dim));
    require(model.layers.back().output_size() == data.classes, "model.layers",
            "last layer gives " + std::to_string(model.layers.back().output_size()) +
                " outputs for " + std::to_string(data.classes) + " classes");
  }

  require(std::isfinite(optim.lr) && optim.lr > 0.0, "optim.lr", "must be positive");
  const bool natural = optim.kind == OptimizerKind::ngd_smw || optim.kind == OptimizerKind::fngd;
  if (natural) {
    try {
      optim.fngd.damping.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("optim.alpha", e.what());
    }
    require(optim.fngd.momentum >= 0.0 && optim.fngd.momentum < 1.0, "optim.momentum",
            "must be in [0, 1)");
    require(train.batch_size >= 2, "train.batch_size",
            "natural-gradient optimizers need M >= 2 (an M=1 Gram matrix is a scalar)");
  }
  if (optim.kind == OptimizerKind::fngd)
    require(train.epochs >= 2, "train.epochs", "FNGD needs at least 2 epochs");
  if (optim.kind == OptimizerKind::sgd_momentum)
    require(optim.momentum >= 0.0 && optim.momentum < 1.0, "optim.momentum", "must be in [0, 1)");

  require(train.epochs > 0, "train.epochs", "must be positive");
  require(train.batch_size > 0, "train.batch_size", "must be positive");
  if (data.source == "synthetic")
    require(train.batch_size <= data.n, "train.batch_size", "exceeds data.n");
  require(train.schedule == "step" || train.schedule == "constant", "train.schedule",
          "'" + train.schedule + "' is not step or constant");
  try {
    schedule().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("train.milestones", e.what());
  }
  require(bench.epochs >= 3, "bench.epochs", "timing needs at least 3 epochs");
  require(!bench.kinds.empty(), "bench.kinds", "nothing to benchmark");
}

LrSchedule TrainConfig::schedule() const {
  if (train.schedule == "constant") return LrSchedule::constant(optim.lr, train.epochs);
  LrSchedule s = LrSchedule::standard(optim.lr, train.epochs);
  if (!train.milestones.empty()) s.milestones = train.milestones;
  return s;
}

}  // namespace fngd
