#include "unmix/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "unmix/checkpoint.hpp"
#include "unmix/error.hpp"

namespace unmix {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) out.push_back(trim(item));
  return out;
}

template <typename T>
T parse_number(const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end) throw ValueError("'" + text + "' is not a valid number");
  return v;
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ValueError("'" + text + "' is not a boolean (true/false)");
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}
std::string fmt(float v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }

std::vector<float> parse_floats(const std::string& text) {
  std::vector<float> out;
  for (const auto& item : split(text, ',')) out.push_back(static_cast<float>(parse_number<double>(item)));
  return out;
}

std::string fmt_floats(const std::vector<float>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

std::vector<ConvStage> parse_stages(const std::string& text) {
  std::vector<ConvStage> out;
  for (const auto& item : split(text, ',')) {
    const auto colon = item.find(':');
    ConvStage s;
    if (colon == std::string::npos) {
      s.filters = parse_number<int>(item);
    } else {
      s.filters = parse_number<int>(trim(item.substr(0, colon)));
      s.stride = parse_number<int>(trim(item.substr(colon + 1)));
    }
    out.push_back(s);
  }
  return out;
}

std::string fmt_stages(const std::vector<ConvStage>& stages) {
  std::string out;
  for (std::size_t i = 0; i < stages.size(); ++i)
    out += (i ? "," : "") + std::to_string(stages[i].filters) + ":" + std::to_string(stages[i].stride);
  return out;
}

DataSource parse_source(const std::string& text) {
  if (text == "synthetic") return DataSource::Synthetic;
  if (text == "cifar10") return DataSource::Cifar10;
  if (text == "cifar100") return DataSource::Cifar100;
  throw ValueError("unknown data source '" + text + "' (expected synthetic, cifar10 or cifar100)");
}

struct KeyHandler {
  ConfigKey key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define UNMIX_KEY(name, help, field, parse, format)                                          \
  KeyHandler {                                                                               \
    {name, help}, [](RunConfig& c, const std::string& v) { c.field = parse; },               \
        [](const RunConfig& c) { return format; }                                            \
  }

const std::vector<KeyHandler>& handlers() {
  static const std::vector<KeyHandler> table = {
      UNMIX_KEY("seed", "run seed; every random stream derives from it", seed, parse_number<std::uint64_t>(v),
                fmt(c.seed)),
      UNMIX_KEY("epochs", "training epochs", epochs, parse_number<int>(v), fmt(c.epochs)),
      UNMIX_KEY("max_steps", "cap on optimizer steps (0: epochs decide)", max_steps, parse_number<int>(v),
                fmt(c.max_steps)),
      UNMIX_KEY("batch_size", "images per mini-batch", batch_size, parse_number<int>(v), fmt(c.batch_size)),
      UNMIX_KEY("output_dir", "run directory", output_dir, v, c.output_dir),
      UNMIX_KEY("eval_every", "kNN monitor period in steps (0: end only)", eval_every, parse_number<int>(v),
                fmt(c.eval_every)),
      UNMIX_KEY("checkpoint_every", "checkpoint period in steps (0: end only)", checkpoint_every,
                parse_number<int>(v), fmt(c.checkpoint_every)),
      UNMIX_KEY("mix.enabled", "inject in-batch mixtures", mix.enabled, parse_bool(v), fmt(c.mix.enabled)),
      UNMIX_KEY("mix.gamma", "Beta(gamma, gamma) shape for lambda", mix.gamma, parse_number<double>(v),
                fmt(c.mix.gamma)),
      UNMIX_KEY("mix.p_global", "probability of a global (mixup) iteration", mix.p_global, parse_number<double>(v),
                fmt(c.mix.p_global)),
      UNMIX_KEY("encoder.stages", "conv stages as filters:stride,...", encoder.stages, parse_stages(v),
                fmt_stages(c.encoder.stages)),
      UNMIX_KEY("encoder.embedding_dim", "projected embedding size", encoder.embedding_dim, parse_number<int>(v),
                fmt(c.encoder.embedding_dim)),
      UNMIX_KEY("encoder.proj_hidden_dim", "projection head hidden size", encoder.proj_hidden_dim,
                parse_number<int>(v), fmt(c.encoder.proj_hidden_dim)),
      UNMIX_KEY("encoder.momentum", "momentum of the key/target encoder", encoder_momentum, parse_number<double>(v),
                fmt(c.encoder_momentum)),
      UNMIX_KEY("loss.base", "simclr | moco | byol", loss.base, parse_base_loss(v), to_string(c.loss.base)),
      UNMIX_KEY("loss.mode", "original_only | mixed_only | combined | both_branch", loss.mode, parse_loss_mode(v),
                to_string(c.loss.mode)),
      UNMIX_KEY("loss.tau", "InfoNCE temperature", loss.tau, parse_number<double>(v), fmt(c.loss.tau)),
      UNMIX_KEY("loss.symmetric", "MoCo: both views act as queries", loss.symmetric, parse_bool(v),
                fmt(c.loss.symmetric)),
      UNMIX_KEY("bank.size", "memory bank capacity K", bank_size, parse_number<int>(v), fmt(c.bank_size)),
      UNMIX_KEY("bank.init", "random | empty", bank_init,
                (v == "random" ? BankInit::Random
                               : v == "empty" ? BankInit::Empty
                                              : throw ValueError("expected random or empty")),
                std::string(c.bank_init == BankInit::Random ? "random" : "empty")),
      UNMIX_KEY("byol.predictor_hidden", "BYOL predictor hidden size", predictor_hidden, parse_number<int>(v),
                fmt(c.predictor_hidden)),
      UNMIX_KEY("optim.name", "adam | sgd", optim.kind,
                (v == "adam" ? OptimizerKind::Adam
                             : v == "sgd" ? OptimizerKind::Sgd : throw ValueError("expected adam or sgd")),
                std::string(c.optim.kind == OptimizerKind::Adam ? "adam" : "sgd")),
      UNMIX_KEY("optim.lr", "base learning rate", optim.lr, parse_number<double>(v), fmt(c.optim.lr)),
      UNMIX_KEY("optim.momentum", "SGD momentum", optim.momentum, parse_number<double>(v), fmt(c.optim.momentum)),
      UNMIX_KEY("optim.weight_decay", "L2 weight decay", optim.weight_decay, parse_number<double>(v),
                fmt(c.optim.weight_decay)),
      UNMIX_KEY("optim.warmup_steps", "linear warm-up length in steps", optim.warmup_steps, parse_number<int>(v),
                fmt(c.optim.warmup_steps)),
      KeyHandler{{"scales", "multi-scale extents, e.g. 32,24 (empty: single scale)"},
                 [](RunConfig& c, const std::string& v) {
                   c.scales.clear();
                   for (const auto& s : split(v, ',')) c.scales.push_back(parse_number<int>(s));
                 },
                 [](const RunConfig& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.scales.size(); ++i) out += (i ? "," : "") + fmt(c.scales[i]);
                   return out;
                 }},
      UNMIX_KEY("data.source", "synthetic | cifar10 | cifar100", data.source, parse_source(v), to_string(c.data.source)),
      UNMIX_KEY("data.dir", "CIFAR directory (default: $UNMIX_DATA_DIR)", data.dir, v, c.data.dir),
      UNMIX_KEY("data.subset", "use the first N training images (0: all)", data.subset, parse_number<int>(v),
                fmt(c.data.subset)),
      UNMIX_KEY("data.test_subset", "use the first N test images (0: all)", data.test_subset, parse_number<int>(v),
                fmt(c.data.test_subset)),
      UNMIX_KEY("data.mean", "per-channel normalization mean", data.norm.mean, parse_floats(v),
                fmt_floats(c.data.norm.mean)),
      UNMIX_KEY("data.std", "per-channel normalization std", data.norm.std, parse_floats(v),
                fmt_floats(c.data.norm.std)),
      UNMIX_KEY("synthetic.classes", "synthetic class count", data.synthetic.num_classes, parse_number<int>(v),
                fmt(c.data.synthetic.num_classes)),
      UNMIX_KEY("synthetic.per_class", "synthetic training images per class", data.synthetic.samples_per_class,
                parse_number<int>(v), fmt(c.data.synthetic.samples_per_class)),
      UNMIX_KEY("synthetic.test_per_class", "synthetic test images per class", data.synthetic_test_per_class,
                parse_number<int>(v), fmt(c.data.synthetic_test_per_class)),
      UNMIX_KEY("synthetic.extent", "synthetic image side length", data.synthetic.extent, parse_number<int>(v),
                fmt(c.data.synthetic.extent)),
      UNMIX_KEY("synthetic.noise", "synthetic pixel noise std in [0,1] units", data.synthetic.noise,
                parse_number<double>(v), fmt(c.data.synthetic.noise)),
      UNMIX_KEY("synthetic.max_frequency", "largest template frequency", data.synthetic.max_frequency,
                parse_number<int>(v), fmt(c.data.synthetic.max_frequency)),
      UNMIX_KEY("synthetic.seed", "template seed", data.synthetic.seed, parse_number<std::uint64_t>(v),
                fmt(c.data.synthetic.seed)),
      UNMIX_KEY("augment.pad", "crop padding in pixels", augment.pad, parse_number<int>(v), fmt(c.augment.pad)),
      UNMIX_KEY("augment.flip_p", "horizontal flip probability", augment.flip_p, parse_number<double>(v),
                fmt(c.augment.flip_p)),
      UNMIX_KEY("augment.gray_p", "grayscale probability", augment.gray_p, parse_number<double>(v),
                fmt(c.augment.gray_p)),
      UNMIX_KEY("augment.jitter_p", "brightness jitter probability", augment.jitter_p, parse_number<double>(v),
                fmt(c.augment.jitter_p)),
      UNMIX_KEY("augment.jitter_strength", "brightness jitter range", augment.jitter_strength,
                parse_number<double>(v), fmt(c.augment.jitter_strength)),
      UNMIX_KEY("eval.knn_k", "kNN monitor neighbours", eval.knn_k, parse_number<int>(v), fmt(c.eval.knn_k)),
      UNMIX_KEY("eval.knn_tau", "kNN monitor temperature", eval.knn_tau, parse_number<double>(v),
                fmt(c.eval.knn_tau)),
      UNMIX_KEY("eval.knn_weighted", "weighted kNN vote", eval.knn_weighted, parse_bool(v),
                fmt(c.eval.knn_weighted)),
      UNMIX_KEY("metrics.wall_ms", "record wall-clock ms per step (breaks byte-identical metrics)", metrics_wall_ms,
                parse_bool(v), fmt(c.metrics_wall_ms)),
  };
  return table;
}

#undef UNMIX_KEY

const KeyHandler* find_handler(const std::string& key) {
  for (const auto& h : handlers())
    if (h.key.name == key) return &h;
  return nullptr;
}

}  // namespace

std::string to_string(DataSource source) {
  switch (source) {
    case DataSource::Synthetic: return "synthetic";
    case DataSource::Cifar10: return "cifar10";
    case DataSource::Cifar100: return "cifar100";
  }
  return "?";
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& h : handlers()) out.push_back(h.key);
    return out;
  }();
  return keys;
}

bool is_config_key(const std::string& key) { return find_handler(key) != nullptr; }

std::vector<ConfigEntry> parse_config_text(const std::string& text) {
  std::vector<ConfigEntry> out;
  std::istringstream is(text);
  std::string line;
  int number = 0;
  while (std::getline(is, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("", "expected 'key = value', got '" + line + "'", number);
    ConfigEntry e{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), number};
    if (!is_config_key(e.key)) throw ConfigError(e.key, "unknown configuration key", number);
    for (const auto& prev : out)
      if (prev.key == e.key)
        throw ConfigError(e.key, "duplicate key (first set on line " + std::to_string(prev.line) + ")", number);
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<ConfigEntry> read_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("", "cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

ConfigEntry parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("", "override '" + text + "' is not key=value");
  ConfigEntry e{trim(text.substr(0, eq)), trim(text.substr(eq + 1)), 0};
  if (!is_config_key(e.key)) throw ConfigError(e.key, "unknown configuration key");
  return e;
}

void apply_entry(RunConfig& cfg, const ConfigEntry& entry) {
  const auto* h = find_handler(entry.key);
  if (!h) throw ConfigError(entry.key, "unknown configuration key", entry.line);
  try {
    h->set(cfg, entry.value);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(entry.key, e.what(), entry.line);
  }
}

RunConfig resolve_config(const std::vector<ConfigEntry>& entries) {
  RunConfig cfg;
  for (const auto& e : entries) apply_entry(cfg, e);
  if (cfg.data.dir.empty())
    if (const char* env = std::getenv("UNMIX_DATA_DIR")) cfg.data.dir = env;
  cfg.validate();
  return cfg;
}

void RunConfig::validate() const {
  auto require = [](bool ok, const char* key, const std::string& message) {
    if (!ok) throw ConfigError(key, message);
  };
  require(epochs >= 1, "epochs", "must be >= 1");
  require(max_steps >= 0, "max_steps", "must be >= 0");
  require(batch_size >= 2, "batch_size", "must be >= 2");
  require(eval_every >= 0, "eval_every", "must be >= 0");
  require(checkpoint_every >= 0, "checkpoint_every", "must be >= 0");
  require(mix.gamma > 0.0, "mix.gamma", "must be > 0");
  require(mix.p_global >= 0.0 && mix.p_global <= 1.0, "mix.p_global", "must lie in [0,1]");
  try {
    encoder.validate();
  } catch (const Error& e) {
    throw ConfigError("encoder", e.what());
  }
  require(encoder_momentum >= 0.0 && encoder_momentum < 1.0, "encoder.momentum", "must lie in [0,1)");
  require(loss.tau > 0.0, "loss.tau", "must be > 0");
  require(bank_size >= 1, "bank.size", "must be >= 1");
  require(predictor_hidden >= 1, "byol.predictor_hidden", "must be >= 1");
  require(optim.lr >= 0.0, "optim.lr", "must be >= 0");
  require(optim.weight_decay >= 0.0, "optim.weight_decay", "must be >= 0");
  require(optim.warmup_steps >= 0, "optim.warmup_steps", "must be >= 0");
  require(loss.mode != LossMode::MixedOnly || mix.enabled, "loss.mode",
          "mixed_only needs mix.enabled = true");
  require(scales.empty() || loss.base == BaseLoss::MoCo, "scales", "multi-scale training needs loss.base = moco");
  for (int s : scales) require(s >= 1, "scales", "extents must be positive");
  require(scales.empty() || loss.mode == LossMode::Combined || loss.mode == LossMode::MixedOnly ||
              loss.mode == LossMode::OriginalOnly,
          "scales", "multi-scale training supports single-branch loss modes only");
  require(data.subset >= 0 && data.test_subset >= 0, "data.subset", "must be >= 0");
  require(data.norm.mean.size() == data.norm.std.size(), "data.std", "needs as many entries as data.mean");
  for (float s : data.norm.std) require(s > 0.0f, "data.std", "entries must be > 0");
  require(data.synthetic.extent >= 8, "synthetic.extent", "must be >= 8");
  require(data.synthetic.num_classes >= 1, "synthetic.classes", "must be >= 1");
  require(data.synthetic.samples_per_class >= 1, "synthetic.per_class", "must be >= 1");
  require(data.synthetic_test_per_class >= 1, "synthetic.test_per_class", "must be >= 1");
  require(augment.pad >= 0, "augment.pad", "must be >= 0");
  require(eval.knn_k >= 1, "eval.knn_k", "must be >= 1");
  require(eval.knn_tau > 0.0, "eval.knn_tau", "must be > 0");
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) {
  const auto* h = find_handler(key);
  if (!h) throw ConfigError(key, "unknown configuration key");
  return h->get(cfg);
}

std::string resolved_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& h : handlers()) out += h.key.name + " = " + h.get(cfg) + "\n";
  return out;
}

std::uint64_t config_hash(const RunConfig& cfg) { return fnv1a64(resolved_text(cfg)); }

}  // namespace unmix
