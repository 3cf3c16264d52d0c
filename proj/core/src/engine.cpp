#include "unmix/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "unmix/error.hpp"
#include "unmix/eval.hpp"
#include "unmix/mixer.hpp"
#include "unmix/ops.hpp"

namespace unmix {

namespace {

int source_extent(const RunConfig& cfg) {
  return cfg.data.source == DataSource::Synthetic ? cfg.data.synthetic.extent : 32;
}

NamedTensors with_prefix(const Checkpoint& ckpt, const std::string& prefix) {
  NamedTensors out;
  for (const auto& t : ckpt.tensors)
    if (t.name.rfind(prefix, 0) == 0) out.push_back({t.name.substr(prefix.size()), t.value});
  return out;
}

void add_prefixed(Checkpoint& ckpt, const std::string& prefix, const NamedTensors& tensors) {
  for (const auto& t : tensors) ckpt.tensors.push_back({prefix + t.name, t.value.clone()});
}

const std::string& meta(const Checkpoint& ckpt, const std::string& key) {
  auto it = ckpt.metadata.find(key);
  if (it == ckpt.metadata.end()) throw FormatError("checkpoint metadata has no '" + key + "' entry");
  return it->second;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

LossReport accumulate(const LossReport& a, const LossReport& b) {
  LossReport r = a;
  r.l_ori += b.l_ori;
  r.l_m_normal += b.l_m_normal;
  r.l_m_reverse += b.l_m_reverse;
  r.total += b.total;
  return r;
}

}  // namespace

double scheduled_lr(const OptimConfig& cfg, std::int64_t step, std::int64_t total_steps) {
  double lr = cfg.lr;
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    lr *= static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  if (total_steps > 0) {
    if (step >= static_cast<std::int64_t>(std::floor(0.95 * static_cast<double>(total_steps)))) lr *= 0.2;
    if (step >= static_cast<std::int64_t>(std::floor(0.975 * static_cast<double>(total_steps)))) lr *= 0.2;
  }
  return lr;
}

Trainer::Trainer(RunConfig cfg, std::shared_ptr<const LabeledDataset> dataset, std::int64_t total_steps)
    : cfg_(std::move(cfg)), dataset_(std::move(dataset)), total_steps_(total_steps) {
  cfg_.validate();
  source_extent_ = dataset_ ? dataset_->images.height : source_extent(cfg_);
  if (dataset_ && dataset_->images.channels != cfg_.encoder.in_channels)
    throw ConfigError("encoder", "dataset has " + std::to_string(dataset_->images.channels) +
                                     " channels but the encoder expects " + std::to_string(cfg_.encoder.in_channels));

  online_ = std::make_unique<Encoder>(cfg_.encoder, derive_seed(cfg_.seed, {tag(Stream::Init), 0}));
  const BaseLoss base = cfg_.loss.base;
  if (base == BaseLoss::MoCo || base == BaseLoss::BYOL) {
    key_ = std::make_unique<Encoder>(online_->clone());
    key_->set_trainable(false);
  }
  if (base == BaseLoss::BYOL)
    predictor_ = std::make_unique<Predictor>(cfg_.encoder.embedding_dim, cfg_.predictor_hidden,
                                             derive_seed(cfg_.seed, {tag(Stream::Init), 1}));

  extents_ = cfg_.scales.empty() ? std::vector<int>{source_extent_} : cfg_.scales;
  for (int e : extents_)
    if (e > source_extent_)
      throw ConfigError("scales", "extent " + std::to_string(e) + " is larger than the source images (" +
                                      std::to_string(source_extent_) + ")");
  if (base == BaseLoss::MoCo) {
    for (int e : extents_) {
      banks_.emplace_back(cfg_.bank_size, cfg_.encoder.embedding_dim, e);
      if (cfg_.bank_init == BankInit::Random) {
        Rng rng = make_rng(cfg_.seed, {tag(Stream::BankInit), static_cast<std::uint64_t>(e)});
        banks_.back().fill_random(rng);
      }
    }
  }

  NamedTensors params = online_->parameters();
  if (predictor_)
    for (auto& p : predictor_->parameters()) params.push_back(p);
  const auto wd = static_cast<float>(cfg_.optim.weight_decay);
  if (cfg_.optim.kind == OptimizerKind::Adam)
    optimizer_ = std::make_unique<Adam>(std::move(params), 0.9f, 0.999f, 1e-8f, wd);
  else
    optimizer_ = std::make_unique<Sgd>(std::move(params), static_cast<float>(cfg_.optim.momentum), wd);
}

std::int64_t Trainer::steps_per_epoch() const {
  if (!dataset_) return 0;
  return dataset_->size() / cfg_.batch_size;
}

std::int64_t Trainer::epoch() const {
  const auto spe = steps_per_epoch();
  return spe > 0 ? step_ / spe : 0;
}

ByteImages Trainer::batch_for_step(std::int64_t step) const {
  if (!dataset_) throw ValueError("trainer has no dataset to sample from");
  const auto spe = steps_per_epoch();
  if (spe == 0)
    throw ConfigError("batch_size", "batch of " + std::to_string(cfg_.batch_size) + " exceeds the " +
                                        std::to_string(dataset_->size()) + "-image training set");
  const auto epoch = static_cast<std::uint64_t>(step / spe);
  const auto index = step % spe;
  std::vector<int> perm(static_cast<std::size_t>(dataset_->size()));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = make_rng(cfg_.seed, {tag(Stream::Shuffle), epoch});
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto begin = perm.begin() + index * cfg_.batch_size;
  std::vector<int> chosen(begin, begin + cfg_.batch_size);
  return dataset_->images.gather(chosen);
}

LossReport Trainer::step() { return train_step(batch_for_step(step_)); }

LossResult Trainer::loss_at_extent(const Tensor& view1, const Tensor& view2, int bank_index) {
  const int extent = extents_[static_cast<std::size_t>(bank_index)];
  LossContext ctx;
  ctx.online = online_.get();
  ctx.target = key_.get();
  ctx.predictor = predictor_.get();
  ctx.bank = banks_.empty() ? nullptr : &banks_[static_cast<std::size_t>(bank_index)];
  ctx.tau = static_cast<float>(cfg_.loss.tau);
  ctx.symmetric = cfg_.loss.symmetric;
  ctx.train = true;

  const BaseLoss base = cfg_.loss.base;
  const LossMode mode = cfg_.loss.mode;
  if (!cfg_.mix.enabled || mode == LossMode::OriginalOnly) return original_loss(view1, view2, base, ctx);

  Rng rng = make_rng(cfg_.seed,
                     {tag(Stream::Mix), static_cast<std::uint64_t>(step_), static_cast<std::uint64_t>(extent)});
  const MixDraw draw = draw_mix(cfg_.mix, static_cast<int>(view1.dim(2)), static_cast<int>(view1.dim(3)), rng);
  const MixedBatch mixed1 = apply_mix(view1, draw);
  if (mode == LossMode::BothBranch) return unmix_loss_both(view1, view2, mixed1, apply_mix(view2, draw), base, ctx);
  return unmix_loss_single(view1, view2, mixed1, base, ctx, mode == LossMode::Combined);
}

void Trainer::enqueue(int bank_index, const std::vector<Tensor>& keys) {
  auto& bank = banks_[static_cast<std::size_t>(bank_index)];
  const KeyTag key_tag{KeySource::Unmixed, extents_[static_cast<std::size_t>(bank_index)], step_};
  for (const auto& k : keys) {
    bank.enqueue(k, key_tag);
    if (observer_) observer_(bank_index, k, key_tag);
  }
}

LossReport Trainer::train_step(const ByteImages& batch) {
  if (batch.count < 2) throw ShapeError("a training batch needs at least 2 images, got " + std::to_string(batch.count));
  if (batch.height != source_extent_ || batch.width != source_extent_)
    throw ShapeError("batch images are " + std::to_string(batch.height) + "x" + std::to_string(batch.width) +
                     ", trainer expects " + std::to_string(source_extent_) + "x" + std::to_string(source_extent_));

  Rng aug = make_rng(cfg_.seed, {tag(Stream::Augment), static_cast<std::uint64_t>(step_)});
  const ByteImages raw1 = augment_batch(batch, aug, cfg_.augment);
  const ByteImages raw2 = augment_batch(batch, aug, cfg_.augment);
  const Tensor view1 = to_tensor(raw1, cfg_.data.norm);
  const Tensor view2 = to_tensor(raw2, cfg_.data.norm);

  optimizer_->zero_grad();
  Tensor objective;
  LossReport report;
  std::vector<std::vector<Tensor>> keys(extents_.size());
  for (std::size_t i = 0; i < extents_.size(); ++i) {
    const int e = extents_[i];
    const Tensor v1 = e == source_extent_ ? view1 : resize_bilinear(view1, e, e);
    const Tensor v2 = e == source_extent_ ? view2 : resize_bilinear(view2, e, e);
    LossResult r;
    try {
      r = loss_at_extent(v1, v2, static_cast<int>(i));
    } catch (const NumericError& e) {
      throw NumericError("non-finite loss at step " + std::to_string(step_) + ": " + e.what());
    }
    objective = i == 0 ? r.objective : add(objective, r.objective);
    report = i == 0 ? r.report : accumulate(report, r.report);
    keys[i] = std::move(r.bank_keys);
  }
  if (!std::isfinite(report.total) || !std::isfinite(objective.item()))
    throw NumericError("non-finite loss at step " + std::to_string(step_) + ": " + report.describe());

  objective.backward();
  optimizer_->step(static_cast<float>(scheduled_lr(cfg_.optim, step_, total_steps_)));
  if (key_) momentum_update(key_->parameters(), online_->parameters(), cfg_.encoder_momentum);
  for (std::size_t i = 0; i < banks_.size(); ++i) enqueue(static_cast<int>(i), keys[i]);
  ++step_;
  return report;
}

Checkpoint Trainer::save() const {
  Checkpoint ckpt;
  add_prefixed(ckpt, "online.", online_->state());
  if (key_) add_prefixed(ckpt, "key.", key_->state());
  if (predictor_) {
    add_prefixed(ckpt, "pred.", predictor_->parameters());
    add_prefixed(ckpt, "pred.", predictor_->buffers());
  }
  add_prefixed(ckpt, "optim.", optimizer_->state());
  for (std::size_t i = 0; i < banks_.size(); ++i) {
    const auto& bank = banks_[i];
    const std::string prefix = "bank" + std::to_string(i) + ".";
    if (bank.empty()) continue;
    ckpt.tensors.push_back({prefix + "keys", bank.keys()});
    std::vector<float> tags;
    for (const auto& t : bank.tags()) {
      tags.push_back(static_cast<float>(t.source));
      tags.push_back(static_cast<float>(t.scale));
      tags.push_back(static_cast<float>(t.step));
    }
    ckpt.tensors.push_back({prefix + "tags", Tensor::from({bank.size(), 3}, std::move(tags))});
  }
  ckpt.metadata["kind"] = "train_state";
  ckpt.metadata["step"] = std::to_string(step_);
  ckpt.metadata["epoch"] = std::to_string(epoch());
  ckpt.metadata["total_steps"] = std::to_string(total_steps_);
  ckpt.metadata["seed"] = std::to_string(cfg_.seed);
  ckpt.metadata["config_hash"] = hex(config_hash(cfg_));
  ckpt.metadata["optim.t"] = std::to_string(optimizer_->steps_taken());
  // Every stream is re-derived from (seed, step), so this is the full rng state.
  ckpt.metadata["rng"] = "derived seed=" + std::to_string(cfg_.seed) + " step=" + std::to_string(step_);
  for (const auto& key : config_keys()) ckpt.metadata["config." + key.name] = get_config_value(cfg_, key.name);
  return ckpt;
}

void Trainer::load(const Checkpoint& ckpt) {
  copy_by_name(with_prefix(ckpt, "online."), online_->state());
  if (key_) copy_by_name(with_prefix(ckpt, "key."), key_->state());
  if (predictor_) {
    NamedTensors dst = predictor_->parameters();
    for (auto& b : predictor_->buffers()) dst.push_back(b);
    copy_by_name(with_prefix(ckpt, "pred."), dst);
  }
  optimizer_->load_state(with_prefix(ckpt, "optim."));
  optimizer_->set_steps_taken(std::stoll(meta(ckpt, "optim.t")));
  for (std::size_t i = 0; i < banks_.size(); ++i) {
    const std::string prefix = "bank" + std::to_string(i) + ".";
    if (!ckpt.contains(prefix + "keys")) {
      banks_[i].clear();
      continue;
    }
    const Tensor& tag_tensor = ckpt.get(prefix + "tags");
    std::vector<KeyTag> tags;
    const auto t = tag_tensor.data();
    for (std::int64_t r = 0; r < tag_tensor.dim(0); ++r)
      tags.push_back({static_cast<KeySource>(static_cast<int>(t[r * 3])), static_cast<int>(t[r * 3 + 1]),
                      static_cast<std::int64_t>(t[r * 3 + 2])});
    banks_[i].restore(ckpt.get(prefix + "keys"), tags);
  }
  step_ = std::stoll(meta(ckpt, "step"));
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  out_.open(path, std::ios::app);
  if (!out_) throw Error("cannot open metrics file '" + path.string() + "'");
  if (fresh) out_ << header() << '\n';
}

const char* MetricsWriter::header() {
  return "step,epoch,l_ori,l_m_normal,l_m_reverse,lambda,mode,total,knn_acc,wall_ms";
}

void MetricsWriter::write(std::int64_t step, std::int64_t epoch, const LossReport& r, std::optional<double> knn_acc,
                          std::optional<double> wall_ms) {
  out_ << step << ',' << epoch << ',' << num(r.l_ori) << ',' << num(r.l_m_normal) << ',' << num(r.l_m_reverse) << ','
       << num(r.lambda) << ',' << (r.mode ? to_string(*r.mode) : "none") << ',' << num(r.total) << ','
       << (knn_acc ? num(*knn_acc) : "") << ',' << (wall_ms ? num(*wall_ms) : "") << '\n';
  out_.flush();
}

void MetricsWriter::write_eval(std::int64_t step, const std::string& protocol, double accuracy) {
  out_ << step << ",,,,,,eval:" << protocol << ",," << num(accuracy) << ",\n";
  out_.flush();
}

Datasets load_datasets(const RunConfig& cfg) {
  Datasets d;
  auto take = [](LabeledDataset set, int n) {
    if (n <= 0 || n >= set.size()) return set;
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    return set.subset(idx);
  };
  if (cfg.data.source == DataSource::Synthetic) {
    SyntheticSpec test = cfg.data.synthetic;
    test.samples_per_class = cfg.data.synthetic_test_per_class;
    d.train = std::make_shared<LabeledDataset>(take(make_synthetic(cfg.data.synthetic, Split::Train), cfg.data.subset));
    d.test = std::make_shared<LabeledDataset>(take(make_synthetic(test, Split::Test), cfg.data.test_subset));
    return d;
  }
  if (cfg.data.dir.empty()) throw ConfigError("data.dir", "no CIFAR directory given and UNMIX_DATA_DIR is unset");
  const auto variant = cfg.data.source == DataSource::Cifar10 ? CifarVariant::C10 : CifarVariant::C100;
  d.train = std::make_shared<LabeledDataset>(take(load_cifar(cfg.data.dir, variant, Split::Train), cfg.data.subset));
  d.test = std::make_shared<LabeledDataset>(take(load_cifar(cfg.data.dir, variant, Split::Test), cfg.data.test_subset));
  return d;
}

std::int64_t planned_steps(const RunConfig& cfg, int train_size) {
  const std::int64_t spe = train_size / cfg.batch_size;
  if (spe == 0)
    throw ConfigError("batch_size", "batch of " + std::to_string(cfg.batch_size) + " exceeds the " +
                                        std::to_string(train_size) + "-image training set");
  std::int64_t total = spe * cfg.epochs;
  if (cfg.max_steps > 0) total = std::min<std::int64_t>(total, cfg.max_steps);
  return total;
}

double evaluate_knn(Encoder& encoder, const LabeledDataset& train, const LabeledDataset& test,
                    const Normalization& norm, int k, double tau, bool weighted) {
  const FeatureIndex index = extract_features(encoder, train, norm);
  const FeatureIndex queries = extract_features(encoder, test, norm);
  return knn_accuracy(index, queries, std::min(k, index.size()), tau, weighted);
}

RunSummary run_training(const RunConfig& cfg, const StepCallback& on_step) {
  namespace fs = std::filesystem;
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  {
    std::ofstream resolved(dir / "config.resolved");
    resolved << resolved_text(cfg);
  }
  const Datasets data = load_datasets(cfg);
  const std::int64_t total = planned_steps(cfg, data.train->size());
  Trainer trainer(cfg, data.train, total);

  const fs::path metrics_path = dir / "metrics.csv";
  fs::remove(metrics_path);
  MetricsWriter metrics(metrics_path);

  RunSummary summary;
  auto save_to = [&](const fs::path& path) {
    fs::create_directories(path.parent_path());
    save_checkpoint(path, trainer.save());
  };
  for (std::int64_t s = 0; s < total; ++s) {
    const auto start = std::chrono::steady_clock::now();
    const std::int64_t epoch = trainer.epoch();
    const LossReport report = trainer.step();
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    const std::int64_t done = trainer.step_count();
    std::optional<double> knn;
    if ((cfg.eval_every > 0 && done % cfg.eval_every == 0) || done == total) {
      knn = evaluate_knn(trainer.online(), *data.train, *data.test, cfg.data.norm, cfg.eval.knn_k, cfg.eval.knn_tau,
                         cfg.eval.knn_weighted);
      summary.final_knn = knn;
    }
    metrics.write(done, epoch, report, knn, cfg.metrics_wall_ms ? std::optional<double>(ms) : std::nullopt);
    summary.reports.push_back(report);
    if (on_step) on_step(done, total, report, knn);
    if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done != total) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%07lld.umx", static_cast<long long>(done));
      save_to(dir / "checkpoints" / name);
    }
  }
  summary.steps = total;
  summary.checkpoint = dir / "checkpoint.umx";
  save_to(summary.checkpoint);
  return summary;
}

RunConfig config_from_checkpoint(const Checkpoint& ckpt) {
  RunConfig cfg;
  bool any = false;
  for (const auto& [key, value] : ckpt.metadata) {
    if (key.rfind("config.", 0) != 0) continue;
    const std::string name = key.substr(7);
    if (!is_config_key(name)) continue;
    apply_entry(cfg, {name, value, 0});
    any = true;
  }
  if (!any) throw FormatError("checkpoint carries no run configuration");
  return cfg;
}

Encoder encoder_from_checkpoint(const Checkpoint& ckpt) {
  const RunConfig cfg = config_from_checkpoint(ckpt);
  Encoder encoder(cfg.encoder, 0);
  copy_by_name(with_prefix(ckpt, "online."), encoder.state());
  return encoder;
}

}  // namespace unmix
