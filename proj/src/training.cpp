#include "vmfnet/training.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "vmfnet/evaluate.hpp"
#include "vmfnet/losses.hpp"

namespace vmfnet {

using ordered_json = nlohmann::ordered_json;

std::string LossReport::to_json_line() const {
  ordered_json j{{"iteration", iteration}, {"dice", dice_loss},       {"rec", rec_loss},
                 {"vmf", vmf_loss},        {"total", total},           {"labeled", labeled_count},
                 {"elapsed_s", elapsed_s}};
  return j.dump();
}

std::vector<int> sample_batch_indices(Rng& rng, const Dataset& train, int batch_size) {
  if (train.subjects.empty()) throw EmptyBatchError("sample_batch_indices: training set has no subjects");
  std::vector<int> ids;
  ids.reserve(static_cast<std::size_t>(batch_size));
  for (int b = 0; b < batch_size; ++b) {
    const int s = rng.uniform_int(static_cast<int>(train.subjects.size()));
    const auto& subj = train.subjects[static_cast<std::size_t>(s)];
    const int k = rng.uniform_int(static_cast<int>(subj.sample_indices.size()));
    ids.push_back(subj.sample_indices[static_cast<std::size_t>(k)]);
  }
  return ids;
}

template <typename T>
Tensor<T> image_to_tensor(const Sample& s) {
  Tensor<T> x({1, s.h, s.w});
  for (std::size_t p = 0; p < s.image.size(); ++p) x.data[p] = static_cast<T>(s.image[p]) / T(255);
  return x;
}

template <typename T>
Batch<T> assemble_batch(const Dataset& train, const std::vector<int>& sample_ids, int classes) {
  if (sample_ids.empty()) throw EmptyBatchError("assemble_batch: empty batch");
  const Sample& first = train.samples[static_cast<std::size_t>(sample_ids[0])];
  Batch<T> batch;
  batch.x = Tensor<T>({static_cast<int>(sample_ids.size()), 1, first.h, first.w});
  for (std::size_t i = 0; i < sample_ids.size(); ++i) {
    const Sample& s = train.samples[static_cast<std::size_t>(sample_ids[i])];
    T* dst = batch.x.ptr() + i * static_cast<std::size_t>(first.h) * first.w;
    for (std::size_t p = 0; p < s.image.size(); ++p) dst[p] = static_cast<T>(s.image[p]) / T(255);
    if (s.labeled && s.has_mask()) {
      batch.onehot.push_back(one_hot<T>(s.mask, s.h, s.w, classes + 1));
      batch.labeled.push_back(1);
      ++batch.labeled_count;
    } else {
      batch.onehot.emplace_back();
      batch.labeled.push_back(0);
    }
  }
  return batch;
}

namespace {

template <typename T>
Tensor<T> slice_sample(const Tensor<T>& batch, int i) {
  const int c = batch.shape[1], h = batch.shape[2], w = batch.shape[3];
  Tensor<T> out({c, h, w});
  std::copy_n(batch.ptr() + static_cast<std::size_t>(i) * c * h * w, out.numel(), out.ptr());
  return out;
}

}  // namespace

template <typename T>
LossReport forward_loss(VmfNet<T>& model, const Batch<T>& batch, const TrainConfig& cfg,
                        bool with_grads, Mode mode) {
  if (batch.x.numel() == 0) throw EmptyBatchError("forward_loss: empty batch");
  const int n = batch.x.shape[0];
  const auto& fwd = model.forward(batch.x, mode);

  LossReport rep;
  rep.labeled_count = batch.labeled_count;
  rep.vmf_loss = static_cast<double>(fwd.vmf_loss);

  Tensor<T> gy;
  if (batch.labeled_count > 0) {
    double acc = 0;
    if (with_grads) gy = Tensor<T>(fwd.yhat.shape);
    for (int i = 0; i < n; ++i) {
      if (!batch.labeled[static_cast<std::size_t>(i)]) continue;
      const Tensor<T> pred = slice_sample(fwd.yhat, i);
      const Tensor<T>& truth = batch.onehot[static_cast<std::size_t>(i)];
      acc += static_cast<double>(dice_loss(pred, truth));
      if (with_grads) {
        Tensor<T> gp(pred.shape);
        dice_loss_backward(pred, truth,
                           static_cast<T>(cfg.lambda_dice / batch.labeled_count), gp);
        std::copy_n(gp.ptr(), gp.numel(), gy.ptr() + static_cast<std::size_t>(i) * gp.numel());
      }
    }
    rep.dice_loss = acc / batch.labeled_count;
  }

  rep.rec_loss = static_cast<double>(reconstruction_loss(batch.x, fwd.xhat));
  Tensor<T> gx;
  if (with_grads && cfg.use_rec_loss) {
    gx = Tensor<T>(fwd.xhat.shape);
    reconstruction_loss_backward(batch.x, fwd.xhat, T(1), gx);
  }

  rep.total = (batch.labeled_count > 0 ? cfg.lambda_dice * rep.dice_loss : 0.0) +
              (cfg.use_rec_loss ? rep.rec_loss : 0.0) + (cfg.use_vmf_loss ? rep.vmf_loss : 0.0);

  if (with_grads) model.backward(gy, gx, cfg.use_vmf_loss ? T(1) : T(0));
  return rep;
}

template <typename T>
Trainer<T> Trainer<T>::make(const TrainConfig& cfg) {
  cfg.validate();
  Trainer<T> tr;
  tr.cfg = cfg;
  tr.model = std::make_unique<VmfNet<T>>(cfg.model_config());
  tr.model->init(cfg.seed);
  tr.opt = std::make_unique<Adam<T>>(tr.model->params(), cfg.learning_rate);
  tr.sampler = Rng(Rng::derive(cfg.seed, 0x626174636830));
  return tr;
}

template <typename T>
std::vector<LossReport> run_training(Trainer<T>& tr, const Dataset& train_set,
                                     const std::filesystem::path* out_dir) {
  std::ofstream metrics;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    metrics.open(*out_dir / "metrics.jsonl", tr.iteration == 0 ? std::ios::trunc : std::ios::app);
    if (!metrics) throw IoError("cannot open metrics log in " + out_dir->string());
  }
  std::vector<LossReport> log;
  const auto t0 = std::chrono::steady_clock::now();
  for (long long it = tr.iteration + 1; it <= tr.cfg.iterations; ++it) {
    const auto ids = sample_batch_indices(tr.sampler, train_set, tr.cfg.batch_size);
    auto batch = assemble_batch<T>(train_set, ids, tr.cfg.classes);
    tr.model->zero_grad();
    LossReport rep = forward_loss(*tr.model, batch, tr.cfg, true);
    tr.opt->step();
    tr.iteration = it;
    rep.iteration = it;
    rep.elapsed_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool final_it = it == tr.cfg.iterations;
    if (it == 1 || it % tr.cfg.log_every == 0 || final_it) {
      log.push_back(rep);
      if (out_dir) metrics << rep.to_json_line() << "\n";
    }
    if (out_dir && (it % tr.cfg.checkpoint_every == 0 || final_it)) {
      char name[32];
      std::snprintf(name, sizeof(name), "checkpoint_%06lld.ckpt", it);
      save_trainer(*out_dir / name, tr);
      if (final_it) save_trainer(*out_dir / "final.ckpt", tr);
    }
  }
  return log;
}

template <typename T>
void save_trainer(const std::filesystem::path& path, Trainer<T>& tr) {
  CheckpointData data;
  ordered_json meta;
  meta["kind"] = "vmfnet-trainer";
  meta["precision"] = sizeof(T) == 4 ? "f32" : "f64";
  meta["iteration"] = tr.iteration;
  meta["seed"] = tr.cfg.seed;
  const auto st = tr.sampler.state();
  meta["sampler_state"] = {st[0], st[1], st[2], st[3]};
  meta["adam_iteration"] = tr.opt->iteration();
  meta["config"] = ordered_json::parse(to_json_string(tr.cfg));
  data.metadata = meta.dump();
  for (auto& p : tr.model->params()) data.tensors.push_back(to_record("model." + p.name, *p.value));
  for (auto& s : tr.opt->slots()) {
    data.tensors.push_back(to_record("adam.m." + s.name, *s.m));
    data.tensors.push_back(to_record("adam.v." + s.name, *s.v));
  }
  write_checkpoint(path, data);
}

template <typename T>
Trainer<T> load_trainer(const std::filesystem::path& path) {
  const CheckpointData data = read_checkpoint(path);
  ordered_json meta;
  try {
    meta = ordered_json::parse(data.metadata);
  } catch (const std::exception& e) {
    throw IoError("checkpoint metadata unparsable: " + path.string());
  }
  const std::string want = sizeof(T) == 4 ? "f32" : "f64";
  if (meta.value("precision", "") != want)
    throw IoError("checkpoint precision is " + meta.value("precision", std::string("?")) +
                  ", expected " + want);
  Trainer<T> tr;
  tr.cfg = train_config_from_json(meta["config"].dump());
  tr.model = std::make_unique<VmfNet<T>>(tr.cfg.model_config());
  tr.iteration = meta["iteration"].get<long long>();
  std::array<std::uint64_t, 4> st{};
  for (int i = 0; i < 4; ++i) st[static_cast<std::size_t>(i)] = meta["sampler_state"][i].get<std::uint64_t>();
  tr.sampler = Rng(0);
  tr.sampler.set_state(st);
  for (auto& p : tr.model->params()) {
    const TensorRecord* rec = data.find("model." + p.name);
    if (!rec) throw IoError("checkpoint missing tensor model." + p.name);
    *p.value = from_record<T>(*rec);
  }
  // the effective (projected) bank must sit on the unit sphere
  tr.model->projected_bank().validate_unit_rows(1e-5);
  tr.opt = std::make_unique<Adam<T>>(tr.model->params(), tr.cfg.learning_rate);
  tr.opt->set_iteration(meta.value("adam_iteration", 0LL));
  for (auto& s : tr.opt->slots()) {
    if (const TensorRecord* m = data.find("adam.m." + s.name)) *s.m = from_record<T>(*m);
    if (const TensorRecord* v = data.find("adam.v." + s.name)) *s.v = from_record<T>(*v);
  }
  return tr;
}

std::string checkpoint_precision(const std::filesystem::path& path) {
  const CheckpointData data = read_checkpoint(path);
  try {
    return ordered_json::parse(data.metadata).value("precision", "f32");
  } catch (const std::exception&) {
    throw IoError("checkpoint metadata unparsable: " + path.string());
  }
}

template <typename T>
TrainRun<T> train_on(const TrainConfig& cfg, const Dataset& full,
                     const std::filesystem::path* out_dir) {
  if (cfg.holdout.empty()) throw ConfigError("train: no holdout domain given");
  if (full.domain_ids.size() < 2) throw ConfigError("train: dataset needs at least 2 domains");
  TrainRun<T> run{Trainer<T>::make(cfg), split_dataset(full, cfg.holdout, cfg.labeled_fraction, cfg.seed), {}};
  run.log = run_training(run.trainer, run.split.train, out_dir);
  return run;
}

std::string AblationResult::table() const {
  std::ostringstream os;
  os << "variant\tseed\tdice\thd\n";
  os.setf(std::ios::fixed);
  os.precision(2);
  for (const auto& c : cells) {
    os << c.variant << "\t" << c.seed << "\t" << c.mean_dice << "\t";
    if (c.mean_hd)
      os << *c.mean_hd;
    else
      os << "n/a";
    os << "\n";
  }
  for (const auto& [v, d] : mean_dice_by_variant) os << "mean\t" << v << "\t" << d << "\n";
  return os.str();
}

template <typename T>
AblationResult run_ablation(const TrainConfig& base, const Dataset& full,
                            const std::vector<std::uint64_t>& seeds) {
  struct Variant {
    const char* name;
    bool rec, vmf;
  };
  const Variant variants[] = {
      {"full", true, true}, {"no_rec", false, true}, {"no_vmf", true, false}, {"neither", false, false}};
  AblationResult result;
  for (const auto& v : variants) {
    double acc = 0;
    for (const auto seed : seeds) {
      TrainConfig cfg = base;
      cfg.seed = seed;
      cfg.use_rec_loss = v.rec;
      cfg.use_vmf_loss = v.vmf;
      auto run = train_on<T>(cfg, full, nullptr);
      const MetricReport rep = evaluate_model(*run.trainer.model, run.split.test);
      AblationCell cell;
      cell.variant = v.name;
      cell.seed = seed;
      cell.mean_dice = rep.mean_foreground_dice;
      cell.mean_hd = rep.mean_foreground_hd;
      acc += cell.mean_dice;
      result.cells.push_back(cell);
    }
    result.mean_dice_by_variant.emplace_back(v.name, acc / static_cast<double>(seeds.size()));
  }
  return result;
}

#define VMFNET_INSTANTIATE(T)                                                                   \
  template Tensor<T> image_to_tensor<T>(const Sample&);                                         \
  template Batch<T> assemble_batch<T>(const Dataset&, const std::vector<int>&, int);            \
  template LossReport forward_loss<T>(VmfNet<T>&, const Batch<T>&, const TrainConfig&, bool,    \
                                      Mode);                                                    \
  template struct Trainer<T>;                                                                   \
  template std::vector<LossReport> run_training<T>(Trainer<T>&, const Dataset&,                 \
                                                   const std::filesystem::path*);               \
  template void save_trainer<T>(const std::filesystem::path&, Trainer<T>&);                     \
  template Trainer<T> load_trainer<T>(const std::filesystem::path&);                            \
  template TrainRun<T> train_on<T>(const TrainConfig&, const Dataset&,                          \
                                   const std::filesystem::path*);                               \
  template AblationResult run_ablation<T>(const TrainConfig&, const Dataset&,                   \
                                          const std::vector<std::uint64_t>&);

VMFNET_INSTANTIATE(float)
VMFNET_INSTANTIATE(double)
#undef VMFNET_INSTANTIATE

}  // namespace vmfnet
