// Copyright 2026 The noisesep authors
// SPDX-License-Identifier: Apache-2.0
#include "noisesep/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "noisesep/checkpoint.hpp"
#include "noisesep/errors.hpp"
#include "noisesep/rng.hpp"

namespace noisesep {
namespace {

// Independent deterministic random streams, keyed off the run seed.
constexpr uint64_t kStreamSample = 1;   // which training item a sub-step uses
constexpr uint64_t kStreamSegment = 2;  // where its segment starts
constexpr uint64_t kStreamPatches = 3;  // contrastive patch draws
constexpr uint64_t kStreamVal = 4;      // validation patch draws

constexpr char kLastFile[] = "last.ckpt";
constexpr char kBestFile[] = "best.ckpt";
constexpr char kLogFile[] = "train_log.csv";

std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double header_double(const Checkpoint& ck, const std::string& key) {
  auto it = ck.header.find(key);
  if (it == ck.header.end()) {
    throw FormatError("checkpoint header is missing key '" + key + "'");
  }
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw FormatError("checkpoint header key '" + key + "' has non-numeric value '" +
                      it->second + "'");
  }
}

int64_t header_i64(const Checkpoint& ck, const std::string& key) {
  auto it = ck.header.find(key);
  if (it == ck.header.end()) {
    throw FormatError("checkpoint header is missing key '" + key + "'");
  }
  try {
    return std::stoll(it->second);
  } catch (const std::exception&) {
    throw FormatError("checkpoint header key '" + key + "' has non-integer value '" +
                      it->second + "'");
  }
}

bool same_config(const SeparatorConfig& a, const SeparatorConfig& b) {
  return a.filters == b.filters && a.kernel == b.kernel && a.stride == b.stride &&
         a.num_speakers == b.num_speakers && a.noise_speaker == b.noise_speaker &&
         a.chunk_size == b.chunk_size && a.blocks == b.blocks &&
         a.block_kind == b.block_kind && a.hidden == b.hidden &&
         a.embed_dim == b.embed_dim;
}

void save_train_checkpoint(const std::string& path, SeparatorModel& model,
                           const TrainState& st) {
  Checkpoint ck = model_checkpoint(model);
  ck.header["train.step"] = std::to_string(st.step);
  ck.header["train.epoch"] = std::to_string(st.epoch);
  ck.header["train.adam_t"] = std::to_string(st.adam_t);
  ck.header["train.lr"] = fmt_g17(st.lr);
  ck.header["train.best_val"] = fmt_g17(st.best_val);
  ck.header["train.best_epoch"] = std::to_string(st.best_epoch);
  ck.header["train.plateau"] = std::to_string(st.plateau);
  std::vector<Parameter*> params = model.parameters();
  for (size_t i = 0; i < params.size(); ++i) {
    ck.records.push_back({"adam.m." + params[i]->name, st.m[i]});
    ck.records.push_back({"adam.v." + params[i]->name, st.v[i]});
  }
  write_checkpoint(path, ck);
}

void restore_train_checkpoint(const std::string& path, SeparatorModel& model,
                              TrainState& st) {
  Checkpoint ck = read_checkpoint(path);
  if (!same_config(config_from_checkpoint(ck), model.config())) {
    throw ConfigError("resume checkpoint '" + path +
                      "' was written for a different model configuration");
  }
  load_model_parameters(model, ck);
  st.step = header_i64(ck, "train.step");
  st.epoch = header_i64(ck, "train.epoch");
  st.adam_t = header_i64(ck, "train.adam_t");
  st.lr = header_double(ck, "train.lr");
  st.best_val = header_double(ck, "train.best_val");
  st.best_epoch = header_i64(ck, "train.best_epoch");
  st.plateau = header_i64(ck, "train.plateau");
  std::vector<Parameter*> params = model.parameters();
  adam_init(st, params);
  auto restore_moment = [&](Tensor& moment, const std::string& record_name) {
    const Tensor* stored = ck.find(record_name);
    if (stored == nullptr) {
      throw FormatError("checkpoint '" + path + "' is missing optimizer state '" +
                        record_name + "'");
    }
    if (!stored->same_shape(moment)) {
      throw ShapeError("optimizer state '" + record_name + "' has shape " +
                       stored->shape_str());
    }
    moment = *stored;
  };
  for (size_t i = 0; i < params.size(); ++i) {
    restore_moment(st.m[i], "adam.m." + params[i]->name);
    restore_moment(st.v[i], "adam.v." + params[i]->name);
  }
}

std::string csv_line(const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%lld,%.10g,%.10g,%.10g,%.10g",
                static_cast<long long>(r.step), static_cast<long long>(r.epoch), r.lr,
                r.total, r.si_snr_term, r.pcl_term);
  return buf;
}

int64_t parse_i64_value(const std::string& key, const std::string& raw) {
  try {
    size_t used = 0;
    int64_t v = std::stoll(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("configuration key '" + key + "' needs an integer, got '" + raw +
                      "'");
  }
}

double parse_f64_value(const std::string& key, const std::string& raw) {
  try {
    size_t used = 0;
    double v = std::stod(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("configuration key '" + key + "' needs a number, got '" + raw +
                      "'");
  }
}

bool parse_bool_value(const std::string& key, const std::string& raw) {
  if (raw == "1" || raw == "true") return true;
  if (raw == "0" || raw == "false") return false;
  throw ConfigError("configuration key '" + key + "' needs 0/1/true/false, got '" +
                    raw + "'");
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("lr0 must be positive");
  if (halving_start_epoch < 0) throw ConfigError("halving_start_epoch must be >= 0");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (!(clip_norm > 0.0) || !std::isfinite(clip_norm)) {
    throw ConfigError("clip_norm must be positive");
  }
  if (!(segment_s > 0.0) || !std::isfinite(segment_s)) {
    throw ConfigError("segment_s must be positive");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!std::isfinite(clamp_db) || clamp_db > 0.0) {
    throw ConfigError("clamp_db must be a finite value <= 0");
  }
  if (speed_perturb) {
    throw ConfigError("speed_perturb is a reserved option and must stay off");
  }
  if (checkpoint_dir.empty()) throw ConfigError("checkpoint_dir must not be empty");
  pcl.validate();
}

void adam_init(TrainState& state, const std::vector<Parameter*>& params) {
  state.m.clear();
  state.v.clear();
  state.m.reserve(params.size());
  state.v.reserve(params.size());
  for (const Parameter* p : params) {
    state.m.push_back(Tensor::zeros(p->value.shape()));
    state.v.push_back(Tensor::zeros(p->value.shape()));
  }
}

void optimizer_step(TrainState& state, const std::vector<Parameter*>& params) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("optimizer_step: moment accumulators do not match the "
                        "parameter list; call adam_init first");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = *params[i];
    if (!p.grad.same_shape(p.value) || !state.m[i].same_shape(p.value)) {
      throw ContractError("optimizer_step: shape mismatch for parameter '" + p.name +
                          "'");
    }
    for (int64_t j = 0; j < p.grad.size(); ++j) {
      if (!std::isfinite(p.grad[j])) {
        throw NumericError("optimizer_step: non-finite gradient in parameter '" +
                           p.name + "' at index " + std::to_string(j));
      }
    }
  }
  ++state.adam_t;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.adam_t));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.adam_t));
  for (size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (int64_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      m[j] = kAdamBeta1 * m[j] + (1.0 - kAdamBeta1) * g;
      v[j] = kAdamBeta2 * v[j] + (1.0 - kAdamBeta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p.value[j] -= state.lr * mhat / (std::sqrt(vhat) + kAdamEps);
    }
  }
}

double clip_gradients(const std::vector<Parameter*>& params, double max_norm) {
  if (!(max_norm > 0.0)) throw ParamError("clip_gradients: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (!std::isfinite(norm)) {
    throw NumericError("clip_gradients: global gradient norm is not finite");
  }
  if (norm > max_norm) {
    const double k = max_norm / norm;
    for (Parameter* p : params) {
      for (auto& g : p->grad.vec()) g *= k;
    }
  }
  return norm;
}

bool lr_schedule_update(TrainState& state, double val_loss, const TrainConfig& cfg) {
  if (!std::isfinite(val_loss)) {
    throw NumericError("lr_schedule_update: validation loss is not finite");
  }
  const bool improved = val_loss < state.best_val;
  if (improved) {
    state.best_val = val_loss;
    state.best_epoch = state.epoch;
    state.plateau = 0;
  } else if (state.epoch >= cfg.halving_start_epoch) {
    ++state.plateau;
    if (state.plateau >= cfg.patience) {
      state.lr *= 0.5;
      state.plateau = 0;
    }
  }
  return improved;
}

SegmentSpan plan_segment(const MixtureItem& item, const TrainConfig& cfg,
                         uint64_t draw) {
  const int64_t total = static_cast<int64_t>(item.mixture.samples.size());
  const int64_t want =
      static_cast<int64_t>(std::llround(cfg.segment_s * item.mixture.sample_rate));
  if (want >= total) return {0, total};
  Rng rng(Rng::mix(Rng::mix(cfg.seed, kStreamSegment), draw));
  const int64_t start =
      static_cast<int64_t>(rng.below(static_cast<uint64_t>(total - want + 1)));
  return {start, want};
}

MixtureItem crop_segment(const MixtureItem& item, const SegmentSpan& span) {
  const int64_t total = static_cast<int64_t>(item.mixture.samples.size());
  if (span.start < 0 || span.len < 1 || span.start + span.len > total) {
    throw ParamError("crop_segment: span [" + std::to_string(span.start) + ", +" +
                     std::to_string(span.len) + ") outside item of " +
                     std::to_string(total) + " samples");
  }
  if (span.start == 0 && span.len == total) return item;
  auto crop = [&](const AudioSignal& s) {
    AudioSignal out;
    out.sample_rate = s.sample_rate;
    out.samples.assign(s.samples.begin() + span.start,
                       s.samples.begin() + span.start + span.len);
    return out;
  };
  MixtureItem seg;
  seg.mixture = crop(item.mixture);
  seg.speakers.reserve(item.speakers.size());
  for (const AudioSignal& sp : item.speakers) seg.speakers.push_back(crop(sp));
  seg.noise = crop(item.noise);
  seg.snr_db = item.snr_db;
  return seg;
}

MixtureItem draw_segment(const MixtureItem& item, const TrainConfig& cfg,
                         uint64_t draw) {
  return crop_segment(item, plan_segment(item, cfg, draw));
}

double validation_loss(SeparatorModel& model, const std::vector<MixtureItem>& items,
                       const TrainConfig& cfg, int64_t epoch) {
  if (items.empty()) throw ParamError("validation_loss: no items");
  double sum = 0.0;
  for (size_t i = 0; i < items.size(); ++i) {
    Graph g;
    Rng rng(Rng::mix(Rng::mix(Rng::mix(cfg.seed, kStreamVal),
                              static_cast<uint64_t>(epoch)),
                     static_cast<uint64_t>(i)));
    LossReport rep = total_loss(g, model, items[i], cfg.pcl, rng, cfg.clamp_db);
    sum += rep.total;
  }
  return sum / static_cast<double>(items.size());
}

TrainResult train(SeparatorModel& model, const std::vector<MixtureItem>& train_items,
                  const std::vector<MixtureItem>& val_items, const TrainConfig& cfg,
                  StepObserver observer, const std::string& resume_path) {
  cfg.validate();
  if (train_items.empty()) throw ParamError("train: no training items");
  if (val_items.empty()) throw ParamError("train: no validation items");

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(cfg.checkpoint_dir, ec);
  if (ec) {
    throw IoError("train: cannot create checkpoint directory '" + cfg.checkpoint_dir +
                  "': " + ec.message());
  }
  const std::string last_path = (fs::path(cfg.checkpoint_dir) / kLastFile).string();
  const std::string best_path = (fs::path(cfg.checkpoint_dir) / kBestFile).string();
  const std::string log_path = (fs::path(cfg.checkpoint_dir) / kLogFile).string();

  std::vector<Parameter*> params = model.parameters();
  TrainState st;
  adam_init(st, params);
  st.lr = cfg.lr0;
  if (!resume_path.empty()) restore_train_checkpoint(resume_path, model, st);

  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw IoError("train: cannot open log file '" + log_path + "'");
  log << "step,epoch,lr,total,si_snr,pcl\n";
  log.flush();

  save_train_checkpoint(last_path, model, st);
  bool wrote_best = false;
  double final_val = std::numeric_limits<double>::quiet_NaN();
  const int64_t steps_per_epoch =
      (static_cast<int64_t>(train_items.size()) + cfg.batch_size - 1) / cfg.batch_size;

  for (int64_t epoch = st.epoch; epoch < cfg.epochs; ++epoch) {
    st.epoch = epoch;
    try {
      for (int64_t s = 0; s < steps_per_epoch; ++s) {
        for (Parameter* p : params) p->zero_grad();
        StepRecord rec;
        rec.step = st.step;
        rec.epoch = epoch;
        rec.lr = st.lr;
        for (int64_t b = 0; b < cfg.batch_size; ++b) {
          const uint64_t draw =
              static_cast<uint64_t>(st.step) * static_cast<uint64_t>(cfg.batch_size) +
              static_cast<uint64_t>(b);
          Rng pick(Rng::mix(Rng::mix(cfg.seed, kStreamSample), draw));
          const size_t idx =
              static_cast<size_t>(pick.below(static_cast<uint64_t>(train_items.size())));
          const SegmentSpan span = plan_segment(train_items[idx], cfg, draw);
          MixtureItem seg = crop_segment(train_items[idx], span);
          Graph g;
          Rng patches(Rng::mix(Rng::mix(cfg.seed, kStreamPatches), draw));
          LossReport rep = total_loss(g, model, seg, cfg.pcl, patches, cfg.clamp_db);
          if (!std::isfinite(rep.total)) {
            throw NumericError("train: non-finite loss");
          }
          if (!rep.pcl_permutation.empty() && rep.pcl_permutation != rep.permutation) {
            throw ContractError(
                "train: the contrastive term used a different speaker assignment "
                "than the separation objective");
          }
          g.backward(rep.loss);
          rec.total += rep.total;
          rec.si_snr_term += rep.si_snr_term;
          rec.pcl_term += rep.pcl_term;
          rec.permutation = rep.permutation;
          rec.pcl_permutation = rep.pcl_permutation;
          rec.item_index = idx;
          rec.segment_start = span.start;
          rec.segment_len = span.len;
        }
        if (cfg.batch_size > 1) {
          const double inv = 1.0 / static_cast<double>(cfg.batch_size);
          for (Parameter* p : params) {
            for (auto& g : p->grad.vec()) g *= inv;
          }
          rec.total *= inv;
          rec.si_snr_term *= inv;
          rec.pcl_term *= inv;
        }
        rec.grad_norm = clip_gradients(params, cfg.clip_norm);
        log << csv_line(rec) << "\n";
        log.flush();
        if (observer) observer(rec);
        optimizer_step(st, params);
        ++st.step;
      }
      final_val = validation_loss(model, val_items, cfg, epoch);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (training aborted at step " +
                         std::to_string(st.step) + "; last-good checkpoint: " +
                         last_path + ")");
    }
    const bool improved = lr_schedule_update(st, final_val, cfg);
    st.epoch = epoch + 1;
    if (improved) {
      save_train_checkpoint(best_path, model, st);
      wrote_best = true;
    }
    save_train_checkpoint(last_path, model, st);
  }

  TrainResult res;
  res.state = st;
  res.log_path = log_path;
  res.last_path = last_path;
  res.best_path = wrote_best || fs::exists(best_path) ? best_path : "";
  res.final_val = final_val;
  res.steps_run = st.step;
  return res;
}

FileConfig parse_train_config_text(const std::string& text) {
  FileConfig fc;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("configuration line " + std::to_string(lineno) +
                        " is not key=value: '" + t + "'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));

    if (key == "epochs") fc.train.epochs = parse_i64_value(key, val);
    else if (key == "lr0") fc.train.lr0 = parse_f64_value(key, val);
    else if (key == "halving_start_epoch")
      fc.train.halving_start_epoch = parse_i64_value(key, val);
    else if (key == "patience") fc.train.patience = parse_i64_value(key, val);
    else if (key == "clip_norm") fc.train.clip_norm = parse_f64_value(key, val);
    else if (key == "segment_s") fc.train.segment_s = parse_f64_value(key, val);
    else if (key == "batch_size") fc.train.batch_size = parse_i64_value(key, val);
    else if (key == "seed")
      fc.train.seed = static_cast<uint64_t>(parse_i64_value(key, val));
    else if (key == "clamp_db") fc.train.clamp_db = parse_f64_value(key, val);
    else if (key == "speed_perturb") fc.train.speed_perturb = parse_bool_value(key, val);
    else if (key == "checkpoint_dir") fc.train.checkpoint_dir = val;
    else if (key == "pcl_negatives") fc.train.pcl.negatives = parse_i64_value(key, val);
    else if (key == "pcl_patch_size")
      fc.train.pcl.patch_size = parse_i64_value(key, val);
    else if (key == "pcl_tau") fc.train.pcl.tau = parse_f64_value(key, val);
    else if (key == "pcl_direction")
      fc.train.pcl.direction = parse_pcl_direction(val);
    else if (key == "pcl_lambda")
      fc.train.pcl.lambda_weight = parse_f64_value(key, val);
    else if (key == "filters") fc.model.filters = parse_i64_value(key, val);
    else if (key == "kernel") fc.model.kernel = parse_i64_value(key, val);
    else if (key == "stride") fc.model.stride = parse_i64_value(key, val);
    else if (key == "num_speakers")
      fc.model.num_speakers = static_cast<int>(parse_i64_value(key, val));
    else if (key == "noise_speaker")
      fc.model.noise_speaker = parse_bool_value(key, val);
    else if (key == "chunk_size") fc.model.chunk_size = parse_i64_value(key, val);
    else if (key == "blocks") fc.model.blocks = parse_i64_value(key, val);
    else if (key == "block_kind") fc.model.block_kind = parse_block_kind(val);
    else if (key == "hidden") fc.model.hidden = parse_i64_value(key, val);
    else if (key == "embed_dim") fc.model.embed_dim = parse_i64_value(key, val);
    else throw ConfigError("unknown configuration key '" + key + "'");
  }
  fc.train.pcl.embed_dim = fc.model.embed_dim;
  fc.model.validate();
  fc.train.validate();
  return fc;
}

FileConfig parse_train_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open configuration file: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_train_config_text(buf.str());
}

std::string render_train_config(const FileConfig& fc) {
  std::ostringstream out;
  out << "# training\n";
  out << "epochs=" << fc.train.epochs << "\n";
  out << "lr0=" << fmt_g17(fc.train.lr0) << "\n";
  out << "halving_start_epoch=" << fc.train.halving_start_epoch << "\n";
  out << "patience=" << fc.train.patience << "\n";
  out << "clip_norm=" << fmt_g17(fc.train.clip_norm) << "\n";
  out << "segment_s=" << fmt_g17(fc.train.segment_s) << "\n";
  out << "batch_size=" << fc.train.batch_size << "\n";
  out << "seed=" << fc.train.seed << "\n";
  out << "clamp_db=" << fmt_g17(fc.train.clamp_db) << "\n";
  out << "speed_perturb=" << (fc.train.speed_perturb ? 1 : 0) << "\n";
  out << "checkpoint_dir=" << fc.train.checkpoint_dir << "\n";
  out << "# contrastive term\n";
  out << "pcl_negatives=" << fc.train.pcl.negatives << "\n";
  out << "pcl_patch_size=" << fc.train.pcl.patch_size << "\n";
  out << "pcl_tau=" << fmt_g17(fc.train.pcl.tau) << "\n";
  out << "pcl_direction=" << pcl_direction_name(fc.train.pcl.direction) << "\n";
  out << "pcl_lambda=" << fmt_g17(fc.train.pcl.lambda_weight) << "\n";
  out << "# model\n";
  out << "filters=" << fc.model.filters << "\n";
  out << "kernel=" << fc.model.kernel << "\n";
  out << "stride=" << fc.model.stride << "\n";
  out << "num_speakers=" << fc.model.num_speakers << "\n";
  out << "noise_speaker=" << (fc.model.noise_speaker ? 1 : 0) << "\n";
  out << "chunk_size=" << fc.model.chunk_size << "\n";
  out << "blocks=" << fc.model.blocks << "\n";
  out << "block_kind=" << block_kind_name(fc.model.block_kind) << "\n";
  out << "hidden=" << fc.model.hidden << "\n";
  out << "embed_dim=" << fc.model.embed_dim << "\n";
  return out.str();
}

}  // namespace noisesep
