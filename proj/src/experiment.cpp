#include "fhlr/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "fhlr/confident_learning.hpp"

namespace fhlr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// splitmix64 finalizer; decorrelates the per-stage seeds derived from one trial seed.
std::uint64_t derive_seed(std::uint64_t trial_seed, std::uint64_t stage) {
  std::uint64_t z = trial_seed * 0x9e3779b97f4a7c15ULL + stage * 0xbf58476d1ce4e5b9ULL + 0x94d049bb133111ebULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum Stage : std::uint64_t { corrupt = 1, seed_order, seed_init, acquire, refine_order, panel, fisher, scratch, carve,
                             baseline_order, baseline_init, matrix };

const std::set<std::string> known_methods{"fhlr", "ce", "ls", "mixup", "poly", "bi_tempered", "logit_clip", "focal", "cl"};

LossKind loss_for_method(const std::string& name) {
  if (name == "ce" || name == "cl") return LossKind::ce;
  if (name == "ls") return LossKind::ls;
  if (name == "mixup") return LossKind::mixup;
  if (name == "poly") return LossKind::poly;
  if (name == "bi_tempered") return LossKind::bi_tempered;
  if (name == "logit_clip") return LossKind::logit_clip;
  if (name == "focal") return LossKind::focal;
  fail(ErrorCode::config, "method '" + name + "' has no loss");
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) fail(ErrorCode::config, where + " must be an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) fail(ErrorCode::config, "unknown key '" + key + "' in " + where);
}

// Nested sections accept exactly the keys their own serializer writes.
template <typename T>
T parse_section(const json& j, const std::string& where) {
  const json defaults = T{};
  std::set<std::string> allowed;
  for (const auto& [key, _] : defaults.items()) allowed.insert(key);
  check_keys(j, allowed, where);
  return j.get<T>();
}

class ArtifactWriter {
 public:
  ArtifactWriter(const ExperimentConfig& cfg, int trial) : enabled_(!cfg.output_dir.empty()) {
    if (!enabled_) return;
    dir_ = cfg.output_dir / ("trial_" + std::to_string(trial));
    fs::create_directories(dir_);
    metrics_.open(dir_ / "metrics.jsonl", std::ios::trunc);
  }

  MetricsSink sink() {
    if (!enabled_) return {};
    return [this](const EpochMetrics& m) {
      metrics_ << json(m).dump() << '\n';
      metrics_.flush();
    };
  }

  void write(const std::string& name, const json& j) {
    if (!enabled_) return;
    std::ofstream out(dir_ / name);
    out << j.dump(2) << '\n';
  }

  std::string checkpoint(const std::string& name, const ModelState& state, const json& provenance, bool save) {
    if (!enabled_ || !save) return {};
    const fs::path path = dir_ / name;
    save_checkpoint(path, state, provenance);
    return path.string();
  }

 private:
  bool enabled_;
  fs::path dir_;
  std::ofstream metrics_;
};

ArchitectureSpec arch_for(const ExperimentConfig& cfg, const WindowedDataset& train) {
  ArchitectureSpec arch = cfg.arch;
  arch.input_channels = train.channels();
  arch.input_length = train.window_length();
  arch.num_classes = train.num_classes;
  arch.validate();
  return arch;
}

ExpertSet acquire_labels(const ExperimentConfig& cfg, const ModelState& seed, const WindowedDataset& pool,
                         const Labels& clean, std::uint64_t trial_seed, TrialResult& result, ArtifactWriter& out) {
  ExpertSet expert;
  if (cfg.oracle.mode == OracleMode::live) {
    require(!cfg.oracle.expert_set_file.empty(), ErrorCode::config, "live oracle mode needs oracle.expert_set_file");
    std::ifstream in(cfg.oracle.expert_set_file);
    require(static_cast<bool>(in), ErrorCode::io, "cannot read " + cfg.oracle.expert_set_file.string());
    expert = json::parse(in).get<ExpertSet>();
    expert.validate(pool.num_classes, static_cast<std::size_t>(pool.size()));
    return expert;
  }

  AcquisitionSpec spec = cfg.acquisition;
  spec.rng_seed = derive_seed(trial_seed, acquire) ^ cfg.acquisition.rng_seed;
  expert.indices = select_batch(predict_proba(seed, pool.X, true), spec);
  out.write("selection.json", selection_to_json(expert.indices, spec));

  // Expert labels always come from the clean source.
  if (cfg.oracle.mode == OracleMode::oracle) {
    expert.corrected_labels = oracle_labels(expert.indices, clean);
    expert.source = ExpertSource::oracle;
  } else {
    AnnotatorPanel panel_cfg = cfg.oracle.panel;
    panel_cfg.num_classes = pool.num_classes;
    panel_cfg.rng_seed = derive_seed(trial_seed, panel) ^ cfg.oracle.panel.rng_seed;
    const PanelResult votes = panel_annotate(expert.indices, clean, panel_cfg);
    expert.corrected_labels = votes.aggregated;
    expert.source = ExpertSource::panel;
    for (Index i = 0; i < votes.matrix.items(); ++i) {
      std::vector<int> row(static_cast<std::size_t>(votes.matrix.annotators()));
      for (Index a = 0; a < votes.matrix.annotators(); ++a) row[static_cast<std::size_t>(a)] = votes.matrix.votes(i, a);
      expert.votes.push_back(std::move(row));
    }
    if (votes.matrix.items() > 0 && votes.matrix.annotators() >= 2)
      result.extras["kappa"] = fleiss_kappa(votes.matrix, pool.num_classes);
  }
  Index agree = 0;
  for (std::size_t k = 0; k < expert.size(); ++k) agree += expert.corrected_labels[k] == clean[expert.indices[k]];
  result.extras["expert_label_accuracy"] =
      expert.size() ? static_cast<double>(agree) / static_cast<double>(expert.size()) : 0.0;
  return expert;
}

void run_fhlr_trial(const ExperimentConfig& cfg, const ArchitectureSpec& arch, const WindowedDataset& noisy,
                    const Labels& clean, const WindowedDataset& test, std::uint64_t s, TrialResult& result,
                    ArtifactWriter& out) {
  WindowedDataset pool = noisy;
  Labels pool_clean = clean;
  std::optional<WindowedDataset> validation;
  if (cfg.toggles.merge && cfg.merge.grid_search && !cfg.merge.seed_weight) {
    // A small clean validation carve-out, withheld from every training stage.
    IndexList order(static_cast<std::size_t>(noisy.size()));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(s, carve));
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(cfg.merge.validation_fraction * noisy.size()));
    require(n_val >= 1 && n_val < order.size(), ErrorCode::config, "validation_fraction leaves no validation or pool");
    IndexList val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    IndexList pool_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(pool_idx.begin(), pool_idx.end());
    Labels val_labels, kept_clean;
    for (std::size_t i : val_idx) val_labels.push_back(clean[i]);
    for (std::size_t i : pool_idx) kept_clean.push_back(clean[i]);
    validation = noisy.subset(val_idx).with_labels(std::move(val_labels));
    pool = noisy.subset(pool_idx);
    pool_clean = std::move(kept_clean);
  }

  TrainConfig seed_cfg = cfg.seed_training;
  seed_cfg.rng_seed = derive_seed(s, seed_order);
  seed_cfg.use_ema = cfg.toggles.ema;
  if (!cfg.toggles.ls) seed_cfg.smoothing_alpha = 0.0;
  TrainOptions opts;
  opts.on_epoch = out.sink();
  opts.phase = "seed";
  const ModelState seed = train_seed(arch, pool, seed_cfg, derive_seed(s, seed_init), opts);
  result.stages["seed"] = evaluate(seed, test);
  result.checkpoints["seed"] = out.checkpoint("seed", seed, {{"phase", "seed"}}, cfg.save_checkpoints);
  result.accuracy = result.stages["seed"];
  if (!cfg.toggles.ft) return;

  const ExpertSet expert = acquire_labels(cfg, seed, pool, pool_clean, s, result, out);
  out.write("expert_set.json", expert);
  TrainConfig ft_cfg = seed_cfg;
  ft_cfg.epochs = cfg.refine.epochs;
  ft_cfg.batch_size = cfg.refine.batch_size;
  ft_cfg.rng_seed = derive_seed(s, refine_order);
  opts.phase = "fine_tune";
  const ModelState tuned = fine_tune(seed, expert, pool, cfg.refine.eta, ft_cfg, opts);
  result.stages["fine_tuned"] = evaluate(tuned, test);
  result.checkpoints["fine_tuned"] = out.checkpoint("fine_tuned", tuned, {{"phase", "fine_tune"}}, cfg.save_checkpoints);
  result.accuracy = result.stages["fine_tuned"];

  if (cfg.merge.compare_all) {
    TrainConfig scratch_cfg = cfg.seed_training;
    scratch_cfg.epochs = cfg.refine.epochs;
    scratch_cfg.batch_size = cfg.refine.batch_size;
    scratch_cfg.use_ema = cfg.toggles.ema;
    scratch_cfg.rng_seed = derive_seed(s, scratch);
    const WindowedDataset shots = pool.subset(expert.indices).with_labels(expert.corrected_labels);
    TrainOptions scratch_opts;
    scratch_opts.phase = "scratch";
    scratch_opts.on_epoch = out.sink();
    result.stages["scratch"] = evaluate(train_baseline(arch, shots, scratch_cfg, derive_seed(s, scratch) + 1, scratch_opts), test);
  }
  if (!cfg.toggles.merge) return;

  double w_seed = cfg.merge.seed_weight.value_or(default_seed_weight(cfg.noise.level));
  if (validation) {
    const auto search = search_seed_weight(seed, tuned, *validation);
    w_seed = search.seed_weight;
    result.extras["grid_validation_accuracy"] = search.accuracy;
  }
  result.extras["seed_weight"] = w_seed;
  const MergeSpec spec{{w_seed, 1.0 - w_seed}, cfg.merge.method};
  const std::vector<ModelState> pair{seed, tuned};

  auto weighted = [&] { return evaluate(merge_weighted(pair, {spec.weights, MergeMethod::weighted_average}), test); };
  auto fisher_merged = [&] {
    const Index n = std::min<Index>(cfg.merge.fisher_samples, pool.size());
    const std::vector<FisherVector> fishers{estimate_fisher(seed, pool, n, derive_seed(s, fisher)),
                                            estimate_fisher(tuned, pool, n, derive_seed(s, fisher) + 1)};
    return merge_fisher(pair, fishers, {spec.weights, MergeMethod::fisher});
  };
  auto ensemble = [&] { return accuracy_from_probs(ensemble_predict(pair, test.X), test.y); };

  if (cfg.merge.compare_all) {
    result.stages["merge_weighted"] = weighted();
    result.stages["merge_fisher"] = evaluate(fisher_merged(), test);
    result.stages["ensemble"] = ensemble();
  }

  switch (cfg.merge.method) {
    case MergeMethod::weighted_average: {
      const ModelState merged = merge_weighted(pair, spec);
      result.stages["merged"] = evaluate(merged, test);
      result.checkpoints["merged"] =
          out.checkpoint("merged", merged, merge_provenance(pair, spec), cfg.save_checkpoints);
      break;
    }
    case MergeMethod::fisher: {
      const ModelState merged = fisher_merged();
      result.stages["merged"] = evaluate(merged, test);
      result.checkpoints["merged"] =
          out.checkpoint("merged", merged, merge_provenance(pair, spec), cfg.save_checkpoints);
      break;
    }
    case MergeMethod::ensemble:
      result.stages["merged"] = ensemble();
      break;
  }
  result.accuracy = result.stages["merged"];
}

void run_baseline_trial(const ExperimentConfig& cfg, const ArchitectureSpec& arch, const WindowedDataset& noisy,
                        const Labels& clean, const std::vector<bool>& flipped, const WindowedDataset& test,
                        std::uint64_t s, TrialResult& result, ArtifactWriter& out) {
  TrainConfig bc = cfg.seed_training;
  bc.rng_seed = derive_seed(s, baseline_order);
  bc.use_ema = false;  // baselines are evaluated on their raw parameters
  TrainOptions opts;
  opts.loss = cfg.method.loss;
  opts.loss.kind = loss_for_method(cfg.method.name);
  opts.on_epoch = out.sink();
  opts.phase = cfg.method.name;

  if (!cfg.method.is_cl()) {
    const ModelState model = train_baseline(arch, noisy, bc, derive_seed(s, baseline_init), opts);
    result.accuracy = evaluate(model, test);
    result.stages["baseline"] = result.accuracy;
    result.checkpoints["baseline"] = out.checkpoint("baseline", model, {{"method", cfg.method.name}}, cfg.save_checkpoints);
    return;
  }

  const OofResult oof = oof_probabilities(noisy, cfg.method.cl_folds, arch, bc, derive_seed(s, baseline_init));
  const ConfidentJoint joint = estimate_joint(oof.probs, noisy.y);
  result.extras["joint_off_diagonal"] = joint.off_diagonal_fraction();
  opts.phase = "cl_retrain";
  ModelState model;
  if (cfg.method.cl_correct_budget > 0) {
    const Correction fix = correct_labels(joint, oof.probs, noisy.y, clean,
                                          static_cast<std::size_t>(cfg.method.cl_correct_budget));
    result.extras["corrected"] = static_cast<double>(fix.corrected.size());
    out.write("cl_joint.json", joint_to_json(joint, fix.corrected));
    model = train_baseline(arch, noisy.with_labels(fix.labels), bc, derive_seed(s, baseline_init) + 99, opts);
  } else {
    const IndexList pruned = select_prune(joint, oof.probs, noisy.y);
    std::size_t truly = 0;
    for (std::size_t i : pruned) truly += flipped[i];
    result.extras["pruned"] = static_cast<double>(pruned.size());
    result.extras["pruning_precision"] = pruned.empty() ? 1.0 : static_cast<double>(truly) / pruned.size();
    out.write("cl_joint.json", joint_to_json(joint, pruned));
    model = prune_and_retrain(noisy, joint, oof.probs, arch, bc, derive_seed(s, baseline_init) + 99).model;
  }
  result.accuracy = evaluate(model, test);
  result.stages["baseline"] = result.accuracy;
}

double population_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace

void ComponentToggles::validate() const {
  require(!merge || ft, ErrorCode::config, "merge requires ft");
}

void ExperimentConfig::validate() const {
  require(trials >= 1, ErrorCode::config, "trials must be >= 1");
  require(dataset.synthetic.has_value() != !dataset.canonical_dir.empty(), ErrorCode::config,
          "dataset needs exactly one of synthetic or canonical");
  if (dataset.synthetic) dataset.synthetic->validate();
  require(known_methods.count(method.name) > 0, ErrorCode::config, "unknown method '" + method.name + "'");
  toggles.validate();
  seed_training.validate();
  acquisition.validate();
  method.loss.validate();
  require(method.cl_folds >= 2, ErrorCode::config, "cl_folds must be >= 2");
  require(method.cl_correct_budget >= 0, ErrorCode::config, "cl_correct_budget must be >= 0");
  require(refine.eta > 0.0 && std::isfinite(refine.eta), ErrorCode::config, "refine.eta must be positive");
  require(refine.epochs >= 1 && refine.batch_size >= 1, ErrorCode::config, "refine epochs and batch_size must be >= 1");
  if (merge.seed_weight)
    require(*merge.seed_weight >= 0.0 && *merge.seed_weight <= 1.0, ErrorCode::config, "merge.seed_weight must lie in [0, 1]");
  require(merge.validation_fraction > 0.0 && merge.validation_fraction < 1.0, ErrorCode::config,
          "merge.validation_fraction must lie in (0, 1)");
  require(merge.fisher_samples >= 1, ErrorCode::config, "merge.fisher_samples must be >= 1");
  if (oracle.mode == OracleMode::panel) {
    AnnotatorPanel p = oracle.panel;
    p.num_classes = std::max(p.num_classes, 2);
    p.validate();
  }
  NoiseSpec n = noise;
  n.num_classes = std::max(n.num_classes, 2);
  n.validate();
}

std::vector<double> RunReport::accuracies() const {
  std::vector<double> out;
  for (const auto& t : trials) out.push_back(t.accuracy);
  return out;
}

std::pair<double, double> RunReport::stage_summary(const std::string& stage) const {
  std::vector<double> v;
  for (const auto& t : trials) {
    if (stage.empty()) v.push_back(t.accuracy);
    else if (auto it = t.stages.find(stage); it != t.stages.end()) v.push_back(it->second);
  }
  if (v.empty()) return {std::nan(""), std::nan("")};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  return {mean, population_std(v, mean)};
}

void RunReport::summarize() { std::tie(mean, std) = stage_summary(); }

std::pair<WindowedDataset, WindowedDataset> load_experiment_data(const DatasetSource& source) {
  WindowedDataset train, test;
  if (source.synthetic) {
    std::tie(train, test) = make_synthetic(*source.synthetic);
  } else {
    train = load_canonical(source.canonical_dir, source.train_split);
    test = load_canonical(source.canonical_dir, source.test_split);
  }
  require(train.channels() == test.channels() && train.window_length() == test.window_length() &&
              train.num_classes == test.num_classes,
          ErrorCode::shape_mismatch, "train and test splits disagree in shape");
  const VectorXd means = fit_channel_means(train.X);
  subtract_channel_means(train.X, means);
  subtract_channel_means(test.X, means);
  return {std::move(train), std::move(test)};
}

double accuracy_from_probs(const MatrixXd& probs, const Labels& labels) {
  require(probs.rows() > 0, ErrorCode::invalid_input, "empty test set");
  require(probs.rows() == static_cast<Index>(labels.size()), ErrorCode::shape_mismatch, "predictions and labels differ");
  const Labels pred = argmax_rows(probs);
  Index hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double evaluate(const ModelState& state, const WindowedDataset& test) {
  require(test.size() > 0, ErrorCode::invalid_input, "empty test set");
  require(test.channels() == state.arch.input_channels && test.window_length() == state.arch.input_length,
          ErrorCode::shape_mismatch, "test windows do not match the architecture");
  const Labels pred = argmax_rows(forward(state, test.X, true));
  Index hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == test.y[i];
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

RunReport run_pipeline(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto [train, test] = load_experiment_data(cfg.dataset);
  return run_pipeline(cfg, train, test);
}

RunReport run_pipeline(const ExperimentConfig& cfg, const WindowedDataset& train, const WindowedDataset& test) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const ArchitectureSpec arch = arch_for(cfg, train);
  RunReport report;
  report.method = cfg.method.name;
  report.config_checksum = config_checksum(json(cfg));
  if (!cfg.output_dir.empty()) {
    fs::create_directories(cfg.output_dir);
    std::ofstream(cfg.output_dir / "config.json") << json(cfg).dump(2) << '\n';
  }

  for (int t = 0; t < cfg.trials; ++t) {
    const std::uint64_t s = cfg.base_seed + static_cast<std::uint64_t>(t);
    TrialResult result;
    result.trial = t;
    try {
      ArtifactWriter out(cfg, t);
      // The corruption depends only on (noise spec, trial seed), so every method sees the same mask.
      NoiseSpec noise = cfg.noise;
      noise.num_classes = train.num_classes;
      noise.rng_seed = derive_seed(s, matrix) ^ cfg.noise.rng_seed;
      const NoiseMatrix q = build_noise_matrix(noise);
      const CorruptionRecord record = corrupt_labels(train.y, q, derive_seed(s, corrupt) ^ cfg.noise.rng_seed);
      result.extras["empirical_noise"] = record.empirical_level();
      out.write("noise_matrix.json", q);
      out.write("corruption.json", record);
      const WindowedDataset noisy = train.with_labels(record.noisy_labels);

      if (cfg.method.is_fhlr())
        run_fhlr_trial(cfg, arch, noisy, train.y, test, s, result, out);
      else
        run_baseline_trial(cfg, arch, noisy, train.y, record.flipped_mask, test, s, result, out);
      report.trials.push_back(std::move(result));
    } catch (const Error& e) {
      report.errors.push_back({t, std::string(to_string(e.code())), e.detail()});
    } catch (const std::exception& e) {
      report.errors.push_back({t, "internal", e.what()});
    }
  }
  report.summarize();
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!cfg.output_dir.empty()) std::ofstream(cfg.output_dir / "report.json") << json(report).dump(2) << '\n';
  return report;
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

std::vector<AblationRow> ablation_rows() {
  return {
      {{true, false, false, false}, "seed"},
      {{true, true, false, false}, "seed"},
      {{true, false, true, false}, "fine_tuned"},
      {{true, true, true, false}, "fine_tuned"},
      {{true, false, true, true}, "merged"},
      {{true, true, true, true}, "merged"},
  };
}

namespace {

std::string fmt_level(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::pair<double, double> percent(std::pair<double, double> v) { return {100.0 * v.first, 100.0 * v.second}; }

ExperimentConfig cell_config(const ExperimentConfig& base, const std::string& method, const fs::path& subdir) {
  ExperimentConfig c = base;
  c.method.name = method;
  if (method != "fhlr") c.method.loss.kind = loss_for_method(method);
  if (!base.output_dir.empty()) c.output_dir = base.output_dir / subdir;
  return c;
}

std::string toggle_label(const ComponentToggles& t) {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += "+";
    s += name;
  };
  add(t.ls, "LS");
  add(t.ema, "EMA");
  add(t.ft, "FT");
  add(t.merge, "Merge");
  return s;
}

}  // namespace

PresetBundle run_preset(PresetName name, const ExperimentConfig& base, const PresetOptions& options) {
  base.validate();
  const auto [train, test] = load_experiment_data(base.dataset);
  PresetBundle bundle{name, {}, {}};
  ComparisonTable& table = bundle.table;
  table.title = std::string(to_string(name));

  auto run_cell = [&](ExperimentConfig c, const std::string& label) {
    RunReport r = run_pipeline(c, train, test);
    r.label = label;
    bundle.reports.push_back(r);
    return r;
  };

  switch (name) {
    case PresetName::noise_sweep:
    case PresetName::asymmetric: {
      std::vector<double> levels = name == PresetName::noise_sweep ? std::vector<double>{0.0, 0.2, 0.4, 0.6}
                                                                   : std::vector<double>{0.4};
      for (double l : levels) table.columns.push_back((name == PresetName::asymmetric ? "asym n_l=" : "n_l=") + fmt_level(l));
      for (const auto& m : options.methods) {
        table.rows.push_back(m);
        auto& row = table.cells.emplace_back();
        for (std::size_t k = 0; k < levels.size(); ++k) {
          ExperimentConfig c = cell_config(base, m, fs::path(m) / ("nl_" + fmt_level(levels[k])));
          c.noise.level = levels[k];
          if (name == PresetName::asymmetric) c.noise.mode = NoiseMode::asymmetric;
          row.push_back(percent(run_cell(c, m + " " + table.columns[k]).stage_summary()));
        }
      }
      break;
    }
    case PresetName::acquisition_ablation: {
      table.columns = {"accuracy"};
      for (auto s : {AcquisitionStrategy::stratified, AcquisitionStrategy::entropy, AcquisitionStrategy::smallest_margin,
                     AcquisitionStrategy::largest_margin, AcquisitionStrategy::least_confidence}) {
        const std::string label(to_string(s));
        ExperimentConfig c = cell_config(base, "fhlr", label);
        c.acquisition.strategy = s;
        table.rows.push_back(label);
        table.cells.push_back({percent(run_cell(c, label).stage_summary())});
      }
      break;
    }
    case PresetName::merge_comparison: {
      ExperimentConfig c = cell_config(base, "fhlr", "fhlr");
      c.toggles = {};
      c.merge.compare_all = true;
      const RunReport r = run_cell(c, "merge_comparison");
      table.columns = {"accuracy"};
      for (const auto& [row, stage] : std::vector<std::pair<std::string, std::string>>{
               {"seed", "seed"}, {"fine_tuned", "fine_tuned"}, {"scratch", "scratch"},
               {"ensemble", "ensemble"}, {"fisher", "merge_fisher"}, {"weighted_average", "merge_weighted"}}) {
        table.rows.push_back(row);
        table.cells.push_back({percent(r.stage_summary(stage))});
      }
      break;
    }
    case PresetName::shot_scaling: {
      for (Index b : options.shot_grid) table.columns.push_back(std::to_string(b) + " shots");
      table.rows = {"fhlr", "cl_correct"};
      table.cells.resize(2);
      for (Index b : options.shot_grid) {
        ExperimentConfig f = cell_config(base, "fhlr", fs::path("fhlr") / std::to_string(b));
        f.acquisition.budget = b;
        table.cells[0].push_back(percent(run_cell(f, "fhlr " + std::to_string(b)).stage_summary()));
        ExperimentConfig cl = cell_config(base, "cl", fs::path("cl_correct") / std::to_string(b));
        cl.method.cl_correct_budget = b;
        table.cells[1].push_back(percent(run_cell(cl, "cl_correct " + std::to_string(b)).stage_summary()));
      }
      break;
    }
    case PresetName::component_ablation: {
      // Two runs (EMA off / on) realize all six rows through their per-stage accuracies.
      std::map<bool, RunReport> by_ema;
      for (bool ema : {false, true}) {
        ExperimentConfig c = cell_config(base, "fhlr", ema ? "ema_on" : "ema_off");
        c.toggles = {true, ema, true, true};
        by_ema[ema] = run_cell(c, ema ? "LS+EMA+FT+Merge" : "LS+FT+Merge");
      }
      table.columns = {"accuracy"};
      for (const auto& row : ablation_rows()) {
        table.rows.push_back(toggle_label(row.toggles));
        table.cells.push_back({percent(by_ema[row.toggles.ema].stage_summary(row.stage))});
      }
      break;
    }
    case PresetName::annotator_panel: {
      table.columns = {"accuracy"};
      table.extra_columns = {"kappa"};
      for (double d : {0.1, 0.2}) {
        ExperimentConfig c = cell_config(base, "fhlr", "d_" + fmt_level(d));
        c.oracle.mode = OracleMode::panel;
        c.oracle.panel.disagreement_rate = d;
        const RunReport r = run_cell(c, "d=" + fmt_level(d));
        table.rows.push_back("d=" + fmt_level(d));
        table.cells.push_back({percent(r.stage_summary())});
        double kappa = 0.0;
        int n = 0;
        for (const auto& t : r.trials)
          if (auto it = t.extras.find("kappa"); it != t.extras.end()) kappa += it->second, ++n;
        table.extra_values.push_back({n ? 100.0 * kappa / n : std::nan("")});
      }
      break;
    }
  }
  if (!base.output_dir.empty()) write_bundle(base.output_dir, bundle);
  return bundle;
}

std::string_view to_string(PresetName p) {
  switch (p) {
    case PresetName::noise_sweep: return "noise_sweep";
    case PresetName::asymmetric: return "asymmetric";
    case PresetName::acquisition_ablation: return "acquisition_ablation";
    case PresetName::merge_comparison: return "merge_comparison";
    case PresetName::shot_scaling: return "shot_scaling";
    case PresetName::component_ablation: return "component_ablation";
    case PresetName::annotator_panel: return "annotator_panel";
  }
  return "noise_sweep";
}

PresetName preset_from_string(const std::string& s) {
  for (auto p : {PresetName::noise_sweep, PresetName::asymmetric, PresetName::acquisition_ablation,
                 PresetName::merge_comparison, PresetName::shot_scaling, PresetName::component_ablation,
                 PresetName::annotator_panel})
    if (to_string(p) == s) return p;
  fail(ErrorCode::config, "unknown preset '" + s + "'");
}

std::string config_checksum(const json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

void to_json(json& j, const ExperimentConfig& c) {
  json dataset;
  if (c.dataset.synthetic) dataset["synthetic"] = *c.dataset.synthetic;
  else dataset = {{"canonical", c.dataset.canonical_dir.string()}};
  dataset["train_split"] = c.dataset.train_split;
  dataset["test_split"] = c.dataset.test_split;
  const std::string mode = c.oracle.mode == OracleMode::oracle ? "oracle" : c.oracle.mode == OracleMode::panel ? "panel" : "live";
  j = {{"dataset", dataset},
       {"noise", c.noise},
       {"architecture", c.arch},
       {"seed_training", c.seed_training},
       {"method", {{"name", c.method.name}, {"loss", c.method.loss}, {"cl_folds", c.method.cl_folds},
                   {"cl_correct_budget", c.method.cl_correct_budget}}},
       {"acquisition", c.acquisition},
       {"oracle", {{"mode", mode}, {"panel", c.oracle.panel}, {"expert_set_file", c.oracle.expert_set_file.string()}}},
       {"refine", {{"eta", c.refine.eta}, {"epochs", c.refine.epochs}, {"batch_size", c.refine.batch_size}}},
       {"merge", {{"method", std::string(to_string(c.merge.method))},
                  {"seed_weight", c.merge.seed_weight ? json(*c.merge.seed_weight) : json(nullptr)},
                  {"grid_search", c.merge.grid_search},
                  {"validation_fraction", c.merge.validation_fraction},
                  {"fisher_samples", c.merge.fisher_samples},
                  {"compare_all", c.merge.compare_all}}},
       {"toggles", {{"ls", c.toggles.ls}, {"ema", c.toggles.ema}, {"ft", c.toggles.ft}, {"merge", c.toggles.merge}}},
       {"trials", c.trials},
       {"base_seed", c.base_seed},
       {"output_dir", c.output_dir.string()},
       {"save_checkpoints", c.save_checkpoints}};
}

void from_json(const json& j, ExperimentConfig& c) {
  try {
    check_keys(j, {"dataset", "noise", "architecture", "seed_training", "method", "acquisition", "oracle", "refine",
                   "merge", "toggles", "trials", "base_seed", "output_dir", "save_checkpoints"},
               "config");
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      check_keys(d, {"synthetic", "canonical", "train_split", "test_split"}, "dataset");
      if (d.contains("synthetic")) c.dataset.synthetic = parse_section<SyntheticSpec>(d.at("synthetic"), "dataset.synthetic");
      if (d.contains("canonical")) c.dataset.canonical_dir = d.at("canonical").get<std::string>();
      c.dataset.train_split = d.value("train_split", c.dataset.train_split);
      c.dataset.test_split = d.value("test_split", c.dataset.test_split);
    }
    if (j.contains("noise")) c.noise = parse_section<NoiseSpec>(j.at("noise"), "noise");
    if (j.contains("architecture")) c.arch = parse_section<ArchitectureSpec>(j.at("architecture"), "architecture");
    if (j.contains("seed_training")) c.seed_training = parse_section<TrainConfig>(j.at("seed_training"), "seed_training");
    if (j.contains("method")) {
      const json& m = j.at("method");
      if (m.is_string()) {
        c.method.name = m.get<std::string>();
      } else {
        check_keys(m, {"name", "loss", "cl_folds", "cl_correct_budget"}, "method");
        c.method.name = m.value("name", c.method.name);
        if (m.contains("loss")) c.method.loss = parse_section<LossSpec>(m.at("loss"), "method.loss");
        c.method.cl_folds = m.value("cl_folds", c.method.cl_folds);
        c.method.cl_correct_budget = m.value("cl_correct_budget", c.method.cl_correct_budget);
      }
      if (known_methods.count(c.method.name) && c.method.name != "fhlr") c.method.loss.kind = loss_for_method(c.method.name);
    }
    if (j.contains("acquisition")) c.acquisition = parse_section<AcquisitionSpec>(j.at("acquisition"), "acquisition");
    if (j.contains("oracle")) {
      const json& o = j.at("oracle");
      check_keys(o, {"mode", "panel", "expert_set_file"}, "oracle");
      const std::string mode = o.value("mode", std::string("oracle"));
      if (mode == "oracle") c.oracle.mode = OracleMode::oracle;
      else if (mode == "panel") c.oracle.mode = OracleMode::panel;
      else if (mode == "live") c.oracle.mode = OracleMode::live;
      else fail(ErrorCode::config, "unknown oracle mode '" + mode + "'");
      if (o.contains("panel")) c.oracle.panel = parse_section<AnnotatorPanel>(o.at("panel"), "oracle.panel");
      c.oracle.expert_set_file = o.value("expert_set_file", std::string());
    }
    if (j.contains("refine")) {
      const json& r = j.at("refine");
      check_keys(r, {"eta", "epochs", "batch_size"}, "refine");
      c.refine.eta = r.value("eta", c.refine.eta);
      c.refine.epochs = r.value("epochs", c.refine.epochs);
      c.refine.batch_size = r.value("batch_size", c.refine.batch_size);
    }
    if (j.contains("merge")) {
      const json& m = j.at("merge");
      check_keys(m, {"method", "seed_weight", "grid_search", "validation_fraction", "fisher_samples", "compare_all"},
                 "merge");
      if (m.contains("method")) {
        MergeSpec tmp;
        from_json(json{{"method", m.at("method")}}, tmp);
        c.merge.method = tmp.method;
      }
      if (m.contains("seed_weight") && !m.at("seed_weight").is_null()) c.merge.seed_weight = m.at("seed_weight").get<double>();
      c.merge.grid_search = m.value("grid_search", c.merge.grid_search);
      c.merge.validation_fraction = m.value("validation_fraction", c.merge.validation_fraction);
      c.merge.fisher_samples = m.value("fisher_samples", c.merge.fisher_samples);
      c.merge.compare_all = m.value("compare_all", c.merge.compare_all);
    }
    if (j.contains("toggles")) {
      const json& t = j.at("toggles");
      check_keys(t, {"ls", "ema", "ft", "merge"}, "toggles");
      c.toggles.ls = t.value("ls", c.toggles.ls);
      c.toggles.ema = t.value("ema", c.toggles.ema);
      c.toggles.ft = t.value("ft", c.toggles.ft);
      c.toggles.merge = t.value("merge", c.toggles.merge);
    }
    c.trials = j.value("trials", c.trials);
    c.base_seed = j.value("base_seed", c.base_seed);
    c.output_dir = j.value("output_dir", std::string());
    c.save_checkpoints = j.value("save_checkpoints", c.save_checkpoints);
  } catch (const json::exception& e) {
    fail(ErrorCode::config, e.what());
  }
}

void to_json(json& j, const RunReport& r) {
  json trials = json::array();
  for (const auto& t : r.trials)
    trials.push_back({{"trial", t.trial}, {"accuracy", t.accuracy}, {"stages", t.stages}, {"extras", t.extras},
                      {"checkpoints", t.checkpoints}});
  json errors = json::array();
  for (const auto& e : r.errors) errors.push_back({{"trial", e.trial}, {"error", e.code}, {"detail", e.detail}});
  j = {{"label", r.label},
       {"method", r.method},
       {"trials", trials},
       {"errors", errors},
       {"mean", r.mean},
       {"std", r.std},
       {"config_checksum", r.config_checksum},
       {"wall_clock_seconds", r.wall_clock_seconds}};
}

void from_json(const json& j, RunReport& r) {
  r.label = j.value("label", std::string());
  r.method = j.value("method", std::string());
  r.trials.clear();
  for (const auto& t : j.at("trials")) {
    TrialResult tr;
    tr.trial = t.at("trial").get<int>();
    tr.accuracy = t.at("accuracy").get<double>();
    tr.stages = t.value("stages", tr.stages);
    tr.extras = t.value("extras", tr.extras);
    tr.checkpoints = t.value("checkpoints", tr.checkpoints);
    r.trials.push_back(std::move(tr));
  }
  r.errors.clear();
  for (const auto& e : j.value("errors", json::array()))
    r.errors.push_back({e.at("trial").get<int>(), e.at("error").get<std::string>(), e.at("detail").get<std::string>()});
  r.mean = j.value("mean", 0.0);
  r.std = j.value("std", 0.0);
  r.config_checksum = j.value("config_checksum", std::string());
  r.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
}

}  // namespace fhlr
