// Command-line entry points: generate / train / eval / visualize.
//
// All outputs are written atomically (staged then renamed). Relative output
// paths resolve against $FSVOS_OUTPUT_ROOT when it is set. A --config JSON
// file, when given, overrides command-line flags.

#include <CLI11.hpp>
#include <iostream>

#include "fsvos/data/sampler.hpp"
#include "fsvos/eval/evaluator.hpp"
#include "fsvos/model/fusion.hpp"
#include "fsvos/synth/synth.hpp"
#include "fsvos/train/trainer.hpp"
#include "fsvos/viz/embed.hpp"

using namespace fsvos;

namespace {

fs::path resolve_out(const std::string& path) {
  fs::path p(path);
  if (p.is_absolute()) return p;
  const char* root = std::getenv("FSVOS_OUTPUT_ROOT");
  return root && *root ? fs::path(root) / p : p;
}

nlohmann::json load_config_file(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  return nlohmann::json::parse(read_file_text(path));
}

// "1:2,0:3" -> {(object_class, motion_class)} held-out cells.
std::vector<std::pair<int, int>> parse_cells(const std::string& spec) {
  std::vector<std::pair<int, int>> cells;
  std::string token;
  std::istringstream ss(spec);
  while (std::getline(ss, token, ',')) {
    auto colon = token.find(':');
    if (colon == std::string::npos)
      throw std::runtime_error("bad --holdout-cells entry (want object:motion): " + token);
    cells.push_back({std::stoi(token.substr(0, colon)), std::stoi(token.substr(colon + 1))});
  }
  return cells;
}

data::CellFilter make_cell_filter(const std::string& cells_spec, const std::string& mode) {
  if (cells_spec.empty()) return nullptr;
  auto cells = parse_cells(cells_spec);
  bool keep_held_out = mode == "only";
  return [cells, keep_held_out](int object_class, int motion_class) {
    bool held = false;
    for (auto [o, m] : cells) held |= (o == object_class && m == motion_class);
    return keep_held_out ? held : !held;
  };
}

int parse_fold(const std::string& s) {
  if (s == "none" || s == "-1") return data::kNoTestFold;
  int fold = std::stoi(s);
  if (fold < 0 || fold >= data::kNumFolds) throw std::runtime_error("test fold out of range: " + s);
  return fold;
}

// ---------------------------------------------------------------------------

int cmd_generate(const std::string& out, int motions, int shapes, int clips, int frames, int size,
                 uint64_t seed, int distractors, int clutter, bool overwrite) {
  synth::DatasetConfig cfg;
  cfg.num_motion_classes = motions;
  cfg.num_object_classes = shapes;
  cfg.clips_per_pair = clips;
  cfg.frames = frames;
  cfg.height = cfg.width = size;
  cfg.seed = seed;
  cfg.distractors_per_clip = distractors;
  cfg.clutter_count = clutter;
  cfg.overwrite = overwrite;

  fs::path root = resolve_out(out);
  synth::build_synthetic_dataset(cfg, root);
  auto manifest = nlohmann::json::parse(read_file_text(root / "manifest.json"));
  std::cout << "dataset: " << root.string() << "\n"
            << "clips: " << manifest.size() << " (" << motions << " motions x " << shapes
            << " shapes x " << clips << " per pair)\n"
            << "frames per clip: " << frames << " at " << size << "x" << size << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, out, split = "OS", fold = "0", ablate, holdout_cells,
              holdout_mode = "exclude", config, resume;
  train::TrainConfig tcfg;
  model::ModelConfig mcfg;
};

int cmd_train(TrainArgs& a) {
  nlohmann::json cfg_file = load_config_file(a.config);
  if (cfg_file.contains("train")) a.tcfg = train::TrainConfig::from_json(cfg_file.at("train"));
  if (cfg_file.contains("model")) a.mcfg = model::ModelConfig::from_json(cfg_file.at("model"));
  if (cfg_file.contains("split")) a.split = cfg_file.at("split").get<std::string>();
  if (cfg_file.contains("fold")) a.fold = cfg_file.at("fold").is_number()
                                              ? std::to_string(cfg_file.at("fold").get<int>())
                                              : cfg_file.at("fold").get<std::string>();
  if (cfg_file.contains("ablate")) a.ablate = cfg_file.at("ablate").get<std::string>();

  a.tcfg.split = data::split_strategy_from_name(a.split);
  int test_fold = parse_fold(a.fold);
  a.tcfg.test_fold = test_fold;
  a.mcfg.apply_ablation(a.ablate);

  data::DatasetIndex index = data::load_index(a.data);
  a.mcfg.num_object_classes = index.num_object_classes();
  a.mcfg.num_motion_classes = index.num_motion_classes();
  data::FoldSplit split = data::make_folds(index, a.tcfg.split, a.tcfg.seed);

  data::CellFilter filter = make_cell_filter(a.holdout_cells, a.holdout_mode);
  data::EpisodeSampler sampler(index, split, test_fold, a.tcfg.sampler_config(), filter);

  fs::path out_dir = resolve_out(a.out);
  fs::create_directories(out_dir);
  data::save_split(split, out_dir / "split.json");

  model::DmaNet<float> net(a.mcfg, a.tcfg.seed);
  train::Trainer<float> trainer(net, a.tcfg, sampler, out_dir);
  if (!a.resume.empty()) {
    trainer.resume_from(nn::load_checkpoint<float>(a.resume));
    std::cout << "resumed from " << a.resume << " at episode " << trainer.step() << "\n";
  }

  nlohmann::json extra;
  extra["ablate"] = a.ablate.empty() ? "none" : a.ablate;
  extra["holdout_cells"] = a.holdout_cells;
  extra["holdout_mode"] = a.holdout_mode;
  nlohmann::json folds = nlohmann::json::array();
  for (int f : split.fold_of_class) folds.push_back(f);
  extra["split_assignment"] = folds;

  trainer.run(a.tcfg.episodes, &std::cout);
  trainer.save(out_dir / "model.ckpt", extra);
  std::cout << "checkpoint: " << (out_dir / "model.ckpt").string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string data, checkpoint, out, fold, holdout_cells, holdout_mode = "only", config;
  int episodes = 2000;
  uint64_t seed = 7;
  double empty_rate = 0.2;
  bool oracle_mask = false, oracle_motion = false, never_empty = false;
  int dump_predictions = 0;
  int ways = -1, shots = -1, support_frames = -1, query_frames = -1;
};

int cmd_eval(EvalArgs& a) {
  nlohmann::json cfg_file = load_config_file(a.config);
  if (cfg_file.contains("episodes")) a.episodes = cfg_file.at("episodes").get<int>();
  if (cfg_file.contains("seed")) a.seed = cfg_file.at("seed").get<uint64_t>();
  if (cfg_file.contains("empty_rate")) a.empty_rate = cfg_file.at("empty_rate").get<double>();

  nn::Checkpoint<float> ck = nn::load_checkpoint<float>(a.checkpoint);
  model::ModelConfig mcfg = model::ModelConfig::from_json(ck.config.at("model"));
  train::TrainConfig tcfg = train::TrainConfig::from_json(ck.config.at("train"));

  data::DatasetIndex index = data::load_index(a.data);
  if (mcfg.num_motion_classes != index.num_motion_classes() ||
      mcfg.num_object_classes != index.num_object_classes())
    throw std::runtime_error("checkpoint/dataset mismatch: checkpoint was trained with " +
                             std::to_string(mcfg.num_motion_classes) + " motion / " +
                             std::to_string(mcfg.num_object_classes) +
                             " object classes, dataset has " +
                             std::to_string(index.num_motion_classes()) + " / " +
                             std::to_string(index.num_object_classes()));

  data::FoldSplit split;
  if (ck.config.contains("split_assignment")) {
    split.strategy = tcfg.split;
    split.seed = tcfg.seed;
    for (const auto& f : ck.config.at("split_assignment"))
      split.fold_of_class.push_back(f.get<int>());
    if (split.fold_of_class.size() != size_t(index.num_motion_classes()))
      throw std::runtime_error("checkpoint split does not cover the dataset vocabulary");
  } else {
    split = data::make_folds(index, tcfg.split, tcfg.seed);
  }
  int test_fold = a.fold.empty() ? tcfg.test_fold : parse_fold(a.fold);

  data::SamplerConfig scfg = tcfg.sampler_config();
  scfg.empty_rate = a.empty_rate;
  if (a.ways > 0) scfg.ways = a.ways;
  if (a.shots > 0) scfg.shots = a.shots;
  if (a.support_frames > 0) scfg.support_frames = a.support_frames;
  if (a.query_frames > 0) scfg.query_frames = a.query_frames;
  data::CellFilter filter = make_cell_filter(a.holdout_cells, a.holdout_mode);
  data::EpisodeSampler sampler(index, split, test_fold, scfg, filter);

  model::DmaNet<float> net(mcfg, tcfg.seed);
  auto params = net.params();
  nn::restore(ck, params);

  eval::EvalOptions opt;
  opt.episodes = a.episodes;
  opt.seed = a.seed;
  opt.oracle_mask = a.oracle_mask;
  opt.oracle_motion = a.oracle_motion;
  opt.never_empty = a.never_empty;
  eval::EvalResult result = eval::evaluate(net, sampler, opt);

  std::string table = eval::format_table(result, test_fold);
  std::cout << table;

  if (!a.out.empty()) {
    fs::path out_dir = resolve_out(a.out);
    fs::create_directories(out_dir);
    nlohmann::json j = result.to_json();
    j["fold"] = test_fold;
    j["split"] = data::split_strategy_name(tcfg.split);
    j["seed"] = a.seed;
    j["empty_rate"] = a.empty_rate;
    j["N"] = scfg.ways;
    j["K"] = scfg.shots;
    j["oracle_mask"] = a.oracle_mask;
    j["oracle_motion"] = a.oracle_motion;
    j["never_empty"] = a.never_empty;
    write_file_atomic(out_dir / "metrics.json", j.dump(2));
    write_file_atomic(out_dir / "table.txt", table);

    if (a.dump_predictions > 0) {
      Rng rng = make_rng(derive_seed(a.seed, 0xD0));
      for (int e = 0; e < a.dump_predictions; ++e) {
        Episode ep = sampler.sample_episode(data::Phase::kTest, rng);
        Prediction pred = net.predict_episode(ep);
        eval::dump_prediction<float>(pred, ep,
                                     out_dir / "predictions" / ("episode" + std::to_string(e)));
      }
    }
    std::cout << "wrote " << (out_dir / "metrics.json").string() << "\n";
  }
  return 0;
}

struct VizArgs {
  std::string data, checkpoint, out;
  int clips = 60;
  int frames = 4;
  uint64_t seed = 11;
};

int cmd_visualize(VizArgs& a) {
  nn::Checkpoint<float> ck = nn::load_checkpoint<float>(a.checkpoint);
  model::ModelConfig mcfg = model::ModelConfig::from_json(ck.config.at("model"));
  data::DatasetIndex index = data::load_index(a.data);
  model::DmaNet<float> net(mcfg, 1);
  auto params = net.params();
  nn::restore(ck, params);

  // Support-style prototype dump over a seeded clip sample (first object of
  // each clip, annotated masks).
  std::vector<int> clip_ids(index.clips.size());
  std::iota(clip_ids.begin(), clip_ids.end(), 0);
  Rng rng = make_rng(derive_seed(a.seed, 0x515));
  std::shuffle(clip_ids.begin(), clip_ids.end(), rng);
  if (static_cast<int>(clip_ids.size()) > a.clips) clip_ids.resize(a.clips);

  std::vector<viz::PrototypePoint> points;
  {
    nn::NoGrad ng;
    for (int ci : clip_ids) {
      const data::ClipEntry& entry = index.clips[ci];
      if (entry.objects.empty() || entry.frame_count < a.frames) continue;
      VideoClip clip;
      clip.source_id = entry.id;
      std::vector<Mask> masks;
      int stride = entry.frame_count / a.frames;
      for (int t = 0; t < a.frames; ++t) {
        clip.frames.push_back(data::load_frame(index, ci, t * stride));
        masks.push_back(data::load_object_mask(index, ci, t * stride, entry.objects[0].object_id));
      }
      auto pyr = net.encoder().encode(clip);
      auto mask = model::masks_to_tensor_downsampled<float>(masks, 4);
      auto proto = net.dma().extract(pyr.l1, mask, model::Branch::kSupport);

      viz::PrototypePoint pt;
      pt.clip_id = entry.id;
      pt.object_class = entry.objects[0].category.object_class;
      pt.motion_class = entry.objects[0].category.motion_class;
      auto pooled = nn::mean_rows(proto.refined);
      pt.embedding.assign(pooled.vec().begin(), pooled.vec().end());
      pt.cls.assign(proto.cls.vec().begin(), proto.cls.vec().end());
      points.push_back(std::move(pt));
    }
  }
  std::set<int> motion_labels, object_labels;
  for (const auto& pt : points) {
    motion_labels.insert(pt.motion_class);
    object_labels.insert(pt.object_class);
  }
  if (motion_labels.size() < 2 || object_labels.size() < 2)
    throw std::runtime_error("visualize: need at least 2 motion and 2 object classes in the dump");

  std::vector<std::vector<double>> embeddings;
  std::vector<int> by_motion, by_object;
  for (const auto& pt : points) {
    embeddings.push_back(pt.embedding);
    by_motion.push_back(pt.motion_class);
    by_object.push_back(pt.object_class);
  }
  double sil_motion = viz::silhouette_cosine(embeddings, by_motion);
  double sil_object = viz::silhouette_cosine(embeddings, by_object);
  auto xy = viz::tsne(embeddings, a.seed);

  fs::path out_dir = resolve_out(a.out);
  fs::create_directories(out_dir);

  std::ostringstream scatter;
  scatter << "clip\tobject_class\tmotion_class\tx\ty\n";
  for (size_t i = 0; i < points.size(); ++i)
    scatter << points[i].clip_id << "\t" << points[i].object_class << "\t"
            << points[i].motion_class << "\t" << xy[i][0] << "\t" << xy[i][1] << "\n";
  write_file_atomic(out_dir / "scatter.tsv", scatter.str());

  std::ostringstream protos;
  protos << "clip\tmotion_class\tobject_class\tp_dma_mean\tcls\n";
  for (const auto& pt : points) {
    protos << pt.clip_id << "\t" << pt.motion_class << "\t" << pt.object_class << "\t";
    for (size_t i = 0; i < pt.embedding.size(); ++i)
      protos << (i ? "," : "") << pt.embedding[i];
    protos << "\t";
    for (size_t i = 0; i < pt.cls.size(); ++i) protos << (i ? "," : "") << pt.cls[i];
    protos << "\n";
  }
  write_file_atomic(out_dir / "prototypes.tsv", protos.str());

  nlohmann::json sil = {{"silhouette_motion", sil_motion},
                        {"silhouette_object", sil_object},
                        {"points", points.size()}};
  write_file_atomic(out_dir / "silhouette.json", sil.dump(2));
  png::write(out_dir / "scatter.png", viz::render_scatter(points, xy));

  std::cout << "points: " << points.size() << "\n"
            << "silhouette (motion labels): " << sil_motion << "\n"
            << "silhouette (object labels): " << sil_object << "\n"
            << "wrote " << (out_dir / "scatter.png").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Motion-guided few-shot video object segmentation pipeline"};
  app.require_subcommand(1);

  // generate ----------------------------------------------------------------
  auto* gen = app.add_subcommand("generate", "Build a synthetic shapes-with-motions dataset");
  std::string gen_out;
  int gen_motions = 4, gen_shapes = 3, gen_clips = 5, gen_frames = 8, gen_size = 128;
  int gen_distractors = 1, gen_clutter = 2;
  uint64_t gen_seed = 1;
  bool gen_overwrite = false;
  gen->add_option("--out", gen_out, "Output dataset directory")->required();
  gen->add_option("--motions", gen_motions, "Number of motion classes (>= 4)");
  gen->add_option("--shapes", gen_shapes, "Number of object classes (>= 3)");
  gen->add_option("--clips", gen_clips, "Clips per (shape, motion) pair");
  gen->add_option("--frames", gen_frames, "Frames per clip");
  gen->add_option("--size", gen_size, "Canvas size (square)");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--distractors", gen_distractors, "Moving distractors per clip");
  gen->add_option("--clutter", gen_clutter, "Static clutter shapes per clip");
  gen->add_flag("--overwrite", gen_overwrite, "Replace an existing dataset");

  // train -------------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "Episodic training on a dataset");
  TrainArgs ta;
  tr->add_option("--data", ta.data, "Dataset root")->required();
  tr->add_option("--out", ta.out, "Output directory (checkpoint, logs)")->required();
  tr->add_option("--split", ta.split, "Fold strategy: OS or NS");
  tr->add_option("--test-fold", ta.fold, "Held-out fold 0-3, or 'none'");
  tr->add_option("--n", ta.tcfg.ways, "Ways per episode");
  tr->add_option("--k", ta.tcfg.shots, "Shots per way");
  tr->add_option("--ts", ta.tcfg.support_frames, "Support frames T_s");
  tr->add_option("--tq", ta.tcfg.query_frames, "Query frames T_q");
  tr->add_option("--episodes", ta.tcfg.episodes, "Training episodes");
  tr->add_option("--lr", ta.tcfg.lr, "Base learning rate (cosine-annealed)");
  tr->add_option("--empty-rate", ta.tcfg.empty_rate, "Empty-target episode rate");
  tr->add_option("--seed", ta.tcfg.seed, "Training seed");
  tr->add_option("--log-every", ta.tcfg.log_every, "Episodes between log lines");
  tr->add_option("--d", ta.mcfg.d, "Feature width d");
  tr->add_option("--stem-width", ta.mcfg.stem_width, "Backbone stem width");
  tr->add_option("--queries", ta.mcfg.num_queries, "Learnable queries Q");
  tr->add_option("--layers", ta.mcfg.dma_layers, "Prototype refiner layers L");
  tr->add_option("--fusion-layers", ta.mcfg.fusion_layers, "Prototype attention layers");
  tr->add_option("--heads", ta.mcfg.heads, "Attention heads");
  tr->add_option("--ablate", ta.ablate,
                 "One of: appearance-only, motion-only, no-aux-object, no-aux-motion, "
                 "mask-pool-motion");
  std::string motion_pool;
  tr->add_option("--motion-pool", motion_pool, "Spatial pooling in the motion branch: max or avg");
  tr->add_option("--w-mask-ce", ta.tcfg.weights.mask_ce, "Mask cross-entropy weight");
  tr->add_option("--w-mask-iou", ta.tcfg.weights.mask_iou, "Mask soft-IoU weight");
  tr->add_option("--w-proposal-ce", ta.tcfg.weights.proposal_ce, "Proposal cross-entropy weight");
  tr->add_option("--w-proposal-iou", ta.tcfg.weights.proposal_iou, "Proposal soft-IoU weight");
  tr->add_option("--w-aux-object", ta.tcfg.weights.aux_object_ce, "Object head weight");
  tr->add_option("--w-aux-motion", ta.tcfg.weights.aux_motion_ce, "Motion head weight");
  tr->add_option("--w-match", ta.tcfg.weights.match_ce, "Matching score weight");
  tr->add_option("--holdout-cells", ta.holdout_cells,
                 "Held-out object:motion cells, e.g. '0:1,2:3' (excluded while training)");
  tr->add_option("--holdout-mode", ta.holdout_mode, "exclude (default) or only");
  tr->add_option("--config", ta.config, "JSON config file; overrides flags");
  tr->add_option("--resume", ta.resume, "Checkpoint to resume from");

  // eval ----------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "Episodic evaluation of a checkpoint");
  EvalArgs ea;
  ev->add_option("--data", ea.data, "Dataset root")->required();
  ev->add_option("--checkpoint", ea.checkpoint, "Trained checkpoint")->required();
  ev->add_option("--out", ea.out, "Output directory for metrics.json / table.txt");
  ev->add_option("--episodes", ea.episodes, "Evaluation episodes");
  ev->add_option("--seed", ea.seed, "Evaluation seed");
  ev->add_option("--empty-rate", ea.empty_rate, "Empty-target episode rate at eval");
  ev->add_option("--test-fold", ea.fold, "Override the checkpoint's fold (0-3 or 'none')");
  ev->add_option("--n", ea.ways, "Override ways");
  ev->add_option("--k", ea.shots, "Override shots");
  ev->add_option("--ts", ea.support_frames, "Override support frames");
  ev->add_option("--tq", ea.query_frames, "Override query frames");
  ev->add_flag("--oracle-mask", ea.oracle_mask, "Replace predictions with ground-truth masks");
  ev->add_flag("--oracle-motion", ea.oracle_motion, "Perfect way selection from ground truth");
  ev->add_flag("--never-empty", ea.never_empty, "Degenerate predictor that never flags empty");
  ev->add_option("--dump-predictions", ea.dump_predictions,
                 "Also dump soft masks + scores for this many episodes");
  ev->add_option("--holdout-cells", ea.holdout_cells, "Restrict to these object:motion cells");
  ev->add_option("--holdout-mode", ea.holdout_mode, "only (default) or exclude");
  ev->add_option("--config", ea.config, "JSON config file; overrides flags");

  // visualize ---------------------------------------------------------------
  auto* vz = app.add_subcommand("visualize", "Prototype clustering scatter + silhouettes");
  VizArgs va;
  vz->add_option("--data", va.data, "Dataset root")->required();
  vz->add_option("--checkpoint", va.checkpoint, "Trained checkpoint")->required();
  vz->add_option("--out", va.out, "Output directory")->required();
  vz->add_option("--clips", va.clips, "Number of clips to embed");
  vz->add_option("--frames", va.frames, "Frames per clip");
  vz->add_option("--seed", va.seed, "Sampling / embedding seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (!motion_pool.empty())
      ta.mcfg.motion_pool = motion_pool == "avg" ? model::MotionPool::kAverage
                                                 : model::MotionPool::kMax;
    if (gen->parsed())
      return cmd_generate(gen_out, gen_motions, gen_shapes, gen_clips, gen_frames, gen_size,
                          gen_seed, gen_distractors, gen_clutter, gen_overwrite);
    if (tr->parsed()) return cmd_train(ta);
    if (ev->parsed()) return cmd_eval(ea);
    if (vz->parsed()) return cmd_visualize(va);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
