#include "protoconcepts/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "protoconcepts/checkpoint.hpp"
#include "protoconcepts/config.hpp"
#include "protoconcepts/diagnostics.hpp"
#include "protoconcepts/explain.hpp"
#include "protoconcepts/report.hpp"
#include "protoconcepts/training.hpp"

namespace fs = std::filesystem;

namespace protoconcepts {

namespace {

struct CommonArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out = "runs/latest";
  long long seed = -1;
};

Config load_config(const CommonArgs& args) {
  Config cfg = args.config.empty() ? Config::defaults() : Config::load(args.config);
  for (const auto& o : args.overrides) cfg.apply_override(o);
  if (args.seed >= 0) cfg.set("schedule.seed", std::to_string(args.seed));
  return cfg;
}

void emit(const Sidecar& sc, const fs::path& path) {
  std::cout << sc.text();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  sc.write(path);
}

fs::path default_checkpoint(const CommonArgs& args, const std::string& explicit_path, const char* stage) {
  if (!explicit_path.empty()) return explicit_path;
  return fs::path(args.out) / "checkpoints" / (std::string(stage) + ".ckpt");
}

// Loads the checkpoint and the dataset it is meant to run against.
struct Loaded {
  Checkpoint ckpt;
  PipelineConfig pc;
  DatasetManifest manifest;
};

Loaded load_for(const CommonArgs& args, const fs::path& ckpt_path, const Config& cfg) {
  Loaded l{load_checkpoint(ckpt_path), make_pipeline_config(cfg), {}};
  const auto& net = l.ckpt.net;
  if (!args.config.empty()) {
    if (net.geometry != l.pc.model.geometry) {
      throw Error("checkpoint geometry '" + to_string(net.geometry) + "' does not match config geometry '" +
                  to_string(l.pc.model.geometry) + "'");
    }
    if (net.latent_dim() != l.pc.model.latent_dim) {
      throw Error("checkpoint latent dimension " + std::to_string(net.latent_dim()) + " does not match config (" +
                  std::to_string(l.pc.model.latent_dim) + ")");
    }
  }
  l.manifest = prepare_dataset(l.pc.data, net.image_size);
  if (l.manifest.num_classes() != net.num_classes()) {
    throw Error("checkpoint has " + std::to_string(net.num_classes()) + " classes but the dataset has " +
                std::to_string(l.manifest.num_classes()));
  }
  return l;
}

CheckpointMetadata with_stage(CheckpointMetadata meta, const std::string& stage, bool pruned) {
  meta["stage"] = stage;
  meta["pruned"] = pruned ? "1" : "0";
  return meta;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::uint64_t file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::uint64_t h = 1469598103934665603ULL;
  char c;
  while (in.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

// Member scan, reusing $PROTOCONCEPTS_CACHE/members_<key>.txt when present.
std::vector<std::vector<MemberPatch>> cached_scan(const ProtoConceptsNet& net, const fs::path& ckpt_path,
                                                  const DatasetManifest& manifest, const LabeledImages& train) {
  const char* dir = std::getenv("PROTOCONCEPTS_CACHE");
  if (!dir || !*dir) return scan_members(net, train);
  const fs::path cache = fs::path(dir) / ("members_" + hex64(file_hash(ckpt_path) ^ manifest_hash(manifest.train)) + ".txt");
  if (std::ifstream in(cache); in) {
    std::stringstream ss;
    ss << in.rdbuf();
    auto members = members_from_text(ss.str());
    if (members.size() == net.balls.size()) return members;
  }
  auto members = scan_members(net, train);
  std::error_code ec;
  fs::create_directories(cache.parent_path(), ec);
  std::ofstream(cache, std::ios::binary) << members_to_text(members);
  return members;
}

LabeledImages original_train(const DatasetManifest& manifest) {
  // Galleries show real images, so augmented copies are excluded from scans.
  DatasetManifest originals = manifest;
  std::erase_if(originals.train, [](const ManifestEntry& e) { return e.id.rfind("aug/", 0) == 0; });
  return load_split(originals, Split::Train);
}

Sidecar eval_sidecar(const EvalReport& rep, const DatasetManifest& manifest) {
  Sidecar sc;
  sc.add("accuracy", rep.accuracy);
  for (size_t c = 0; c < rep.per_class_accuracy.size(); ++c) {
    sc.add("class." + manifest.classes[c] + ".accuracy", rep.per_class_accuracy[c]);
    sc.add("class." + manifest.classes[c] + ".count", rep.per_class_count[c]);
  }
  return sc;
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw ConfigError("split must be train or test");
}

std::string dir_name(const std::string& id) {
  std::string out = fs::path(id).replace_extension().generic_string();
  for (char& c : out)
    if (c == '/' || c == '\\' || c == ' ') c = '_';
  return out;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Concept-ball prototype networks: train, prune, finetune, inspect"};
  app.name("protoconcepts");
  app.require_subcommand(1);
  app.footer(config_schema_help());

  CommonArgs common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config,-c", common.config, "Config file");
    sub->add_option("--set", common.overrides, "Override, e.g. --set losses.k=5 (repeatable)");
    sub->add_option("--out,-o", common.out, "Output directory")->capture_default_str();
    sub->add_option("--seed", common.seed, "Override schedule.seed");
  };

  std::string checkpoint;
  bool all_stages = false, resume = false;
  auto* train = app.add_subcommand("train", "Warmup and joint stages (--all continues through prune and finetune)");
  add_common(train);
  train->add_flag("--all", all_stages, "Run the whole pipeline");
  train->add_flag("--resume", resume, "Resume from checkpoints/joint.ckpt when present");

  auto* prune = app.add_subcommand("prune", "Mask balls without training members");
  add_common(prune);
  prune->add_option("--checkpoint", checkpoint, "Input checkpoint (default <out>/checkpoints/joint.ckpt)");

  auto* finetune = app.add_subcommand("finetune", "Sparse last-layer finetuning");
  add_common(finetune);
  finetune->add_option("--checkpoint", checkpoint, "Input checkpoint (default <out>/checkpoints/pruned.ckpt)");

  int top_n = 0, top_p = 0, limit = 0;
  auto* scan = app.add_subcommand("scan-members", "Scan training patches inside each ball and render galleries");
  add_common(scan);
  scan->add_option("--checkpoint", checkpoint, "Checkpoint (default <out>/checkpoints/final.ckpt)");
  scan->add_option("--top-n", top_n, "Gallery size (default explain.top_n)");

  std::string image_path, split_name;
  auto* explain = app.add_subcommand("explain", "Scoresheet for test images");
  add_common(explain);
  explain->add_option("--checkpoint", checkpoint, "Checkpoint (default <out>/checkpoints/final.ckpt)");
  auto* image_opt = explain->add_option("--image", image_path, "Single image file");
  explain->add_option("--split", split_name, "Explain images of a split instead")->excludes(image_opt);
  explain->add_option("--limit", limit, "At most this many images of the split (0 = all)");
  explain->add_option("--top-p", top_p, "Rows per scoresheet (default explain.top_p)");
  explain->add_option("--top-n", top_n, "Gallery entries per row (default explain.top_n)");

  std::string eval_split = "test";
  auto* eval = app.add_subcommand("eval", "Accuracy with per-class breakdown");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint (default <out>/checkpoints/final.ckpt)");
  eval->add_option("--split", eval_split, "train or test")->capture_default_str();

  auto* synth = app.add_subcommand("synth-data", "Render the synthetic concept dataset to data.root");
  add_common(synth);

  std::string axis;
  std::vector<std::string> values;
  auto* ablate = app.add_subcommand("ablate", "Train one model per value of radius or k");
  add_common(ablate);
  ablate->add_option("--axis", axis, "radius or k")->required()->check(CLI::IsMember({"radius", "k"}));
  ablate->add_option("--values", values, "Values; radius accepts small, medium, large or a number")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const Config cfg = load_config(common);
    const fs::path out(common.out);

    if (train->parsed()) {
      PipelineOptions opts;
      opts.resume = resume;
      opts.stop_after_joint = !all_stages;
      const auto result = run_pipeline(make_pipeline_config(cfg), out, opts);
      std::cout << result.metrics.text();
      return 0;
    }

    if (prune->parsed()) {
      const fs::path in = default_checkpoint(common, checkpoint, "joint");
      auto l = load_for(common, in, cfg);
      const auto data = original_train(l.manifest);
      const auto res = prune_empty_balls(l.ckpt.net, data);
      save_checkpoint(l.ckpt.net, with_stage(l.ckpt.metadata, "pruned", true), out / "checkpoints" / "pruned.ckpt");
      Sidecar sc;
      sc.add("prototypes_total", l.ckpt.net.num_prototypes());
      sc.add("prototypes_surviving", res.surviving);
      for (size_t j = 0; j < res.member_counts.size(); ++j) sc.add("members." + std::to_string(j), res.member_counts[j]);
      emit(sc, out / "metrics.txt");
      return 0;
    }

    if (finetune->parsed()) {
      const fs::path in = default_checkpoint(common, checkpoint, "pruned");
      auto l = load_for(common, in, cfg);
      if (l.ckpt.metadata["pruned"] != "1") warn("checkpoint '" + in.string() + "' is not pruned; finetuning with all prototypes");
      const auto train_data = load_split(l.manifest, Split::Train);
      const auto& stage = l.pc.schedule.stage(StageKind::Finetune);
      const auto log = run_stage(l.ckpt.net, train_data, stage, l.pc.schedule.optimizer, l.pc.schedule.seed);
      save_checkpoint(l.ckpt.net, with_stage(l.ckpt.metadata, "finetune", l.ckpt.metadata["pruned"] == "1"),
                      out / "checkpoints" / "final.ckpt");
      Sidecar sc;
      const auto test = load_split(l.manifest, Split::Test);
      if (test.size()) sc.add("accuracy_after_finetune", evaluate(l.ckpt.net, test).accuracy);
      sc.append(training_log_sidecar(log));
      emit(sc, out / "metrics.txt");
      return 0;
    }

    if (scan->parsed()) {
      const fs::path in = default_checkpoint(common, checkpoint, "final");
      auto l = load_for(common, in, cfg);
      const auto data = original_train(l.manifest);
      const auto members = cached_scan(l.ckpt.net, in, l.manifest, data);
      const auto galleries = build_galleries(l.ckpt.net, members, top_n > 0 ? top_n : l.pc.top_n);
      render_gallery_report(l.ckpt.net, galleries, data, out / "report");
      std::cout << "report written to " << (out / "report" / "index.html").string() << "\n";
      Sidecar stats;
      const auto& mask = l.ckpt.net.evidence.prune_mask();
      stats.add("multi_image_fraction", multi_image_fraction(members, mask));
      if (l.pc.data.synthetic) {
        DatasetManifest originals = l.manifest;
        std::erase_if(originals.train, [](const ManifestEntry& e) { return e.id.rfind("aug/", 0) == 0; });
        stats.add("concept_purity", mean_concept_purity(members, mask, load_concept_masks(originals, Split::Train),
                                                        l.ckpt.net.grid_size()));
      }
      emit(stats, out / "report" / "concepts.txt");
      return 0;
    }

    if (explain->parsed()) {
      if (image_path.empty() && split_name.empty()) throw ConfigError("explain needs --image or --split");
      const fs::path in = default_checkpoint(common, checkpoint, "final");
      auto l = load_for(common, in, cfg);
      const auto& net = l.ckpt.net;
      const auto data = original_train(l.manifest);
      const auto members = cached_scan(net, in, l.manifest, data);
      const auto galleries = build_galleries(net, members, top_n > 0 ? top_n : l.pc.top_n);
      const int rows = top_p > 0 ? top_p : l.pc.top_p;
      LabeledImages targets;
      if (!image_path.empty()) {
        targets.images.push_back(resize_bilinear(to_rgb(read_image(image_path)), net.image_size, net.image_size));
        targets.ids.push_back(fs::path(image_path).filename().string());
        targets.labels.push_back(-1);
      } else {
        targets = load_split(l.manifest, parse_split(split_name));
      }
      const size_t n = limit > 0 ? std::min(targets.size(), static_cast<size_t>(limit)) : targets.size();
      for (size_t i = 0; i < n; ++i) {
        const auto sheet = local_explanation(net, targets.images[i], targets.ids[i], galleries, rows);
        const fs::path dir = out / "scoresheets" / dir_name(targets.ids[i]);
        render_scoresheet(net, sheet, targets.images[i], data, dir);
        std::cout << targets.ids[i] << " -> class " << l.manifest.classes[static_cast<size_t>(sheet.predicted)] << " ("
                  << dir.string() << ")\n";
      }
      return 0;
    }

    if (eval->parsed()) {
      const fs::path in = default_checkpoint(common, checkpoint, "final");
      auto l = load_for(common, in, cfg);
      const auto data = load_split(l.manifest, parse_split(eval_split));
      if (data.size() == 0) throw Error("split '" + eval_split + "' is empty");
      const auto rep = evaluate(l.ckpt.net, data);
      emit(eval_sidecar(rep, l.manifest), out / ("eval_" + eval_split + ".txt"));
      return 0;
    }

    if (synth->parsed()) {
      auto pc = make_pipeline_config(cfg);
      if (!pc.data.synthetic) throw ConfigError("synth-data needs data.synthetic = true");
      pc.data.augment.copies = 0;
      const auto m = prepare_dataset(pc.data, pc.model.image_size);
      std::cout << "synthetic dataset at " << m.root.string() << ": " << m.num_classes() << " classes, " << m.train.size()
                << " train, " << m.test.size() << " test\n";
      return 0;
    }

    if (ablate->parsed()) {
      if (values.size() < 2) throw ConfigError("ablate needs at least two values");
      const auto base = make_pipeline_config(cfg);
      Sidecar sc;
      std::ostringstream table;
      char line[256];
      std::snprintf(line, sizeof(line), "%-8s %-12s %-11s %-14s %s\n", axis.c_str(), "value", "prototypes",
                    "acc_before[%]", "acc_after[%]");
      table << line;
      bool failed = false;
      for (const auto& v : values) {
        Config run_cfg = cfg;
        std::string numeric = v;
        if (axis == "radius") {
          const char* names[] = {"small", "medium", "large"};
          for (int i = 0; i < 3; ++i)
            if (v == names[i]) numeric = format_real(base.radius_presets[static_cast<size_t>(i)]);
          run_cfg.set("geometry.radius_init", numeric);
        } else {
          run_cfg.set("losses.k", v);
        }
        const std::string key = "ablate." + axis + "." + v + ".";
        try {
          const auto r = run_pipeline(make_pipeline_config(run_cfg), out / (axis + "_" + v));
          std::snprintf(line, sizeof(line), "%-8s %-12g %-11d %-14.1f %.1f\n", v.c_str(), std::stod(numeric),
                        r.prune.surviving, 100.0 * r.accuracy_before_prune, 100.0 * r.accuracy_after_finetune);
          table << line;
          sc.add(key + "value", numeric);
          sc.add(key + "prototypes", r.prune.surviving);
          sc.add(key + "accuracy_before_prune", r.accuracy_before_prune);
          sc.add(key + "accuracy_after_finetune", r.accuracy_after_finetune);
        } catch (const std::exception& e) {
          failed = true;
          table << v << "  FAILED: " << e.what() << "\n";
          sc.add(key + "failed", e.what());
        }
      }
      std::cout << table.str();
      fs::create_directories(out);
      sc.write(out / "ablation.txt");
      std::ofstream(out / "ablation_table.txt") << table.str();
      return failed ? 1 : 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace protoconcepts
