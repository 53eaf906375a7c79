// ocra: dataset generation, training, evaluation, ablation and visualization.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ocra/checkpoint.hpp"
#include "ocra/config.hpp"
#include "ocra/datasets.hpp"
#include "ocra/error.hpp"
#include "ocra/mnist.hpp"
#include "ocra/model.hpp"
#include "ocra/runner.hpp"

namespace fs = std::filesystem;
using namespace ocra;

namespace {

RunConfig resolve_config(const std::string& source, const std::vector<std::string>& overrides,
                         const std::optional<uint64_t>& seed) {
  RunConfig config = load_config(source);
  apply_overrides(config, overrides);
  if (seed) config.seed = *seed;
  config.validate();
  return config;
}

std::vector<int64_t> parse_indices(const std::string& text) {
  std::vector<int64_t> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto dash = part.find('-');
    if (dash != std::string::npos && dash > 0) {
      const auto a = std::stoll(part.substr(0, dash)), b = std::stoll(part.substr(dash + 1));
      for (auto i = a; i <= b; ++i) out.push_back(i);
    } else if (!part.empty()) {
      out.push_back(std::stoll(part));
    }
  }
  return out;
}

std::string sidecar(const std::string& data, const char* ext) { return data + ext; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Object-centric recurrent attention with capsules"};
  app.require_subcommand(1);

  std::string config_source = "multimnist-3glimpse";
  std::vector<std::string> overrides;
  std::optional<uint64_t> seed;
  auto add_config_opts = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_source, "config file or preset name")
        ->capture_default_str();
    cmd->add_option("--set", overrides, "override a config key (key=value), repeatable");
    cmd->add_option("--seed", seed, "run seed (overrides the config)");
  };

  // generate
  auto* gen = app.add_subcommand("generate", "compose a dataset from MNIST");
  std::string kind = "multimnist", split = "train", gen_out, data_root = default_data_root();
  std::string overlay = "max";
  int64_t count = 0;
  uint64_t gen_seed = 1;
  gen->add_option("--kind", kind, "multimnist | cluttered | single | sequence")->capture_default_str();
  gen->add_option("--split", split, "MNIST split to draw from: train | test")->capture_default_str();
  gen->add_option("-n,--count", count, "number of samples")->required();
  gen->add_option("--seed", gen_seed, "generation seed")->capture_default_str();
  gen->add_option("--overlay", overlay, "max | add_clip")->capture_default_str();
  gen->add_option("--data-root", data_root, "MNIST IDX directory (env OCRA_DATA_ROOT)")
      ->capture_default_str();
  gen->add_option("-o,--out", gen_out, "output .ocrd path")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  add_config_opts(tr);
  std::string train_data, train_out;
  int64_t max_samples = 0;
  tr->add_option("-d,--data", train_data, "training .ocrd file")->required();
  tr->add_option("-o,--out", train_out, "run directory")->required();
  tr->add_option("--max-samples", max_samples, "use only the first N samples");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_config_opts(ev);
  std::string ckpt, eval_data, dump, prov_path;
  ev->add_option("-k,--checkpoint", ckpt, "checkpoint file")->required();
  ev->add_option("-d,--data", eval_data, ".ocrd file")->required();
  ev->add_option("--dump", dump, "write per-sample predictions CSV");
  ev->add_option("--provenance", prov_path, "provenance sidecar (default <data>.prov if present)");
  ev->add_option("--max-samples", max_samples, "evaluate only the first N samples");

  // ablate
  auto* ab = app.add_subcommand("ablate", "train and compare ablation variants");
  add_config_opts(ab);
  std::string ab_train, ab_test, ab_out;
  std::vector<std::string> variants = {"ocra", "routing1", "no_capsule", "recurrent_no_glimpse",
                                       "feedforward"};
  int repeats = 1;
  ab->add_option("--train", ab_train, "training .ocrd file")->required();
  ab->add_option("--test", ab_test, "test .ocrd file")->required();
  ab->add_option("-o,--out", ab_out, "output directory")->required();
  ab->add_option("--variants", variants, "variants to run")->delimiter(',')->capture_default_str();
  ab->add_option("--repeats", repeats, "runs per variant with seeds seed, seed+1, ...");
  ab->add_option("--max-samples", max_samples, "use only the first N training samples");

  // visualize
  auto* vis = app.add_subcommand("visualize", "render attention, glimpse and canvas grids");
  add_config_opts(vis);
  std::string vis_ckpt, vis_data, vis_out, samples = "0";
  vis->add_option("-k,--checkpoint", vis_ckpt, "checkpoint (omit for random weights)");
  vis->add_option("-d,--data", vis_data, ".ocrd file")->required();
  vis->add_option("-s,--samples", samples, "sample indices, e.g. 0,3,10-12")->capture_default_str();
  vis->add_option("-o,--out", vis_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      GenerateOptions opt;
      opt.kind = parse_kind(kind);
      opt.count = count;
      opt.seed = gen_seed;
      if (overlay == "max") {
        opt.overlay = Overlay::kMax;
      } else if (overlay == "add_clip") {
        opt.overlay = Overlay::kAddClip;
      } else {
        throw ConfigError("overlay must be max or add_clip");
      }
      const Split sp = parse_split(split);
      const auto source = load_mnist_dir(data_root, sp);
      const auto g = generate_dataset(source, opt);
      write_dataset(g.dataset, gen_out);
      write_provenance(g.provenance, sp, opt.kind, sidecar(gen_out, ".prov"));
      write_manifest(g, opt, sp, data_root, sidecar(gen_out, ".manifest"));
      std::printf("wrote %lld samples to %s\n", static_cast<long long>(count), gen_out.c_str());
      std::printf("mean_frame_overlap = %.4f\nmean_content_iou = %.4f\n"
                  "duplicate_class_fraction = %.4f\nmean_clutter_pieces = %.2f\n",
                  g.stats.mean_frame_overlap, g.stats.mean_content_iou,
                  g.stats.duplicate_class_fraction, g.stats.mean_clutter_pieces);
    } else if (*tr) {
      const auto config = resolve_config(config_source, overrides, seed);
      const auto ds = read_dataset(train_data);
      TrainOptions opt;
      opt.out_dir = train_out;
      opt.max_samples = max_samples;
      opt.dataset_id = dataset_identity(train_data);
      const auto r = train(config, ds, opt);
      std::printf("parameters = %lld\nbest_epoch = %d\nbest_val_err = %.6f\nbest = %s\nlast = %s\n",
                  static_cast<long long>(r.parameters), r.best_epoch, r.best_val_err,
                  r.best_checkpoint.c_str(), r.last_checkpoint.c_str());
    } else if (*ev) {
      const auto config = resolve_config(config_source, overrides, seed);
      const auto ds = read_dataset(eval_data);
      OcraModel<float> model(config);
      load_checkpoint(model.parameters(), config_hash(config), ckpt);
      EvalOptions opt;
      opt.dump_path = dump;
      opt.max_samples = max_samples;
      if (prov_path.empty() && fs::exists(sidecar(eval_data, ".prov"))) {
        prov_path = sidecar(eval_data, ".prov");
      }
      std::vector<SampleProvenance> prov;
      if (!prov_path.empty()) {
        prov = read_provenance(prov_path);
        opt.provenance = &prov;
      }
      std::printf("%s", format_report(evaluate(model, ds, opt)).c_str());
    } else if (*ab) {
      const auto config = resolve_config(config_source, overrides, seed);
      const auto train_set = read_dataset(ab_train);
      const auto test_set = read_dataset(ab_test);
      AblateOptions opt;
      opt.out_dir = ab_out;
      opt.repeats = repeats;
      opt.max_samples = max_samples;
      const auto rows = ablate(config, variants, train_set, test_set, opt);
      const auto text = format_ablation(config, rows);
      std::printf("%s", text.c_str());
      std::ofstream((fs::path(ab_out) / "ablation.txt").string()) << text;
    } else if (*vis) {
      const auto config = resolve_config(config_source, overrides, seed);
      const auto ds = read_dataset(vis_data);
      OcraModel<float> model(config);
      if (!vis_ckpt.empty()) load_checkpoint(model.parameters(), config_hash(config), vis_ckpt);
      VisualizeOptions opt;
      opt.out_dir = vis_out;
      opt.samples = parse_indices(samples);
      for (const auto& p : visualize(model, ds, opt)) std::printf("%s\n", p.c_str());
    }
  } catch (const ocra::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
