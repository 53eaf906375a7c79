#include "ocra/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ocra/adam.hpp"
#include "ocra/checkpoint.hpp"
#include "ocra/error.hpp"
#include "ocra/ops.hpp"
#include "ocra/rng.hpp"

namespace ocra {

namespace fs = std::filesystem;

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<int> sequence_prediction(const std::vector<Tensor<float>>& scores, int64_t b) {
  std::vector<int> out;
  for (const auto& s : scores) {
    const int64_t width = s.dim(1);
    const auto v = s.data();
    int best = 0;
    for (int64_t j = 1; j < width; ++j) {
      if (v[static_cast<size_t>(b * width + j)] > v[static_cast<size_t>(b * width + best)]) {
        best = static_cast<int>(j);
      }
    }
    out.push_back(best);
  }
  return out;
}

std::vector<int> predicted_labels(const RunConfig& config, const EpisodeOutput<float>& out,
                                  int64_t b) {
  if (config.sequence_slots > 0) return sequence_prediction(out.sequence_scores, b);
  const int64_t classes = out.cum_scores.dim(1);
  const auto s = out.cum_scores.data();
  std::vector<double> row(s.begin() + b * classes, s.begin() + (b + 1) * classes);
  return predict_labels(row, config.objects_per_image);
}

std::vector<int> truth_labels(const RunConfig& config, const Batch& batch, int64_t b) {
  return config.sequence_slots > 0 ? batch.sequences[static_cast<size_t>(b)]
                                   : batch.labels[static_cast<size_t>(b)];
}

// Matches equal labels first; leftovers pair up in sorted order.
void add_confusion(std::vector<int64_t>& confusion, int classes, std::vector<int> truth,
                   std::vector<int> pred) {
  std::sort(truth.begin(), truth.end());
  std::sort(pred.begin(), pred.end());
  std::vector<int> t_left, p_left;
  std::set_difference(truth.begin(), truth.end(), pred.begin(), pred.end(),
                      std::back_inserter(t_left));
  std::set_difference(pred.begin(), pred.end(), truth.begin(), truth.end(),
                      std::back_inserter(p_left));
  std::vector<int> common;
  std::set_intersection(truth.begin(), truth.end(), pred.begin(), pred.end(),
                        std::back_inserter(common));
  auto bump = [&](int t, int p) {
    if (t >= 0 && t < classes && p >= 0 && p < classes) {
      ++confusion[static_cast<size_t>(t * classes + p)];
    }
  };
  for (int c : common) bump(c, c);
  for (size_t i = 0; i < std::min(t_left.size(), p_left.size()); ++i) bump(t_left[i], p_left[i]);
}

uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  uint64_t h = 0xcbf29ce484222325ULL;
  std::vector<char> buf(1 << 20);
  while (in.read(buf.data(), static_cast<std::streamsize>(buf.size())) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[static_cast<size_t>(i)]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace

Batch make_batch(const Dataset& dataset, const std::vector<int64_t>& indices) {
  Batch batch;
  const auto& h = dataset.header;
  const auto n = static_cast<int64_t>(indices.size());
  const int64_t ppi = dataset.pixels_per_image();
  std::vector<float> px(static_cast<size_t>(n * ppi));
  for (int64_t b = 0; b < n; ++b) {
    const auto img = dataset.image(indices[static_cast<size_t>(b)]);
    for (int64_t k = 0; k < ppi; ++k) {
      px[static_cast<size_t>(b * ppi + k)] = static_cast<float>(img[static_cast<size_t>(k)]) / 255.0f;
    }
    batch.labels.push_back(dataset.labels(indices[static_cast<size_t>(b)]));
    batch.sequences.push_back(dataset.sequence(indices[static_cast<size_t>(b)]));
  }
  batch.images = Tensor<float>({n, int64_t(h.height), int64_t(h.width)}, std::move(px));
  batch.targets = target_counts<float>(batch.labels, static_cast<int>(h.classes));
  return batch;
}

void check_geometry(const RunConfig& config, const DatasetHeader& header) {
  const uint64_t expected = geometry_hash(config);
  const uint64_t actual = geometry_hash(static_cast<int>(header.width),
                                        static_cast<int>(header.height),
                                        static_cast<int>(header.classes),
                                        static_cast<int>(header.sequence_slots));
  if (expected != actual) {
    throw ConfigError("dataset geometry " + std::to_string(header.width) + "x" +
                      std::to_string(header.height) + ", " + std::to_string(header.classes) +
                      " classes, " + std::to_string(header.sequence_slots) +
                      " slots (hash " + hex64(actual) + ") does not match config " +
                      std::to_string(config.image_width) + "x" +
                      std::to_string(config.image_height) + ", " +
                      std::to_string(config.num_classes) + " classes, " +
                      std::to_string(config.sequence_slots) + " slots (hash " + hex64(expected) +
                      ")");
  }
}

std::vector<int64_t> permutation(int64_t n, uint64_t seed) {
  std::vector<int64_t> p(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  for (int64_t i = n - 1; i > 0; --i) {
    std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(rng.uniform_int(0, i))]);
  }
  return p;
}

SplitIndices split_indices(int64_t n, double val_fraction, uint64_t seed) {
  auto p = permutation(n, mix_seed(seed, 0x5a11));
  const auto n_val = static_cast<int64_t>(std::floor(double(n) * val_fraction));
  SplitIndices s;
  s.val.assign(p.begin(), p.begin() + n_val);
  s.train.assign(p.begin() + n_val, p.end());
  return s;
}

// ---- training --------------------------------------------------------------

void write_run_manifest(const std::string& path, const RunConfig& config,
                        const std::string& dataset_id, int64_t parameters) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "# run manifest\n"
      << "dataset = " << dataset_id << "\n"
      << "seed = " << config.seed << "\n"
      << "config_hash = " << hex64(config_hash(config)) << "\n"
      << "parameters = " << parameters << "\n"
      << "# config\n"
      << format_config(config);
  if (!out) throw IoError("error writing " + path);
}

std::string dataset_identity(const std::string& path) {
  return path + " bytes=" + std::to_string(fs::file_size(path)) + " fnv1a=" +
         hex64(fnv1a_file(path));
}

TrainResult train(const RunConfig& config, const Dataset& dataset, const TrainOptions& options) {
  config.validate();
  check_geometry(config, dataset.header);
  if (options.out_dir.empty()) throw ConfigError("train needs an output directory");
  fs::create_directories(options.out_dir);

  OcraModel<float> model(config);
  TrainResult result;
  result.parameters = model.parameter_count();
  const auto dir = fs::path(options.out_dir);
  save_config(config, (dir / "config.txt").string());
  write_run_manifest((dir / "manifest.txt").string(), config, options.dataset_id,
                     result.parameters);

  int64_t n = dataset.size();
  if (options.max_samples > 0) n = std::min(n, options.max_samples);
  auto split = split_indices(n, config.val_fraction, config.seed);
  if (split.train.empty()) throw ConfigError("no training samples after the validation split");

  result.metrics_path = (dir / "metrics.csv").string();
  std::ofstream csv(result.metrics_path);
  csv << "epoch,step,margin,recon,total,train_err,val_err,wall_seconds\n";

  auto params = model.parameters().tensors();
  AdamState<float> adam;
  adam.options.lr = config.lr;
  const auto start = std::chrono::steady_clock::now();
  const uint64_t hash = config_hash(config);
  int64_t step = 0;
  int stale = 0;
  result.best_checkpoint = (dir / "best.ckpt").string();
  result.last_checkpoint = (dir / "last.ckpt").string();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    auto order = split.train;
    const auto perm = permutation(static_cast<int64_t>(order.size()),
                                  mix_seed(config.seed, 1000 + static_cast<uint64_t>(epoch)));
    for (size_t i = 0; i < order.size(); ++i) order[i] = split.train[static_cast<size_t>(perm[i])];

    double sum_margin = 0, sum_recon = 0, sum_total = 0;
    int64_t seen = 0, errors = 0;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(order.size(), at + static_cast<size_t>(config.batch_size));
      std::vector<int64_t> idx(order.begin() + static_cast<std::ptrdiff_t>(at),
                               order.begin() + static_cast<std::ptrdiff_t>(end));
      const auto batch = make_batch(dataset, idx);
      const auto out = model.run_episode(batch.images);
      const auto terms = model.loss(out, batch.images, batch.targets, batch.sequences);
      assert_finite(terms.total, "training loss");
      terms.total.backward();
      adam_update(std::span<Tensor<float>>(params), adam);
      model.parameters().zero_grad();
      ++step;
      const auto b = static_cast<double>(idx.size());
      if (step == 1) result.first_step_loss = terms.total.item();
      sum_margin += terms.margin.item() * b;
      sum_recon += terms.recon.item() * b;
      sum_total += terms.total.item() * b;
      for (int64_t k = 0; k < static_cast<int64_t>(idx.size()); ++k) {
        errors += image_level_error(predicted_labels(config, out, k), truth_labels(config, batch, k));
      }
      seen += static_cast<int64_t>(idx.size());
      if (!options.quiet && step % 50 == 0) {
        std::fprintf(stderr, "epoch %d step %lld loss %.5f (margin %.5f recon %.5f)\n", epoch,
                     static_cast<long long>(step), terms.total.item(), terms.margin.item(),
                     terms.recon.item());
      }
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.step = step;
    m.margin = sum_margin / double(seen);
    m.recon = sum_recon / double(seen);
    m.total = sum_total / double(seen);
    m.train_err = double(errors) / double(seen);
    if (!split.val.empty()) {
      EvalOptions eo;
      eo.batch = options.eval_batch;
      m.val_err = evaluate(model, dataset, split.val, eo).error_rate;
    } else {
      m.val_err = m.train_err;
    }
    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    csv << m.epoch << ',' << m.step << ',' << m.margin << ',' << m.recon << ',' << m.total << ','
        << m.train_err << ',' << m.val_err << ',' << fixed(m.wall_seconds, 1) << '\n';
    csv.flush();
    result.epochs.push_back(m);
    save_checkpoint(model.parameters(), hash, result.last_checkpoint);
    if (epoch == 1 || m.val_err < result.best_val_err) {
      result.best_val_err = m.val_err;
      result.best_epoch = epoch;
      save_checkpoint(model.parameters(), hash, result.best_checkpoint);
      stale = 0;
    } else {
      ++stale;
    }
    if (!options.quiet) {
      std::fprintf(stderr,
                   "epoch %d: margin %.5f recon %.5f total %.5f train_err %.4f val_err %.4f "
                   "(%.0fs)\n",
                   epoch, m.margin, m.recon, m.total, m.train_err, m.val_err, m.wall_seconds);
    }
    if (options.on_epoch && !options.on_epoch(m)) break;
    if (config.patience > 0 && stale >= config.patience) break;
  }
  if (config.epochs == 0) {
    save_checkpoint(model.parameters(), hash, result.last_checkpoint);
    save_checkpoint(model.parameters(), hash, result.best_checkpoint);
  }
  return result;
}

// ---- evaluation ------------------------------------------------------------

double mean_over_boxes(const std::vector<float>& mask, int width, const std::vector<Box>& boxes) {
  if (boxes.empty()) return std::nan("");
  double total = 0;
  for (const auto& b : boxes) {
    double s = 0;
    for (int y = b.y0; y < b.y1; ++y) {
      for (int x = b.x0; x < b.x1; ++x) s += mask[static_cast<size_t>(y * width + x)];
    }
    total += s / std::max(1, b.area());
  }
  return total / double(boxes.size());
}

EvalReport evaluate(const OcraModel<float>& model, const Dataset& dataset,
                    const std::vector<int64_t>& indices, const EvalOptions& options) {
  const auto& config = model.config();
  check_geometry(config, dataset.header);
  NoGradGuard no_grad;
  EvalReport r;
  r.classes = config.num_classes;
  r.confusion.assign(static_cast<size_t>(r.classes * r.classes), 0);
  std::ofstream dump;
  if (!options.dump_path.empty()) {
    dump.open(options.dump_path);
    if (!dump) throw IoError("cannot write " + options.dump_path);
    dump << "index,truth,predicted,error,scores\n";
  }
  MaskStats mask;
  double digit_sum = 0, clutter_sum = 0, overall_sum = 0;
  int64_t digit_n = 0, clutter_n = 0;
  const int width = config.image_width;

  for (size_t at = 0; at < indices.size(); at += static_cast<size_t>(options.batch)) {
    const size_t end = std::min(indices.size(), at + static_cast<size_t>(options.batch));
    std::vector<int64_t> idx(indices.begin() + static_cast<std::ptrdiff_t>(at),
                             indices.begin() + static_cast<std::ptrdiff_t>(end));
    const auto batch = make_batch(dataset, idx);
    const auto out = model.run_episode(batch.images);
    const auto terms = model.loss(out, batch.images, batch.targets, batch.sequences);
    const auto nb = static_cast<double>(idx.size());
    r.margin += terms.margin.item() * nb;
    r.recon += terms.recon.item() * nb;
    r.total += terms.total.item() * nb;
    for (const auto& t : out.traces) r.degenerate_rows += t.degenerate_rows;

    Tensor<float> m = terms.mask;
    if (options.provenance && !m.defined()) {
      std::vector<Tensor<float>> fps;
      for (const auto& t : out.traces) fps.push_back(t.footprint);
      m = build_recon_mask(fps);
    }
    const int64_t ppi = dataset.pixels_per_image();
    for (int64_t k = 0; k < static_cast<int64_t>(idx.size()); ++k) {
      const auto pred = predicted_labels(config, out, k);
      const auto truth = truth_labels(config, batch, k);
      const int err = image_level_error(pred, truth);
      r.errors += err;
      ++r.samples;
      add_confusion(r.confusion, r.classes, truth, pred);
      const auto& labels = batch.labels[static_cast<size_t>(k)];
      if (std::adjacent_find(labels.begin(), labels.end()) != labels.end()) {
        ++r.duplicate_samples;
        r.duplicate_errors += err;
      }
      if (dump.is_open()) {
        auto join = [](const std::vector<int>& v) {
          std::string s;
          for (size_t i = 0; i < v.size(); ++i) s += (i ? "|" : "") + std::to_string(v[i]);
          return s;
        };
        dump << idx[static_cast<size_t>(k)] << ',' << join(truth) << ',' << join(pred) << ','
             << err << ',';
        const int64_t c = out.cum_scores.dim(1);
        for (int64_t j = 0; j < c; ++j) {
          dump << (j ? "|" : "") << fixed(out.cum_scores.data()[static_cast<size_t>(k * c + j)], 4);
        }
        dump << '\n';
      }
      if (options.provenance && m.defined()) {
        const auto& prov = (*options.provenance)[static_cast<size_t>(idx[static_cast<size_t>(k)])];
        const auto md = m.data();
        std::vector<float> sample(md.begin() + k * ppi, md.begin() + (k + 1) * ppi);
        double s = 0;
        for (float v : sample) s += v;
        overall_sum += s / double(ppi);
        ++mask.samples;
        if (!prov.content_boxes.empty()) {
          digit_sum += mean_over_boxes(sample, width, prov.content_boxes);
          ++digit_n;
        }
        if (!prov.clutter_boxes.empty()) {
          clutter_sum += mean_over_boxes(sample, width, prov.clutter_boxes);
          ++clutter_n;
        }
      }
    }
  }
  if (r.samples > 0) {
    r.error_rate = double(r.errors) / double(r.samples);
    r.margin /= double(r.samples);
    r.recon /= double(r.samples);
    r.total /= double(r.samples);
  }
  if (options.provenance && mask.samples > 0) {
    mask.overall_mean = overall_sum / double(mask.samples);
    mask.digit_mean = digit_n ? digit_sum / double(digit_n) : std::nan("");
    mask.clutter_mean = clutter_n ? clutter_sum / double(clutter_n) : std::nan("");
    r.mask = mask;
  }
  return r;
}

EvalReport evaluate(const OcraModel<float>& model, const Dataset& dataset,
                    const EvalOptions& options) {
  int64_t n = dataset.size();
  if (options.max_samples > 0) n = std::min(n, options.max_samples);
  std::vector<int64_t> indices(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) indices[static_cast<size_t>(i)] = i;
  if (options.provenance && static_cast<int64_t>(options.provenance->size()) < n) {
    throw ConfigError("provenance has fewer rows than evaluated samples");
  }
  return evaluate(model, dataset, indices, options);
}

std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os << "samples = " << r.samples << "\n"
     << "errors = " << r.errors << "\n"
     << "error_rate = " << fixed(r.error_rate, 6) << "\n"
     << "mean_margin_loss = " << fixed(r.margin, 6) << "\n"
     << "mean_recon_loss = " << fixed(r.recon, 6) << "\n"
     << "mean_total_loss = " << fixed(r.total, 6) << "\n"
     << "duplicate_class_samples = " << r.duplicate_samples << "\n"
     << "duplicate_class_errors = " << r.duplicate_errors << "\n"
     << "duplicate_class_error_rate = "
     << (r.duplicate_samples ? fixed(double(r.duplicate_errors) / double(r.duplicate_samples), 6)
                             : std::string("n/a"))
     << "\n"
     << "degenerate_filter_rows = " << r.degenerate_rows << "\n";
  if (r.mask) {
    os << "mask_samples = " << r.mask->samples << "\n"
       << "mask_digit_mean = " << fixed(r.mask->digit_mean, 6) << "\n"
       << "mask_clutter_mean = " << fixed(r.mask->clutter_mean, 6) << "\n"
       << "mask_overall_mean = " << fixed(r.mask->overall_mean, 6) << "\n";
  }
  os << "confusion (rows truth, columns predicted):\n";
  for (int t = 0; t < r.classes; ++t) {
    for (int p = 0; p < r.classes; ++p) {
      os << (p ? " " : "") << r.confusion[static_cast<size_t>(t * r.classes + p)];
    }
    os << "\n";
  }
  return os.str();
}

// ---- visualization ---------------------------------------------------------

int GridLayout::row_y(int row) const {
  return gap + row * (cell + gap) + (row == 2 ? text_band : 0);
}

GridLayout grid_layout(int image_w, int image_h, int timesteps) {
  GridLayout g;
  const int side = std::max(image_w, image_h);
  g.zoom = std::max(1, (120 + side - 1) / side);
  g.cell = side * g.zoom;
  g.columns = timesteps;
  g.width = g.gap + timesteps * (g.cell + g.gap);
  g.height = g.row_y(2) + g.cell + g.gap;
  return g;
}

PixelRect rect_in_cell(const Rect& rect, int zoom, int ox, int oy) {
  // 1-based pixel coordinate u maps to the centre of grid pixel (u-1)*zoom + zoom/2.
  auto map = [zoom](double u, int origin) {
    return origin + static_cast<int>(std::lround((u - 1.0) * zoom + zoom / 2.0));
  };
  return {map(rect.x0, ox), map(rect.y0, oy), map(rect.x1, ox), map(rect.y1, oy)};
}

std::vector<std::string> visualize(const OcraModel<float>& model, const Dataset& dataset,
                                   const VisualizeOptions& options) {
  const auto& config = model.config();
  check_geometry(config, dataset.header);
  std::error_code ec;
  fs::create_directories(options.out_dir, ec);
  if (ec || !fs::is_directory(options.out_dir)) {
    throw IoError("cannot create output directory " + options.out_dir);
  }
  for (int64_t s : options.samples) {
    if (s < 0 || s >= dataset.size()) throw ConfigError("sample index out of range");
  }
  NoGradGuard no_grad;
  const auto batch = make_batch(dataset, options.samples);
  const auto out = model.run_episode(batch.images);
  const int w = config.image_width, h = config.image_height;
  const auto layout = grid_layout(w, h, config.timesteps);
  const int n = config.read_glimpse_size;

  std::vector<std::string> written;
  std::ofstream index((fs::path(options.out_dir) / "index.txt").string());
  if (!index) throw IoError("cannot write index in " + options.out_dir);
  index << "# file sample truth predicted | per step: winner score gx gy delta sigma2\n";
  const auto image_px = batch.images.data();
  for (size_t k = 0; k < options.samples.size(); ++k) {
    const auto kb = static_cast<int64_t>(k);
    GrayImage grid(layout.width, layout.height, 0);
    std::vector<float> input(image_px.begin() + kb * w * h, image_px.begin() + (kb + 1) * w * h);
    // Dim the input so the 255-valued rectangles stay distinguishable.
    std::vector<float> dimmed(input);
    for (auto& v : dimmed) v *= 0.75f;
    std::string steps;
    for (int t = 0; t < config.timesteps; ++t) {
      const auto& trace = out.traces[static_cast<size_t>(t)];
      const int x = layout.cell_x(t);
      paste(grid, dimmed, w, h, x, layout.row_y(0), layout.zoom);
      std::string att = "- - - -";
      if (trace.read_params.defined()) {
        const auto p = attention_values(trace.read_params)[k];
        const auto r = rect_in_cell(attention_rect(p, n), layout.zoom, x, layout.row_y(0));
        draw_rect(grid, r.x0, r.y0, r.x1, r.y1, 255);
        att = fixed(p.g_x, 3) + " " + fixed(p.g_y, 3) + " " + fixed(p.delta, 4) + " " +
              fixed(p.sigma2, 4);
      }
      // Glimpse, scaled to fill the cell.
      const int gn = static_cast<int>(trace.glimpse.dim(-1));
      const int gh = static_cast<int>(trace.glimpse.dim(-2));
      const auto gd = trace.glimpse.data();
      std::vector<float> g(gd.begin() + kb * gn * gh, gd.begin() + (kb + 1) * gn * gh);
      paste(grid, g, gn, gh, x, layout.row_y(1), std::max(1, layout.cell / std::max(gn, gh)));
      // Canvas, clipped for display, with winner and score above.
      const auto cd = trace.canvas.data();
      std::vector<float> canvas(cd.begin() + kb * w * h, cd.begin() + (kb + 1) * w * h);
      paste(grid, canvas, w, h, x, layout.row_y(2), layout.zoom);
      const int winner = trace.winners[k];
      const std::string label =
          (winner >= config.num_classes ? std::string("b") : std::to_string(winner)) + " " +
          fixed(trace.winner_scores[k], 2);
      draw_text(grid, label, x + 1, layout.row_y(2) - layout.text_band + 2, 2, 255);
      steps += " | " + std::to_string(winner) + " " + fixed(trace.winner_scores[k], 4) + " " + att;
    }
    const auto name = "sample_" + std::to_string(options.samples[k]) + ".pgm";
    const auto path = (fs::path(options.out_dir) / name).string();
    write_pgm(grid, path);
    written.push_back(path);
    auto join = [](const std::vector<int>& v) {
      std::string s;
      for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
      return s;
    };
    index << name << ' ' << options.samples[k] << ' '
          << join(truth_labels(config, batch, kb)) << ' '
          << join(predicted_labels(config, out, kb)) << steps << '\n';
  }
  return written;
}

// ---- ablation --------------------------------------------------------------

RunConfig ablation_config(const RunConfig& base, const std::string& name) {
  RunConfig c = base;
  if (name == "ocra") {
    c.variant = "ocra";
  } else if (name == "routing1") {
    c.variant = "ocra";
    c.routings = 1;
  } else if (name == "no_capsule") {
    c.variant = "no_capsule";
  } else if (name == "recurrent_no_glimpse") {
    c.variant = "recurrent_no_glimpse";
  } else if (name == "feedforward") {
    c.variant = "feedforward";
    c.timesteps = 1;
  } else {
    throw ConfigError("unknown ablation variant '" + name +
                      "' (expected ocra, routing1, no_capsule, recurrent_no_glimpse, feedforward)");
  }
  c.validate();
  return c;
}

std::vector<AblationRow> ablate(const RunConfig& base, const std::vector<std::string>& variants,
                                const Dataset& train_set, const Dataset& test_set,
                                const AblateOptions& options) {
  std::vector<AblationRow> rows;
  for (const auto& name : variants) ablation_config(base, name);  // reject unknown names up front
  for (int rep = 0; rep < options.repeats; ++rep) {
    for (const auto& name : variants) {
      AblationRow row;
      row.name = name;
      row.config = ablation_config(base, name);
      row.config.seed = base.seed + static_cast<uint64_t>(rep);
      row.seed = row.config.seed;
      TrainOptions to;
      to.out_dir = (fs::path(options.out_dir) / (name + "_seed" + std::to_string(row.seed))).string();
      to.max_samples = options.max_samples;
      to.quiet = options.quiet;
      to.dataset_id = "ablation";
      const auto tr = train(row.config, train_set, to);
      row.parameters = tr.parameters;
      row.val_err = tr.best_val_err;
      OcraModel<float> model(row.config);
      load_checkpoint(model.parameters(), config_hash(row.config), tr.best_checkpoint);
      row.test_err = evaluate(model, test_set, EvalOptions{}).error_rate;
      rows.push_back(row);
    }
  }
  return rows;
}

std::string format_ablation(const RunConfig& base, const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-22s %12s %10s %10s %8s\n", "variant", "params", "val_err",
                "test_err", "seed");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-22s %11.2fM %9.2f%% %9.2f%% %8llu\n", r.name.c_str(),
                  double(r.parameters) / 1e6, 100 * r.val_err, 100 * r.test_err,
                  static_cast<unsigned long long>(r.seed));
    os << line;
  }
  os << "\nconfig differences from the base config:\n";
  for (const auto& r : rows) {
    const auto diff = config_diff(base, r.config);
    os << r.name << ":";
    if (diff.empty()) os << " (none)";
    for (const auto& [k, a, b] : diff) {
      if (k == "seed") continue;
      os << " " << k << " " << a << " -> " << b << ";";
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace ocra
