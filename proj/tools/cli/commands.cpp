#include "cli/commands.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "cxrnet/binio.hpp"
#include "cxrnet/classifier.hpp"
#include "cxrnet/dataset.hpp"
#include "cxrnet/error.hpp"
#include "cxrnet/folds.hpp"
#include "cxrnet/image_io.hpp"
#include "cxrnet/metrics.hpp"
#include "cxrnet/phantoms.hpp"
#include "cxrnet/preprocess.hpp"
#include "cxrnet/saliency.hpp"
#include "cxrnet/segnet.hpp"
#include "cxrnet/weights_io.hpp"

namespace cxr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t thread_cap() {
  const char* env = std::getenv("CXRNET_THREADS");
  if (!env || !*env) return 0;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ParameterError(std::string("CXRNET_THREADS must be a positive integer, got '") + env + "'");
  return static_cast<std::size_t>(v);
}

namespace {

// ------------------------------------------------------------------ helpers

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::write_file_atomic(path, io::Bytes(text.begin(), text.end()));
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) { return fs::path(p.string() + suffix); }

json read_json(const fs::path& path) {
  const io::Bytes b = io::read_file(path);
  try {
    return json::parse(b.begin(), b.end());
  } catch (const json::exception& e) {
    throw FormatError("format error in " + path.string() + ": " + e.what());
  }
}

using CsvRow = std::map<std::string, std::string>;

std::vector<CsvRow> read_csv(const fs::path& path) {
  const io::Bytes b = io::read_file(path);
  std::stringstream in(std::string(b.begin(), b.end()));
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
      while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
      out.push_back(cell);
    }
    return out;
  };
  if (!std::getline(in, line)) throw FormatError("format error in " + path.string() + ": empty CSV");
  const std::vector<std::string> header = split(line);
  std::vector<CsvRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line);
    if (cells.size() != header.size())
      throw FormatError("format error in " + path.string() + " line " + std::to_string(lineno) + ": expected " +
                        std::to_string(header.size()) + " fields, got " + std::to_string(cells.size()));
    CsvRow r;
    for (std::size_t i = 0; i < header.size(); ++i) r[header[i]] = cells[i];
    rows.push_back(std::move(r));
  }
  return rows;
}

const std::string& cell(const CsvRow& r, const std::string& col, const fs::path& path) {
  auto it = r.find(col);
  if (it == r.end()) throw FormatError("format error in " + path.string() + ": missing column '" + col + "'");
  return it->second;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos == s.size()) return v;
  } catch (const std::logic_error&) {
  }
  throw FormatError("bad number '" + s + "' in " + what);
}

int parse_label(const std::string& s, const std::string& what) {
  if (s == "1" || s == "covid_pos") return 1;
  if (s == "0" || s == "covid_neg") return 0;
  throw FormatError("bad label '" + s + "' in " + what + " (expected 0/1)");
}

std::map<std::string, int> read_labels(const fs::path& path) {
  std::map<std::string, int> out;
  for (const CsvRow& r : read_csv(path)) {
    const std::string& id = cell(r, "id", path);
    if (!out.emplace(id, parse_label(cell(r, "label", path), path.string())).second)
      throw FormatError("duplicate id '" + id + "' in " + path.string());
  }
  return out;
}

std::vector<fs::path> list_pgm(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("not a directory: '" + dir.string() + "'");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("no .pgm images in '" + dir.string() + "'");
  return files;
}

Tensor prepare_image(Tensor t, std::size_t h, std::size_t w, bool equalize) {
  if (h && w) t = img::resize_bilinear(t, h, w);
  return equalize ? img::hist_equalize(t) : t;
}

// Images from a directory of PGMs (ids are file stems), optional masks of the
// same stem in `masks`, optional labels CSV.
std::vector<data::Sample> load_dir(const fs::path& images, const fs::path& masks, bool masks_required,
                                   const fs::path& labels, std::size_t h, std::size_t w, bool equalize) {
  std::map<std::string, int> lab;
  if (!labels.empty()) lab = read_labels(labels);
  std::vector<data::Sample> out;
  for (const fs::path& p : list_pgm(images)) {
    data::Sample s;
    s.id = p.stem().string();
    s.group = s.id;
    s.image = prepare_image(img::load_pgm(p), h, w, equalize);
    if (!masks.empty()) {
      const fs::path mp = masks / p.filename();
      if (fs::exists(mp)) {
        Tensor m = img::load_pgm(mp);
        s.float_mask = (h && w) ? img::resize_bilinear(m, h, w) : m;
        if (s.float_mask.shape() != s.image.shape())
          throw ShapeError("mask " + mp.string() + " " + shape_str(s.float_mask.shape()) + " does not match image " +
                           shape_str(s.image.shape()));
      } else if (masks_required) {
        throw ValidationError("missing mask for image '" + p.string() + "' (expected " + mp.string() + ")");
      }
    }
    if (!lab.empty()) {
      auto it = lab.find(s.id);
      if (it != lab.end()) s.label = it->second;
    }
    out.push_back(std::move(s));
  }
  return out;
}

void log_line(const std::string& s) { std::cerr << "[cxrnet] " << s << "\n"; }

// ------------------------------------------------------------------ synth

void declare_synth(Settings& s) {
  s.add("n", 500, "Number of phantoms");
  s.add("size", 64, "Image height and width (>= 32)");
  s.add("covid_fraction", 0.4, "Fraction of Covid-positive phantoms");
  s.add("noise", 0.03, "Gaussian noise sigma");
  s.add("out", "", "Output bundle (.cxb)");
  s.add("manifest", "", "Manifest CSV (default <out>.csv)");
  s.add("export_dir", "", "Also write images/, masks/ PGMs and labels.csv here");
}

void run_synth(const Settings& s, std::uint64_t seed) {
  const fs::path out = s.required_path("out");
  const double frac = s.num("covid_fraction");
  if (!(frac >= 0.0 && frac <= 1.0)) throw ParameterError("covid_fraction must lie in [0,1]");
  if (s.integer("n") < 1) throw ParameterError("n must be positive");
  if (s.integer("size") < 32) throw ParameterError("size must be at least 32, got " + std::to_string(s.integer("size")));
  data::PhantomConfig pc;
  pc.noise_sigma = s.num("noise");
  data::SynthResult r = data::synth_phantoms(s.size("n"), s.size("size"), frac, seed, pc);
  data::DatasetBundle& b = r.bundle;
  const std::vector<int> labels = b.labels();
  b.class_weights = class_weights(labels);
  ensure_parent(out);
  data::save_bundle(b, out);
  std::string manifest = "id,group,label\n";
  std::size_t pos = 0;
  for (const auto& smp : b.samples) {
    manifest += smp.id + "," + smp.group + "," + std::to_string(smp.label) + "\n";
    pos += smp.label == 1;
  }
  const fs::path mpath = s.str("manifest").empty() ? with_suffix(out, ".csv") : s.path("manifest");
  write_text(mpath, manifest);
  if (!s.str("export_dir").empty()) {
    const fs::path dir = s.path("export_dir");
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    for (const auto& smp : b.samples) {
      img::save_pgm(smp.image, dir / "images" / (smp.id + ".pgm"), 16);
      img::save_pgm(smp.float_mask, dir / "masks" / (smp.id + ".pgm"), 16);
    }
    write_text(dir / "labels.csv", manifest);
  }
  std::cout << "wrote " << out.string() << ": " << b.samples.size() << " images, " << pos << " positive\n";
}

// ------------------------------------------------------------------ segmentation

void declare_seg_arch(Settings& s) {
  s.add("blocks", 5, "Residual blocks");
  s.add("branch_filters", 16, "Filters per residual branch (shortcut has 3x)");
  s.add("convs_per_branch", 2, "Separable convolutions per branch");
  s.add("branch_norm", true, "Batch norm inside branches");
  s.add("shortcut_norm", true, "Batch norm on the shortcut");
  s.add("dropout", 0.1, "Spatial dropout rate");
}

seg::SegConfig seg_config_from(const json& j) {
  seg::SegConfig c;
  c.n_blocks = j.at("blocks").get<std::size_t>();
  c.branch_filters = j.at("branch_filters").get<std::size_t>();
  c.shortcut_filters = 3 * c.branch_filters;
  c.convs_per_branch = j.at("convs_per_branch").get<std::size_t>();
  c.branch_norm = j.at("branch_norm").get<bool>();
  c.shortcut_norm = j.at("shortcut_norm").get<bool>();
  c.dropout = j.at("dropout").get<double>();
  c.validate();
  return c;
}

void declare_train_seg(Settings& s) {
  s.add("bundle", "", "Training bundle with segmentation truth");
  s.add("val_bundle", "", "Validation bundle (default: group-aware split of --bundle)");
  s.add("val_fraction", 0.2, "Validation share when --val-bundle is absent");
  s.add("out", "", "Output weights (.cxwt); <out>.json holds the architecture");
  s.add("history", "", "History CSV (default <out>.history.csv)");
  s.add("epochs", 50, "Epochs");
  s.add("batch_size", 8, "Batch size");
  s.add("lr", 1e-3, "Adam learning rate");
  s.add("smoothing", 1.0, "Tanimoto smoothing");
  s.add("contour_w0", 2.0, "Contour weight amplitude");
  s.add("contour_sigma", 3.0, "Contour weight width, pixels");
  s.add("weight_both_channels", true, "Apply contour weights to both class channels");
  s.add("shuffle", false, "Shuffle batches each epoch");
  s.add("augment", false, "Augment training images");
  s.add("stop_at_val_dice", 0.0, "Stop once validation Dice reaches this (0 disables)");
  declare_seg_arch(s);
}

json seg_arch_json(const Settings& s) {
  json a;
  for (const char* k : {"blocks", "branch_filters", "convs_per_branch", "branch_norm", "shortcut_norm", "dropout"})
    a[k] = s.raw(k);
  return a;
}

void require_seg_truth(const std::vector<data::Sample>& v, const std::string& what) {
  for (const auto& smp : v)
    if (smp.seg_truth.empty()) throw ValidationError(what + ": sample '" + smp.id + "' has no segmentation truth");
}

void run_train_seg(const Settings& s, std::uint64_t seed) {
  const fs::path out = s.required_path("out");
  const json arch = seg_arch_json(s);
  const seg::SegConfig cfg = seg_config_from(arch);
  data::DatasetBundle b = data::load_bundle(s.required_path("bundle"));
  std::vector<data::Sample> train, val;
  if (!s.str("val_bundle").empty()) {
    train = std::move(b.samples);
    val = data::load_bundle(s.path("val_bundle")).samples;
  } else {
    const double f = s.num("val_fraction");
    if (!(f > 0.0 && f < 1.0)) throw ParameterError("val_fraction must lie in (0,1)");
    const std::size_t k = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(1.0 / f)));
    std::vector<int> labels;
    std::vector<std::string> groups;
    for (const auto& smp : b.samples) {
      labels.push_back(std::max(0, smp.label));
      groups.push_back(smp.group.empty() ? smp.id : smp.group);
    }
    const data::FoldPlan plan = data::plan_folds(labels, groups, k, seed);
    for (const auto& w : plan.warnings) log_line("fold plan warning: " + w);
    for (std::size_t i : plan.folds[0].train) train.push_back(b.samples[i]);
    for (std::size_t i : plan.folds[0].val) val.push_back(b.samples[i]);
  }
  require_seg_truth(train, "training set");
  require_seg_truth(val, "validation set");

  seg::SegTrainConfig tc;
  tc.epochs = s.size("epochs");
  tc.batch_size = s.size("batch_size");
  tc.adam.lr = s.num("lr");
  tc.smoothing = s.num("smoothing");
  tc.contour.w0 = s.num("contour_w0");
  tc.contour.sigma = s.num("contour_sigma");
  tc.weight_both_channels = s.flag("weight_both_channels");
  tc.shuffle = s.flag("shuffle");
  tc.augment = s.flag("augment");
  tc.stop_at_val_dice = s.num("stop_at_val_dice");
  tc.seed = Rng(seed).fork(2).next_u64();

  nn::Graph g = seg::build_segnet(cfg, Rng(seed).fork(1).next_u64());
  log_line("segmentation network: " + std::to_string(g.count_params().total) + " parameters, " +
           std::to_string(train.size()) + " train / " + std::to_string(val.size()) + " val images");
  const seg::SegHistory h = seg::train_seg(g, train, val, tc, [](const seg::SegEpoch& e) {
    log_line("epoch " + std::to_string(e.epoch) + " loss " + g9(e.train_loss) + " dice " + g9(e.train_dice) +
             " val_loss " + g9(e.val_loss) + " val_dice " + g9(e.val_dice) + " (" + g9(e.seconds) + " s)");
  });
  std::string csv = "epoch,train_loss,train_dice,val_loss,val_dice\n";
  for (const auto& e : h.epochs)
    csv += std::to_string(e.epoch) + "," + g17(e.train_loss) + "," + g17(e.train_dice) + "," + g17(e.val_loss) + "," +
           g17(e.val_dice) + "\n";
  ensure_parent(out);
  nn::save_weights(g, out);
  write_text(with_suffix(out, ".json"), json{{"format", "cxrnet-segnet"}, {"config", arch}}.dump(2) + "\n");
  write_text(s.str("history").empty() ? with_suffix(out, ".history.csv") : s.path("history"), csv);
  std::cout << "best epoch " << h.best_epoch << " val_dice " << g9(h.best_val_dice) << "\n";
}

void declare_segment(Settings& s) {
  s.add("weights", "", "Segmentation weights (.cxwt)");
  s.add("model_config", "", "Architecture JSON (default <weights>.json)");
  s.add("bundle", "", "Input bundle");
  s.add("images", "", "Input directory of PGM images (alternative to --bundle)");
  s.add("labels", "", "Labels CSV (id,label) for directory input");
  s.add("equalize", true, "Histogram-equalise directory images");
  s.add("out_dir", "", "Directory for <id>.pgm lung probability masks");
  s.add("out_bundle", "", "Also write the input samples with predicted float masks");
  s.add("report", "", "Per-image Dice CSV when segmentation truth is available");
}

void run_segment(const Settings& s, std::uint64_t) {
  const fs::path weights = s.required_path("weights");
  const fs::path mc = s.str("model_config").empty() ? with_suffix(weights, ".json") : s.path("model_config");
  const json meta = read_json(mc);
  seg::SegConfig cfg;
  try {
    cfg = seg_config_from(meta.at("config"));
  } catch (const json::exception& e) {
    throw FormatError("format error in " + mc.string() + ": " + e.what());
  }
  nn::Graph g = seg::build_segnet(cfg, 0);
  nn::load_weights(g, weights);

  data::DatasetBundle b;
  if (!s.str("bundle").empty()) {
    b = data::load_bundle(s.path("bundle"));
  } else if (!s.str("images").empty()) {
    b.samples = load_dir(s.path("images"), {}, false, s.path("labels"), 0, 0, s.flag("equalize"));
    b.height = b.samples.front().image.dim(0);
    b.width = b.samples.front().image.dim(1);
  } else {
    throw ParameterError("one of --bundle or --images is required");
  }
  const fs::path out_dir = s.required_path("out_dir");
  fs::create_directories(out_dir);
  std::string report = "id,dice\n";
  double dice_sum = 0.0;
  std::size_t with_truth = 0;
  for (auto& smp : b.samples) {
    const Tensor m = seg::predict_mask(g, smp.image);
    img::save_pgm(m, out_dir / (smp.id + ".pgm"), 16);
    if (!smp.seg_truth.empty()) {
      Tensor truth({m.dim(0), m.dim(1)});
      for (std::size_t i = 0; i < truth.numel(); ++i) truth[i] = smp.seg_truth[2 * i];
      const double d = binary_dice(m, truth);
      report += smp.id + "," + g17(d) + "\n";
      dice_sum += d;
      ++with_truth;
    }
    smp.float_mask = m;
  }
  if (!s.str("out_bundle").empty()) {
    ensure_parent(s.path("out_bundle"));
    data::save_bundle(b, s.path("out_bundle"));
  }
  if (!s.str("report").empty()) write_text(s.path("report"), report);
  std::cout << "segmented " << b.samples.size() << " images";
  if (with_truth) std::cout << ", mean dice " << g9(dice_sum / static_cast<double>(with_truth));
  std::cout << "\n";
}

// ------------------------------------------------------------------ classification

void declare_clf_model(Settings& s) {
  s.add("J", 2, "Scattering scales");
  s.add("L", 6, "Scattering orientations");
  s.add("n_blocks", 3, "Residual blocks");
  s.add("kernel", 3, "Kernel size");
  s.add("dilations", json::array({1, 2, 3}), "Dilation rates of the three branches");
  s.add("branch_filters", 17, "Filters per branch");
  s.add("shortcut_filters", 51, "Shortcut filters");
  s.add("heads", 2, "Attention heads");
  s.add("head_size", 64, "Attention head size");
  s.add("dropout", 0.1, "Spatial dropout rate");
  s.add("pool_mode", "mask_only", "mask_only, mask_and_threshold or image_weighted");
  s.add("tau", 0.5, "Threshold for mask_and_threshold");
}

clf::ClfConfig clf_config(const Settings& s, std::size_t h, std::size_t w) {
  clf::ClfConfig c;
  c.scatter.J = static_cast<int>(s.integer("J"));
  c.scatter.L = static_cast<int>(s.integer("L"));
  c.scatter.height = h;
  c.scatter.width = w;
  c.n_blocks = s.size("n_blocks");
  c.kernel = s.size("kernel");
  c.dilations = s.sizes("dilations");
  c.branch_filters = s.size("branch_filters");
  c.shortcut_filters = s.size("shortcut_filters");
  c.heads = s.size("heads");
  c.head_size = s.size("head_size");
  c.dropout = s.num("dropout");
  c.pool_mode = clf::parse_pool_mode(s.str("pool_mode"));
  c.tau = s.num("tau");
  c.validate();
  return c;
}

json clf_config_json(const clf::ClfConfig& c) {
  return json{{"J", c.scatter.J},
              {"L", c.scatter.L},
              {"height", c.scatter.height},
              {"width", c.scatter.width},
              {"n_blocks", c.n_blocks},
              {"kernel", c.kernel},
              {"dilations", c.dilations},
              {"branch_filters", c.branch_filters},
              {"shortcut_filters", c.shortcut_filters},
              {"heads", c.heads},
              {"head_size", c.head_size},
              {"dropout", c.dropout},
              {"slope", c.slope},
              {"pool_mode", clf::to_string(c.pool_mode)},
              {"tau", c.tau}};
}

clf::ClfConfig clf_config_from_json(const json& j) {
  clf::ClfConfig c;
  c.scatter.J = j.at("J").get<int>();
  c.scatter.L = j.at("L").get<int>();
  c.scatter.height = j.at("height").get<std::size_t>();
  c.scatter.width = j.at("width").get<std::size_t>();
  c.n_blocks = j.at("n_blocks").get<std::size_t>();
  c.kernel = j.at("kernel").get<std::size_t>();
  c.dilations = j.at("dilations").get<std::vector<std::size_t>>();
  c.branch_filters = j.at("branch_filters").get<std::size_t>();
  c.shortcut_filters = j.at("shortcut_filters").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.head_size = j.at("head_size").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.slope = j.at("slope").get<double>();
  c.pool_mode = clf::parse_pool_mode(j.at("pool_mode").get<std::string>());
  c.tau = j.at("tau").get<double>();
  c.validate();
  return c;
}

void apply_masks_dir(std::vector<data::Sample>& samples, const fs::path& dir) {
  for (auto& smp : samples) {
    const fs::path p = dir / (smp.id + ".pgm");
    if (!fs::exists(p)) throw ValidationError("missing mask for image '" + smp.id + "' (expected " + p.string() + ")");
    Tensor m = img::load_pgm(p);
    if (m.shape() != smp.image.shape()) m = img::resize_bilinear(m, smp.image.dim(0), smp.image.dim(1));
    smp.float_mask = std::move(m);
  }
}

void require_masks(const std::vector<data::Sample>& samples) {
  for (const auto& smp : samples)
    if (smp.float_mask.empty()) throw ValidationError("missing mask for image '" + smp.id + "'");
}

void declare_train_clf(Settings& s) {
  s.add("bundle", "", "Labelled bundle with float lung masks");
  s.add("masks", "", "Directory of <id>.pgm masks replacing the bundle's float masks");
  s.add("folds", 6, "Cross-validation folds, one ensemble member each");
  s.add("out_dir", "", "Output directory");
  s.add("epochs", 60, "Epochs per fold");
  s.add("batch_size", 13, "Batch size");
  s.add("lr", 1e-3, "Adam learning rate");
  s.add("augment", false, "Augment training images (re-scatters every epoch)");
  s.add("augment_val", false, "Augment validation images too");
  s.add("workers", 1, "Folds trained in parallel (capped by CXRNET_THREADS)");
  declare_clf_model(s);
}

void run_train_clf(const Settings& s, std::uint64_t seed) {
  const fs::path out_dir = s.required_path("out_dir");
  data::DatasetBundle b = data::load_bundle(s.required_path("bundle"));
  if (!s.str("masks").empty()) apply_masks_dir(b.samples, s.path("masks"));
  require_masks(b.samples);
  if (b.samples.empty()) throw ValidationError("empty bundle");
  for (const auto& smp : b.samples)
    if (smp.label != 0 && smp.label != 1) throw ValidationError("sample '" + smp.id + "' has no label");
  const clf::ClfConfig cfg = clf_config(s, b.height, b.width);
  const std::size_t k = s.size("folds");
  if (k < 2) throw ParameterError("at least 2 folds are required");

  std::vector<int> labels = b.labels();
  std::vector<std::string> groups;
  for (const auto& smp : b.samples) groups.push_back(smp.group.empty() ? smp.id : smp.group);
  const data::FoldPlan plan = data::plan_folds(labels, groups, k, seed);
  for (const auto& w : plan.warnings) std::cerr << "[cxrnet] fold plan warning: " << w << "\n";
  std::string folds_csv = "id,group,label,fold\n";
  for (std::size_t i = 0; i < b.samples.size(); ++i)
    folds_csv += b.samples[i].id + "," + groups[i] + "," + std::to_string(labels[i]) + "," +
                 std::to_string(plan.fold_of[i]) + "\n";
  for (std::size_t f = 0; f < k; ++f)
    std::cout << "fold " << f << ": " << plan.folds[f].train.size() << " train / " << plan.folds[f].val.size()
              << " val, " << plan.folds[f].val_positives << " positive in val\n";

  std::vector<const Tensor*> images;
  for (const auto& smp : b.samples) images.push_back(&smp.image);
  const img::Standardization stats = img::compute_standardization(images);
  const wst::FilterBank fb = wst::build_filterbank(cfg.scatter);
  std::vector<clf::MemberInputs> inputs;
  inputs.reserve(b.samples.size());
  for (const auto& smp : b.samples)
    inputs.push_back(clf::prepare_inputs(smp.image, smp.float_mask, fb, stats, cfg.pool_mode, cfg.tau));

  clf::ClfTrainConfig tc;
  tc.epochs = s.size("epochs");
  tc.batch_size = s.size("batch_size");
  tc.adam.lr = s.num("lr");
  tc.augment = s.flag("augment");
  tc.augment_val = s.flag("augment_val");

  std::vector<io::Bytes> weights(k);
  std::vector<std::string> histories(k);
  std::vector<std::exception_ptr> errors(k);
  auto train_fold = [&](std::size_t f) {
    try {
      nn::Graph g = clf::build_member(cfg, Rng(seed).fork(100 + f).next_u64());
      clf::FoldData fd{&b.samples, plan.folds[f].train, plan.folds[f].val, &inputs, &fb, stats};
      clf::ClfTrainConfig t = tc;
      t.seed = Rng(seed).fork(200 + f).next_u64();
      const clf::ClfHistory h = clf::train_clf(g, fd, cfg, t, [f](const clf::ClfEpoch& e) {
        std::cerr << "[cxrnet] fold " << f << " epoch " << e.epoch << " loss " << g9(e.train_loss) << " acc "
                  << g9(e.train_accuracy) << " val_loss " << g9(e.val_loss) << " val_acc " << g9(e.val_accuracy)
                  << " val_auc " << g9(e.val_auc) << " (" << g9(e.seconds) << " s)\n";
      });
      std::string csv = "epoch,train_loss,train_accuracy,val_loss,val_accuracy,val_auc\n";
      for (const auto& e : h.epochs)
        csv += std::to_string(e.epoch) + "," + g17(e.train_loss) + "," + g17(e.train_accuracy) + "," +
               g17(e.val_loss) + "," + g17(e.val_accuracy) + "," + g17(e.val_auc) + "\n";
      histories[f] = std::move(csv);
      weights[f] = nn::weights_to_bytes(g.params());
    } catch (...) {
      errors[f] = std::current_exception();
    }
  };
  std::size_t workers = std::max<std::size_t>(1, s.size("workers"));
  if (const std::size_t cap = thread_cap()) workers = std::min(workers, cap);
  workers = std::min(workers, k);
  if (workers == 1) {
    for (std::size_t f = 0; f < k; ++f) train_fold(f);
  } else {
    std::vector<std::thread> pool;
    std::size_t next = 0;
    std::mutex mu;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (;;) {
          std::size_t f;
          {
            std::lock_guard<std::mutex> lock(mu);
            if (next >= k) return;
            f = next++;
          }
          train_fold(f);
        }
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  fs::create_directories(out_dir);
  json members = json::array();
  for (std::size_t f = 0; f < k; ++f) {
    const std::string name = "member_" + std::to_string(f) + ".cxwt";
    io::write_file_atomic(out_dir / name, weights[f]);
    write_text(out_dir / ("history_" + std::to_string(f) + ".csv"), histories[f]);
    members.push_back(name);
  }
  write_text(out_dir / "folds.csv", folds_csv);
  const json model{{"format", "cxrnet-classifier"},
                   {"config", clf_config_json(cfg)},
                   {"mean", stats.mean},
                   {"std", stats.std},
                   {"members", members}};
  write_text(out_dir / "model.json", model.dump(2) + "\n");
  std::cout << "trained " << k << " members in " << out_dir.string() << "\n";
}

void declare_ensemble(Settings& s) {
  s.add("model", "", "model.json written by train-clf");
  s.add("members", "", "Comma-separated member weight files (default: all listed in model.json)");
  s.add("fusion", "feature_mean", "feature_mean or probability_mean");
  s.add("out", "", "Output ensemble (.cxen)");
}

void run_ensemble(const Settings& s, std::uint64_t) {
  const fs::path model = s.required_path("model");
  const fs::path out = s.required_path("out");
  const json meta = read_json(model);
  clf::EnsembleFile e;
  std::vector<fs::path> files;
  try {
    e.cfg = clf_config_from_json(meta.at("config"));
    e.stats.mean = meta.at("mean").get<double>();
    e.stats.std = meta.at("std").get<double>();
    if (s.str("members").empty())
      for (const auto& m : meta.at("members")) files.push_back(model.parent_path() / m.get<std::string>());
  } catch (const json::exception& ex) {
    throw FormatError("format error in " + model.string() + ": " + ex.what());
  }
  if (!s.str("members").empty()) {
    std::stringstream ss(s.str("members"));
    std::string p;
    while (std::getline(ss, p, ','))
      if (!p.empty()) files.emplace_back(p);
  }
  if (files.empty()) throw ParameterError("no member weights given");
  e.fusion = clf::parse_fusion(s.str("fusion"));
  for (const fs::path& f : files) e.members.push_back(io::read_file(f));
  // Validates every member against the topology before writing.
  nn::Graph g = clf::instantiate_ensemble(e);
  ensure_parent(out);
  clf::save_ensemble(e, out);
  std::cout << "ensemble of " << e.members.size() << " members, " << g.count_params().total << " parameters\n";
}

struct ClfModel {
  clf::EnsembleFile file;
  nn::Graph graph;
};

ClfModel load_model(const Settings& s) {
  clf::EnsembleFile e = clf::load_ensemble(s.required_path("ensemble"));
  if (!s.str("pool_mode").empty()) e.cfg.pool_mode = clf::parse_pool_mode(s.str("pool_mode"));
  if (s.num("tau") >= 0.0) e.cfg.tau = s.num("tau");
  e.cfg.validate();
  nn::Graph g = clf::instantiate_ensemble(e);
  return {std::move(e), std::move(g)};
}

void check_extent(const data::Sample& smp, const clf::ClfConfig& cfg) {
  if (smp.image.dim(0) != cfg.scatter.height || smp.image.dim(1) != cfg.scatter.width)
    throw ShapeError("image '" + smp.id + "' is " + shape_str(smp.image.shape()) + ", the model expects " +
                     std::to_string(cfg.scatter.height) + "x" + std::to_string(cfg.scatter.width));
}

void declare_classify(Settings& s) {
  s.add("ensemble", "", "Ensemble file (.cxen)");
  s.add("bundle", "", "Input bundle with float masks");
  s.add("images", "", "Input directory of PGM images");
  s.add("masks", "", "Directory of <id>.pgm lung masks (required with --images)");
  s.add("labels", "", "Labels CSV (id,label); adds a label column");
  s.add("equalize", true, "Histogram-equalise directory images");
  s.add("pool_mode", "", "Override the ensemble's pooling mode");
  s.add("tau", -1.0, "Override the ensemble's threshold (negative keeps it)");
  s.add("batch_size", 16, "Prediction batch size");
  s.add("out", "", "Prediction CSV");
}

std::vector<data::Sample> load_clf_inputs(const Settings& s, const clf::ClfConfig& cfg) {
  std::vector<data::Sample> samples;
  if (!s.str("bundle").empty()) {
    samples = data::load_bundle(s.path("bundle")).samples;
    if (!s.str("masks").empty()) apply_masks_dir(samples, s.path("masks"));
  } else if (!s.str("images").empty()) {
    if (s.str("masks").empty()) throw ParameterError("--masks is required with --images");
    samples = load_dir(s.path("images"), s.path("masks"), true, s.path("labels"), cfg.scatter.height,
                       cfg.scatter.width, s.flag("equalize"));
  } else {
    throw ParameterError("one of --bundle or --images is required");
  }
  require_masks(samples);
  for (const auto& smp : samples) check_extent(smp, cfg);
  return samples;
}

void run_classify(const Settings& s, std::uint64_t) {
  const fs::path out = s.required_path("out");
  ClfModel m = load_model(s);
  const clf::ClfConfig& cfg = m.file.cfg;
  std::vector<data::Sample> samples = load_clf_inputs(s, cfg);
  if (!s.str("labels").empty() && !s.str("bundle").empty()) {
    const auto lab = read_labels(s.path("labels"));
    for (auto& smp : samples)
      if (auto it = lab.find(smp.id); it != lab.end()) smp.label = it->second;
  }
  const wst::FilterBank fb = wst::build_filterbank(cfg.scatter);
  std::vector<clf::MemberInputs> inputs;
  for (const auto& smp : samples)
    inputs.push_back(clf::prepare_inputs(smp.image, smp.float_mask, fb, m.file.stats, cfg.pool_mode, cfg.tau));
  const std::vector<double> p = clf::predict(m.graph, inputs, std::max<std::size_t>(1, s.size("batch_size")));
  const bool labelled = std::all_of(samples.begin(), samples.end(), [](const auto& x) { return x.label >= 0; });
  std::string csv = labelled ? "id,p_covid,p_noncovid,label\n" : "id,p_covid,p_noncovid\n";
  std::vector<int> labels;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    csv += samples[i].id + "," + g17(p[i]) + "," + g17(1.0 - p[i]);
    if (labelled) {
      csv += "," + std::to_string(samples[i].label);
      labels.push_back(samples[i].label);
    }
    csv += "\n";
  }
  write_text(out, csv);
  std::cout << "classified " << samples.size() << " images";
  if (labelled && std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0)
    std::cout << ", roc_auc " << g9(roc_auc(p, labels));
  std::cout << "\n";
}

void declare_gradcam(Settings& s) {
  s.add("ensemble", "", "Ensemble file (.cxen), feature_mean fusion");
  s.add("image", "", "Input PGM image");
  s.add("mask", "", "Input PGM lung mask");
  s.add("bundle", "", "Take the image from this bundle instead");
  s.add("id", "", "Sample id within --bundle");
  s.add("equalize", true, "Histogram-equalise a PGM input");
  s.add("pool_mode", "", "Override the ensemble's pooling mode");
  s.add("tau", -1.0, "Override the ensemble's threshold (negative keeps it)");
  s.add("out_prefix", "", "Writes <prefix>_pos.pgm, _neg.pgm, _diff.pgm and _overlay.ppm");
}

void run_gradcam(const Settings& s, std::uint64_t) {
  const std::string prefix = s.required_path("out_prefix").string();
  ClfModel m = load_model(s);
  const clf::ClfConfig& cfg = m.file.cfg;
  data::Sample smp;
  if (!s.str("bundle").empty()) {
    if (s.str("id").empty()) throw ParameterError("--id is required with --bundle");
    data::DatasetBundle b = data::load_bundle(s.path("bundle"));
    auto it = std::find_if(b.samples.begin(), b.samples.end(), [&](const auto& x) { return x.id == s.str("id"); });
    if (it == b.samples.end()) throw ValidationError("no sample '" + s.str("id") + "' in " + s.str("bundle"));
    smp = *it;
  } else {
    const fs::path ip = s.required_path("image");
    if (s.str("mask").empty()) throw ParameterError("--mask is required (the classifier needs a lung mask)");
    smp.id = ip.stem().string();
    smp.image = prepare_image(img::load_pgm(ip), cfg.scatter.height, cfg.scatter.width, s.flag("equalize"));
    smp.float_mask = img::resize_bilinear(img::load_pgm(s.path("mask")), cfg.scatter.height, cfg.scatter.width);
  }
  if (smp.float_mask.empty()) throw ValidationError("missing mask for image '" + smp.id + "'");
  check_extent(smp, cfg);
  const wst::FilterBank fb = wst::build_filterbank(cfg.scatter);
  const clf::MemberInputs in = clf::prepare_inputs(smp.image, smp.float_mask, fb, m.file.stats, cfg.pool_mode, cfg.tau);
  const sal::SaliencyMaps maps = sal::gradcam_pair(m.graph, in);
  const std::size_t H = smp.image.dim(0), W = smp.image.dim(1);
  const Tensor pos = sal::upsample(maps.positive, H, W);
  const Tensor neg = sal::upsample(maps.negative, H, W);
  const Tensor diff = sal::upsample(maps.diff, H, W);
  ensure_parent(fs::path(prefix));
  img::save_pgm(sal::to_unit(pos), prefix + "_pos.pgm", 16);
  img::save_pgm(sal::to_unit(neg), prefix + "_neg.pgm", 16);
  img::save_pgm(sal::to_unit_signed(diff), prefix + "_diff.pgm", 16);
  img::save_ppm(sal::overlay(smp.image, diff), prefix + "_overlay.ppm");
  std::cout << smp.id << ": p_covid " << g9(maps.probs[1]) << ", p_noncovid " << g9(maps.probs[0]) << "\n";
}

void declare_eval(Settings& s) {
  s.add("pred", "", "Prediction CSV with id and p_covid columns");
  s.add("truth", "", "Truth CSV with id and label columns");
  s.add("threshold", 0.5, "Decision threshold on p_covid");
  s.add("out", "", "Metrics CSV");
  s.add("roc", "", "Optional ROC curve CSV");
}

void run_eval(const Settings& s, std::uint64_t) {
  const fs::path pred = s.required_path("pred");
  const fs::path truth = s.required_path("truth");
  const auto labels = read_labels(truth);
  std::vector<double> p;
  std::vector<int> y;
  for (const CsvRow& r : read_csv(pred)) {
    const std::string& id = cell(r, "id", pred);
    auto it = labels.find(id);
    if (it == labels.end()) throw ValidationError("id '" + id + "' of " + pred.string() + " is not in " + truth.string());
    p.push_back(parse_double(cell(r, "p_covid", pred), pred.string()));
    y.push_back(it->second);
  }
  if (p.empty()) throw ValidationError("no predictions in " + pred.string());
  const EvalReport rep = evaluate(p, y, s.num("threshold"));
  const std::string csv = report_csv(rep);
  if (!s.str("out").empty()) write_text(s.path("out"), csv);
  if (!s.str("roc").empty()) write_text(s.path("roc"), roc_csv(rep));
  std::cout << csv;
}

}  // namespace

const std::vector<Command>& commands() {
  static const std::vector<Command> cmds{
      {"synth", "Generate a synthetic phantom bundle", true, declare_synth, run_synth},
      {"train-seg", "Train the lung segmentation network", true, declare_train_seg, run_train_seg},
      {"segment", "Predict lung masks", false, declare_segment, run_segment},
      {"train-clf", "Train one classifier per cross-validation fold", true, declare_train_clf, run_train_clf},
      {"ensemble", "Combine trained members into an ensemble file", false, declare_ensemble, run_ensemble},
      {"classify", "Predict Covid probabilities", false, declare_classify, run_classify},
      {"gradcam", "Grad-CAM saliency maps for one image", false, declare_gradcam, run_gradcam},
      {"eval", "Classification metrics from predictions and truth", false, declare_eval, run_eval},
  };
  return cmds;
}

}  // namespace cxr::cli
