// Command-line front end: train, eval, gradcam, inspect, bench.
//
// Exit codes: 0 ok, 2 configuration or input error, 3 divergence,
// 4 corrupt artifact, 5 unknown layer reference, 1 anything else.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "clap/checkpoint.hpp"
#include "clap/data.hpp"
#include "clap/gradcam.hpp"
#include "clap/metrics.hpp"
#include "clap/model.hpp"
#include "clap/run_config.hpp"
#include "clap/runtime.hpp"
#include "clap/trainer.hpp"

namespace fs = std::filesystem;
using namespace clap;

namespace {

using Real = float;

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitCorrupt = 4;
constexpr int kExitLayer = 5;

// Published reference figures printed beside the computed values.
constexpr const char* kReferenceParams = "4,991,554";
constexpr const char* kReferenceGflops = "0.2";

// Raw flag values; resolved into a RunConfig once parsing is done.
struct Flags {
  std::string data;
  bool synthetic = false;
  std::size_t classes = 4;
  std::size_t image_size = 224;
  std::string variant = "full";
  std::size_t epochs = 300;
  double lr = 0.008;
  std::size_t batch = 32;
  double momentum = 0.9;
  std::string schedule = "constant";
  std::size_t step_every = 100;
  double step_factor = 0.1;
  double dropout = 0.2;
  std::string bn_order = "literal";
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string out;
  std::string checkpoint;
  std::size_t checkpoint_every = 0;
  std::string layer;
  std::string format = "text";
  std::string widths = "32,64,128,256,512,1024";
  std::size_t decoder_width = 1024;
  std::size_t per_class = 250;
  std::string split = "0.6,0.2,0.2";
  bool augment = false;
  bool no_augment = false;
  std::size_t limit = 100;
  std::size_t iterations = 50;
  std::size_t bench_batch = 1;
};

std::string with_commas(std::size_t v) {
  std::string s = std::to_string(v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidConfig("cannot write '" + path.string() + "'");
  out << text;
}

SplitSpec parse_split(const std::string& s, std::uint64_t seed) {
  std::vector<double> f;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    try {
      f.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw InvalidConfig("--split expects three comma-separated fractions, got '" + s + "'");
    }
  }
  if (f.size() != 3) throw InvalidConfig("--split expects three comma-separated fractions, got '" + s + "'");
  SplitSpec spec{f[0], f[1], f[2], seed};
  spec.validate();
  return spec;
}

// Output directory: --out, else $CLAP_OUT_DIR (default "runs") plus a
// timestamped name.
fs::path make_run_dir(const std::string& out, const std::string& command) {
  fs::path dir;
  if (!out.empty()) {
    dir = out;
  } else {
    const char* root = std::getenv("CLAP_OUT_DIR");
    const std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", std::localtime(&now));
    dir = fs::path(root && *root ? root : "runs") / (command + "-" + stamp);
    for (int k = 1; fs::exists(dir); ++k) dir = fs::path(dir.string() + "-" + std::to_string(k));
  }
  fs::create_directories(dir);
  return dir;
}

class Cli {
 public:
  Cli() : app_("Convolutional lightweight autoencoder classifier") {
    app_.require_subcommand(1);
    app_.set_help_all_flag("--help-all", "Show help for every command");

    auto* train = app_.add_subcommand("train", "Train a model and write history, checkpoints, and reports");
    add_data(train);
    add_model(train);
    add_training(train);
    add_common(train);
    train->add_option("--checkpoint", f_.checkpoint, "Resume from this checkpoint");
    train->add_option("--checkpoint-every", f_.checkpoint_every, "Also save every N epochs (0: best and final only)");
    train->add_flag("--augment", f_.augment, "Apply rotation/scale/crop augmentation (default for --data)");
    train->add_flag("--no-augment", f_.no_augment, "Disable augmentation");
    train->callback([this] { code_ = run_train(); });

    auto* eval = app_.add_subcommand("eval", "Evaluate a checkpoint and write a metrics report");
    add_data(eval);
    add_common(eval);
    eval->add_option("--checkpoint", f_.checkpoint, "Checkpoint to evaluate")->required();
    eval->add_option("--batch", f_.batch, "Batch size");
    eval->callback([this] { code_ = run_eval(); });

    auto* cam = app_.add_subcommand("gradcam", "Write Grad-CAM heatmap overlays as PPM images");
    add_data(cam);
    add_common(cam);
    cam->add_option("--checkpoint", f_.checkpoint, "Checkpoint to explain")->required();
    cam->add_option("--layer", f_.layer, "Target sepconv layer (default: last encoder layer)");
    cam->add_option("--limit", f_.limit, "Maximum number of images");
    cam->callback([this] { code_ = run_gradcam(); });

    auto* inspect = app_.add_subcommand("inspect", "Print per-layer parameter and FLOP counts");
    add_model(inspect);
    add_common(inspect);
    inspect->add_option("--checkpoint", f_.checkpoint, "Take the model configuration from this checkpoint");
    inspect->add_option("--classes", f_.classes, "Number of classes");
    inspect->callback([this] { code_ = run_inspect(); });

    auto* bench = app_.add_subcommand("bench", "Measure forward latency (never asserted)");
    add_model(bench);
    add_common(bench);
    bench->add_option("--checkpoint", f_.checkpoint, "Benchmark this checkpoint");
    bench->add_option("--classes", f_.classes, "Number of classes");
    bench->add_option("--batch", f_.bench_batch, "Images per forward pass");
    bench->add_option("--iterations", f_.iterations, "Timed iterations after warm-up");
    bench->callback([this] { code_ = run_bench(); });
  }

  int main(int argc, char** argv) {
    try {
      app_.parse(argc, argv);
      return code_;
    } catch (const CLI::ParseError& e) {
      // Help requests exit 0; every parse error is a configuration error.
      if (e.get_exit_code() == 0) return app_.exit(e);
      std::cerr << "error: " << e.what() << "\n";
      return kExitConfig;
    } catch (const DivergenceDetected& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitDivergence;
    } catch (const CorruptCheckpoint& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitCorrupt;
    } catch (const MalformedImage& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitCorrupt;
    } catch (const InvalidLayer& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitLayer;
    } catch (const InvalidConfig& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitConfig;
    } catch (const EmptyDataset& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitConfig;
    } catch (const InsufficientData& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitConfig;
    } catch (const InvalidLabel& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitConfig;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }

 private:
  void add_common(CLI::App* cmd) {
    cmd->add_option("--seed", f_.seed, "Seed for initialization, shuffling, dropout, and synthetic data");
    cmd->add_option("--workers", f_.workers, "Worker threads; results do not depend on this");
    cmd->add_option("--out", f_.out, "Run directory (default: $CLAP_OUT_DIR or ./runs, timestamped)");
    cmd->add_option("--format", f_.format, "Report format on stdout: text or csv");
  }

  void add_data(CLI::App* cmd) {
    auto* data = cmd->add_option("--data", f_.data, "Dataset root with one subdirectory per class");
    auto* syn = cmd->add_flag("--synthetic", f_.synthetic, "Use the synthetic blob dataset");
    data->excludes(syn);
    cmd->add_option("--classes", f_.classes, "Synthetic classes");
    cmd->add_option("--per-class", f_.per_class, "Synthetic records per class");
    cmd->add_option("--split", f_.split, "train,val,test fractions");
  }

  void add_model(CLI::App* cmd) {
    cmd->add_option("--image-size", f_.image_size, "Square input extent");
    cmd->add_option("--variant", f_.variant, "encoder_only, decoder_i, or full");
    cmd->add_option("--dropout", f_.dropout, "Dropout rate in [0, 1)");
    cmd->add_option("--bn-order", f_.bn_order, "literal (BN after ReLU) or conventional (ReLU after BN)");
    cmd->add_option("--widths", f_.widths, "Comma-separated encoder widths");
    cmd->add_option("--decoder-width", f_.decoder_width, "Decoder channel width");
  }

  void add_training(CLI::App* cmd) {
    cmd->add_option("--epochs", f_.epochs, "Training epochs");
    cmd->add_option("--lr", f_.lr, "Learning rate");
    cmd->add_option("--batch", f_.batch, "Batch size");
    cmd->add_option("--momentum", f_.momentum, "SGD momentum");
    cmd->add_option("--schedule", f_.schedule, "constant or step");
    cmd->add_option("--step-every", f_.step_every, "Epochs between step decays");
    cmd->add_option("--step-factor", f_.step_factor, "Step decay factor");
  }

  bool given(const std::string& name) const {
    for (const auto* sub : app_.get_subcommands()) {
      try {
        if (sub->count(name) > 0) return true;
      } catch (const CLI::OptionNotFound&) {
      }
    }
    return false;
  }

  // Validates flags and folds them into a RunConfig.
  RunConfig resolve(const std::string& command) {
    RunConfig rc;
    rc.command = command;
    if (f_.workers < 1) throw InvalidConfig("--workers must be at least 1");
    if (f_.batch < 1) throw InvalidConfig("--batch must be at least 1");
    if (command == "train") {
      if (!(f_.lr > 0) || !std::isfinite(f_.lr)) {
        std::ostringstream v;
        v << f_.lr;
        throw InvalidConfig("--lr must be a positive number, got " + v.str());
      }
      if (f_.epochs < 1) throw InvalidConfig("--epochs must be at least 1");
      if (!(f_.momentum >= 0 && f_.momentum < 1)) throw InvalidConfig("--momentum must lie in [0, 1)");
    }
    if (!(f_.dropout >= 0 && f_.dropout < 1)) throw InvalidConfig("--dropout must lie in [0, 1)");
    parse_report_style(f_.format);

    // Desk-scale model defaults for the synthetic set unless overridden.
    std::size_t image = f_.image_size, dec = f_.decoder_width;
    std::string widths = f_.widths;
    if (f_.synthetic) {
      if (!given("--image-size")) image = 64;
      if (!given("--widths")) widths = "8,16,32,64";
      if (!given("--decoder-width")) dec = 32;
    }
    rc.model.input_height = rc.model.input_width = image;
    try {
      rc.model.encoder_widths = parse_sizes(widths);
    } catch (const std::exception&) {
      throw InvalidConfig("--widths expects comma-separated positive integers, got '" + widths + "'");
    }
    rc.model.decoder_width = dec;
    rc.model.num_classes = f_.classes;
    try {
      rc.model.variant = parse_variant(f_.variant);
    } catch (const InvalidConfig& e) {
      throw InvalidConfig(std::string("--variant: ") + e.what());
    }
    try {
      rc.model.bn_order = parse_bn_order(f_.bn_order);
    } catch (const InvalidConfig& e) {
      throw InvalidConfig(std::string("--bn-order: ") + e.what());
    }
    rc.model.dropout_rate = f_.dropout;
    rc.model.seed = f_.seed;

    rc.train.epochs = f_.epochs;
    rc.train.learning_rate = f_.lr;
    rc.train.batch_size = f_.batch;
    rc.train.momentum = f_.momentum;
    rc.train.schedule = parse_lr_schedule(f_.schedule);
    rc.train.step_every = f_.step_every;
    rc.train.step_factor = f_.step_factor;
    rc.train.seed = f_.seed;
    rc.train.checkpoint_every = f_.checkpoint_every;
    rc.train.augment = f_.augment || (!f_.data.empty() && !f_.no_augment);
    if (f_.augment && f_.no_augment) throw InvalidConfig("--augment and --no-augment are exclusive");

    rc.data_dir = f_.data;
    rc.synthetic = f_.synthetic;
    rc.per_class = f_.per_class;
    rc.split = parse_split(f_.split, f_.seed);
    rc.workers = f_.workers;
    rc.out_dir = f_.out;
    rc.checkpoint = f_.checkpoint;
    rc.layer = f_.layer;
    rc.format = f_.format;
    rc.limit = f_.limit;
    rc.iterations = f_.iterations;
    set_num_workers(rc.workers);
    return rc;
  }

  void require_data(const RunConfig& rc) const {
    if (rc.data_dir.empty() && !rc.synthetic) throw InvalidConfig("one of --data or --synthetic is required");
  }

  struct Splits {
    std::vector<DatasetRecord> train, val, test;
    std::vector<std::string> class_names;
  };

  // Records at the model's input size. With augmentation the training split
  // stays at canvas size and evaluation splits are center-cropped.
  Splits load_splits(const RunConfig& rc, const ModelConfig& model, bool augment,
                     const std::vector<std::string>& class_names) const {
    Splits s;
    std::vector<DatasetRecord> records;
    const std::size_t size = model.input_height;
    const std::size_t load = augment ? canvas_for_crop(size) : size;
    if (rc.synthetic) {
      auto set = make_synthetic(model.num_classes, rc.per_class, load, rc.split.seed);
      records = std::move(set.records);
      s.class_names = std::move(set.class_names);
    } else {
      auto loaded = load_image_directory(rc.data_dir, load, class_names);
      records = std::move(loaded.records);
      s.class_names = std::move(loaded.class_names);
    }
    auto parts = split(records, rc.split);
    s.train = std::move(parts.train);
    s.val = std::move(parts.val);
    s.test = std::move(parts.test);
    if (augment) {
      for (auto* part : {&s.val, &s.test})
        for (auto& r : *part) r.image = center_crop(r.image, size);
    }
    return s;
  }

  static void write_reports(const fs::path& dir, const EvalReport& report, const std::vector<std::string>& names) {
    write_text(dir / "report.txt", render_report(report, names, ReportStyle::text));
    write_text(dir / "report.csv", render_report(report, names, ReportStyle::csv));
    write_text(dir / "confusion.csv", render_confusion_csv(report.confusion, names));
  }

  int run_train() {
    RunConfig rc = resolve("train");
    require_data(rc);

    std::optional<LoadedCheckpoint<Real>> resume;
    if (!rc.checkpoint.empty()) {
      resume.emplace(load_checkpoint<Real>(rc.checkpoint));
      rc.model = resume->model.config();
    }
    if (!rc.synthetic && !resume) rc.model.num_classes = 0;  // taken from the data below
    Splits data = load_splits(rc, rc.model.num_classes ? rc.model : with_classes(rc.model, 2), rc.train.augment,
                              resume ? resume->class_names : std::vector<std::string>{});
    rc.model.num_classes = data.class_names.size();
    if (resume && resume->model.config().num_classes != rc.model.num_classes) {
      throw InvalidConfig("checkpoint has " + std::to_string(resume->model.config().num_classes) +
                          " classes, data has " + std::to_string(rc.model.num_classes));
    }
    rc.model.validate();
    rc.train.validate();

    const fs::path dir = make_run_dir(rc.out_dir, "train");
    write_text(dir / "config.txt", rc.to_kv().to_text());
    write_class_manifest(dir / kClassManifest, data.class_names);

    Model<Real> model = resume ? resume->model : Model<Real>(rc.model);
    TrainState<Real> state;
    if (resume) {
      state.load_kv(resume->state);
      state.velocity = resume->velocity;
      if (state.epoch >= rc.train.epochs) {
        throw InvalidConfig("--epochs " + std::to_string(rc.train.epochs) + " is not beyond the checkpoint's epoch " +
                            std::to_string(state.epoch));
      }
    }
    Trainer<Real> trainer(model, rc.train, state);
    std::ofstream history(dir / "history.log", resume ? std::ios::app : std::ios::trunc);

    auto save = [&](const std::string& name) {
      const auto st = trainer.snapshot_state();
      KeyValues meta = st.to_kv();
      meta.set("augment", rc.train.augment ? "true" : "false");
      save_checkpoint(dir / name, model, &st.velocity, meta, data.class_names);
    };
    std::cout << "run directory: " << dir.string() << "\n";
    try {
      trainer.fit(data.train, data.val, [&](const EpochRecord& r, bool improved) {
        history << r.to_line() << '\n' << std::flush;
        std::cout << r.to_line() << (improved ? "  *" : "") << "\n" << std::flush;
        if (improved) save("best.ckpt");
        if (rc.train.checkpoint_every && r.epoch % rc.train.checkpoint_every == 0) {
          save("epoch-" + std::to_string(r.epoch) + ".ckpt");
        }
      });
    } catch (const DivergenceDetected&) {
      save("last_good.ckpt");
      std::cerr << "last good parameters saved to " << (dir / "last_good.ckpt").string() << "\n";
      throw;
    }
    save("final.ckpt");

    const auto train_report = evaluate(model, data.train, rc.train.batch_size);
    const auto val_report = evaluate(model, data.val, rc.train.batch_size);
    const auto& final_split = data.test.empty() ? data.val : data.test;
    const auto report = data.test.empty() ? val_report : evaluate(model, data.test, rc.train.batch_size);
    write_reports(dir, report, data.class_names);
    std::ostringstream summary;
    summary << std::fixed << std::setprecision(4) << "train_acc " << train_report.accuracy << "\nval_acc "
            << val_report.accuracy << "\n" << (data.test.empty() ? "val" : "test") << "_acc " << report.accuracy
            << "\nbest_epoch " << trainer.state().best_epoch << "\n";
    write_text(dir / "summary.txt", summary.str());
    std::cout << summary.str() << "report on " << final_split.size() << " " << (data.test.empty() ? "val" : "test")
              << " records:\n"
              << render_report(report, data.class_names, parse_report_style(rc.format));
    return 0;
  }

  static ModelConfig with_classes(ModelConfig c, std::size_t k) {
    c.num_classes = k;
    return c;
  }

  int run_eval() {
    RunConfig rc = resolve("eval");
    require_data(rc);
    auto ck = load_checkpoint<Real>(rc.checkpoint);
    const bool augmented = ck.state.contains("augment") && ck.state.get("augment") == "true";
    Splits data = load_splits(rc, ck.model.config(), augmented, ck.class_names);
    if (!ck.class_names.empty() && data.class_names != ck.class_names) {
      throw InvalidConfig("dataset classes do not match the checkpoint's classes");
    }
    // A directory is evaluated whole; the synthetic set on its held-out split.
    std::vector<DatasetRecord> records;
    if (rc.synthetic) {
      records = data.test.empty() ? data.val : data.test;
    } else {
      records = data.train;
      for (auto* part : {&data.val, &data.test}) records.insert(records.end(), part->begin(), part->end());
    }
    const auto report = evaluate(ck.model, records, rc.train.batch_size);
    const fs::path dir = make_run_dir(rc.out_dir, "eval");
    write_text(dir / "config.txt", rc.to_kv().to_text());
    write_reports(dir, report, data.class_names);
    std::cout << render_report(report, data.class_names, parse_report_style(rc.format));
    return 0;
  }

  int run_gradcam() {
    RunConfig rc = resolve("gradcam");
    require_data(rc);
    auto ck = load_checkpoint<Real>(rc.checkpoint);
    Model<Real>& model = ck.model;
    const std::string layer = rc.layer.empty() ? model.last_encoder_layer() : rc.layer;
    require_conv_layer(model, layer);
    const bool augmented = ck.state.contains("augment") && ck.state.get("augment") == "true";

    std::vector<DatasetRecord> records;
    std::optional<SyntheticSet> boxes;
    if (rc.synthetic) {
      Splits data = load_splits(rc, model.config(), false, ck.class_names);
      records = data.test.empty() ? data.val : data.test;
      boxes.emplace(make_synthetic(model.config().num_classes, rc.per_class, model.config().input_height, rc.split.seed));
    } else {
      Splits data = load_splits(rc, model.config(), augmented, ck.class_names);
      records = data.train;
      for (auto* part : {&data.val, &data.test}) records.insert(records.end(), part->begin(), part->end());
      if (augmented)
        for (auto& r : records)
          if (r.image.dim(1) != model.config().input_height) r.image = center_crop(r.image, model.config().input_height);
    }
    if (records.size() > rc.limit) records.resize(rc.limit);
    if (records.empty()) throw EmptyDataset("no images to explain");

    const fs::path dir = make_run_dir(rc.out_dir, "gradcam");
    write_text(dir / "config.txt", rc.to_kv().to_text());
    fs::create_directories(dir / "heatmaps");
    std::ostringstream summary;
    std::size_t hits = 0;
    std::vector<std::size_t> idx(records.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t b = 0; b < records.size(); b += rc.train.batch_size) {
      const std::size_t e = std::min(records.size(), b + rc.train.batch_size);
      auto x = stack_images<Real>(records, idx, b, e);
      auto pred = argmax_rows(model.predict(x));
      auto maps = grad_cam(model, x, pred, layer);
      for (std::size_t i = b; i < e; ++i) {
        const auto& heat = maps[i - b];
        const auto [px, py] = heatmap_argmax(heat);
        std::string stem = records[i].source_id;
        std::replace(stem.begin(), stem.end(), '/', '_');
        const std::string name = std::to_string(i) + "_" + stem + "_pred" + std::to_string(pred[i - b]);
        write_text(dir / "heatmaps" / (name + ".ppm"), encode_ppm(heatmap_overlay(records[i].image, heat)));
        summary << name << " label=" << records[i].label << " pred=" << pred[i - b] << " argmax=" << px << "," << py;
        if (boxes) {
          const bool inside = boxes->box_for(records[i].source_id).contains(px, py);
          hits += inside;
          summary << " inside_box=" << (inside ? 1 : 0);
        }
        summary << "\n";
      }
    }
    write_text(dir / "gradcam.txt", summary.str());
    std::cout << "layer " << layer << ": wrote " << records.size() << " overlays to " << (dir / "heatmaps").string()
              << "\n";
    if (boxes) {
      std::cout << "localization: " << hits << "/" << records.size() << " heatmap maxima inside the blob box\n";
    }
    return 0;
  }

  Model<Real> model_from_flags_or_checkpoint(const RunConfig& rc) {
    if (!rc.checkpoint.empty()) return load_checkpoint<Real>(rc.checkpoint).model;
    rc.model.validate();
    return Model<Real>(rc.model);
  }

  int run_inspect() {
    RunConfig rc = resolve("inspect");
    if (!given("--classes")) rc.model.num_classes = 22;
    Model<Real> model = model_from_flags_or_checkpoint(rc);
    const auto params = model.count_params();
    const auto flops = model.count_flops();
    std::size_t trainable = 0, frozen = 0, macs = 0;
    std::ostringstream out;
    const bool csv = parse_report_style(rc.format) == ReportStyle::csv;
    if (csv) out << "layer,trainable,non_trainable,height,width,macs,flops\n";
    else
      out << std::left << std::setw(14) << "layer" << std::right << std::setw(12) << "trainable" << std::setw(15)
          << "non-trainable" << std::setw(10) << "extent" << std::setw(15) << "MACs" << std::setw(15) << "FLOPs" << "\n";
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& p = params[i];
      const auto& f = flops[i];
      trainable += p.trainable;
      frozen += p.non_trainable;
      macs += f.macs;
      if (csv) {
        out << p.layer << ',' << p.trainable << ',' << p.non_trainable << ',' << f.height << ',' << f.width << ','
            << f.macs << ',' << f.flops() << "\n";
      } else {
        out << std::left << std::setw(14) << p.layer << std::right << std::setw(12) << with_commas(p.trainable)
            << std::setw(15) << with_commas(p.non_trainable) << std::setw(10)
            << (std::to_string(f.height) + "x" + std::to_string(f.width)) << std::setw(15) << with_commas(f.macs)
            << std::setw(15) << with_commas(f.flops()) << "\n";
      }
    }
    const double gflops = 2.0 * static_cast<double>(macs) / 1e9;
    std::ostringstream g;
    g << std::fixed << std::setprecision(3) << gflops;
    if (csv) {
      out << "total," << trainable << ',' << frozen << ",,," << macs << ',' << 2 * macs << "\n";
    }
    out << "total parameters: " << with_commas(trainable + frozen) << " (trainable " << with_commas(trainable)
        << ", non-trainable " << with_commas(frozen) << ")  reference: " << kReferenceParams << "\n";
    out << "GFLOPs: " << g.str() << "  reference: " << kReferenceGflops << "\n";
    std::cout << out.str();
    if (!rc.out_dir.empty()) {
      const fs::path dir = make_run_dir(rc.out_dir, "inspect");
      write_text(dir / "config.txt", rc.to_kv().to_text());
      write_text(dir / (csv ? "inspect.csv" : "inspect.txt"), out.str());
    }
    return 0;
  }

  int run_bench() {
    RunConfig rc = resolve("bench");
    if (f_.bench_batch < 1) throw InvalidConfig("--batch must be at least 1");
    rc.train.batch_size = f_.bench_batch;
    if (!given("--classes")) rc.model.num_classes = 22;
    Model<Real> model = model_from_flags_or_checkpoint(rc);
    const auto& cfg = model.config();
    Tensor<Real> x({rc.train.batch_size, cfg.input_channels, cfg.input_height, cfg.input_width});
    Rng rng(rc.train.seed);
    for (auto& v : x.data()) v = static_cast<Real>(rng.uniform());
    for (int i = 0; i < 3; ++i) model.predict(x);
    std::vector<double> ms;
    for (std::size_t i = 0; i < std::max<std::size_t>(1, rc.iterations); ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      model.predict(x);
      ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() /
                   static_cast<double>(rc.train.batch_size));
    }
    std::vector<double> sorted = ms;
    std::sort(sorted.begin(), sorted.end());
    const double mean = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
    const double median = sorted.size() % 2 ? sorted[sorted.size() / 2]
                                            : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);
    std::ostringstream out;
    out << std::fixed << std::setprecision(3) << "input " << cfg.input_height << "x" << cfg.input_width << ", batch "
        << rc.train.batch_size << ", workers " << rc.workers << ", " << ms.size() << " iterations\n"
        << "per-image forward latency: mean " << mean << " ms, median " << median << " ms\n";
    std::cout << out.str();
    if (!rc.out_dir.empty()) {
      const fs::path dir = make_run_dir(rc.out_dir, "bench");
      write_text(dir / "config.txt", rc.to_kv().to_text());
      write_text(dir / "bench.txt", out.str());
    }
    return 0;
  }

  CLI::App app_;
  Flags f_;
  int code_ = 0;
};

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  Cli cli;
  return cli.main(argc, argv);
}
