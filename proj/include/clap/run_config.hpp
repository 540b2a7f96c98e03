// Everything a command-line run was started with, serialized as "key = value"
// lines and echoed into the run directory.
#pragma once

#include <cstdio>
#include <string>

#include "clap/config.hpp"
#include "clap/data.hpp"
#include "clap/trainer.hpp"

namespace clap {

struct RunConfig {
  std::string command;
  ModelConfig model;
  TrainConfig train;
  std::string data_dir;
  bool synthetic = false;
  std::size_t per_class = 250;  // synthetic records per class
  SplitSpec split;
  std::size_t workers = 1;
  std::string out_dir;
  std::string checkpoint;
  std::string layer;
  std::string format = "text";
  std::size_t limit = 100;       // gradcam images
  std::size_t iterations = 50;   // bench repetitions

  KeyValues to_kv() const {
    KeyValues kv;
    kv.set("run.command", command);
    kv.merge("model", model.to_kv());
    kv.merge("train", train.to_kv());
    kv.set("data.dir", data_dir);
    kv.set("data.synthetic", synthetic ? "true" : "false");
    kv.set("data.per_class", per_class);
    kv.set("data.split.train", split.train);
    kv.set("data.split.val", split.val);
    kv.set("data.split.test", split.test);
    kv.set("data.split.seed", split.seed);
    kv.set("run.workers", workers);
    kv.set("run.out", out_dir);
    kv.set("run.checkpoint", checkpoint);
    kv.set("run.layer", layer);
    kv.set("run.format", format);
    kv.set("run.limit", limit);
    kv.set("run.iterations", iterations);
    return kv;
  }

  static RunConfig from_kv(const KeyValues& kv) {
    RunConfig r;
    r.command = kv.get("run.command");
    r.model = ModelConfig::from_kv(kv.section("model"));
    r.train = TrainConfig::from_kv(kv.section("train"));
    r.data_dir = kv.get("data.dir");
    const std::string& syn = kv.get("data.synthetic");
    if (syn != "true" && syn != "false") throw InvalidConfig("data.synthetic must be true or false");
    r.synthetic = syn == "true";
    r.per_class = kv.get_number<std::size_t>("data.per_class");
    r.split.train = kv.get_number<double>("data.split.train");
    r.split.val = kv.get_number<double>("data.split.val");
    r.split.test = kv.get_number<double>("data.split.test");
    r.split.seed = kv.get_number<std::uint64_t>("data.split.seed");
    r.workers = kv.get_number<std::size_t>("run.workers");
    r.out_dir = kv.get("run.out");
    r.checkpoint = kv.get("run.checkpoint");
    r.layer = kv.get("run.layer");
    r.format = kv.get("run.format");
    r.limit = kv.get_number<std::size_t>("run.limit");
    r.iterations = kv.get_number<std::size_t>("run.iterations");
    return r;
  }

  bool operator==(const RunConfig& o) const {
    return command == o.command && model == o.model && train == o.train && data_dir == o.data_dir &&
           synthetic == o.synthetic && per_class == o.per_class && split.train == o.split.train &&
           split.val == o.split.val && split.test == o.split.test && split.seed == o.split.seed &&
           workers == o.workers && out_dir == o.out_dir && checkpoint == o.checkpoint && layer == o.layer &&
           format == o.format && limit == o.limit && iterations == o.iterations;
  }
};

}  // namespace clap
