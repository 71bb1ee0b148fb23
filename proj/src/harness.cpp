#include "protoosr/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "protoosr/losses.hpp"

namespace protoosr {

namespace {

ImageDataset load_pair(DataFormat format, const std::vector<std::string>& files, const std::string& images,
                       const std::string& labels, const std::string& name) {
  if (format == DataFormat::kIdx) {
    if (!files.empty()) {
      if (files.size() != 2) throw ConfigError("IDX data lists take exactly two files: images,labels");
      return load_idx(files[0], files[1], name);
    }
    return load_idx(images, labels, name);
  }
  std::vector<std::filesystem::path> paths(files.begin(), files.end());
  return load_cifar_binary(paths, format == DataFormat::kCifar10 ? CifarKind::kCifar10 : CifarKind::kCifar100, name);
}

ImageDataset head(const ImageDataset& dataset, std::size_t limit) {
  if (limit == 0 || limit >= dataset.size()) return dataset;
  return select(dataset, [&](std::size_t i) { return i < limit; });
}

ImageDataset concat(const std::vector<ImageDataset>& parts) {
  ImageDataset out;
  if (parts.empty()) return out;
  const auto& first = parts.front();
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  out.name = "unknown";
  out.images = Tensor<float>(Shape{total, first.channels(), first.height(), first.width()});
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy(p.images.data(), p.images.data() + p.images.size(), out.images.data() + at);
    at += p.images.size();
  }
  out.labels.assign(total, kUnknown);
  return out;
}

std::vector<double> distances_of(const std::vector<ScoredSample>& s) {
  std::vector<double> out;
  out.reserve(s.size());
  for (const auto& x : s) out.push_back(x.min_distance);
  return out;
}

std::string epoch_where(std::size_t epoch, std::size_t batch) {
  return "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch);
}

double validation_accuracy(const Checkpoint& c, const ImageDataset& test_known) {
  if (test_known.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  const auto features = embed(c.config.encoder, c.encoder, test_known.images);
  const auto scored = score(features, c.prototypes.points);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scored.size(); ++i) hits += scored[i].nearest_class == test_known.labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(scored.size());
}

}  // namespace

std::size_t RunData::unknown_count() const {
  std::size_t n = 0;
  for (const auto& p : test_unknown) n += p.size();
  return n;
}

RunData prepare_data(const RunConfig& config) {
  config.validate();
  const auto& d = config.data;
  const auto& enc = config.encoder;
  auto train = head(load_pair(d.format, d.train_files, d.train_images, d.train_labels, d.name), d.train_limit);
  auto test = head(load_pair(d.format, d.test_files, d.test_images, d.test_labels, d.name), d.test_limit);

  ImageDataset unknown_source;
  const bool has_second = !d.unknown_test_files.empty();
  if (has_second) {
    const auto name = d.unknown_name.empty() ? std::string("unknown") : d.unknown_name;
    unknown_source = load_pair(d.unknown_format, d.unknown_test_files, "", "", name);
  }
  if (config.split.style == SplitStyle::kCross && !has_second) {
    throw ConfigError("split.style = cross needs data.unknown_test_files");
  }

  SplitRequest request;
  request.style = config.split.style;
  request.known_source = d.name;
  request.known_class_count = std::max(train.class_count, test.class_count);
  if (config.split.style == SplitStyle::kCross) {
    request.unknown_source = unknown_source.name;
    request.unknown_class_count = unknown_source.class_count;
  }
  request.n_known = config.split.n_known;
  request.n_unknown = config.split.n_unknown;
  request.trial_seed = config.split.trial_seed;

  RunData out;
  out.split = make_split(request);
  out.train_known = adapt(known_subset(train, out.split), enc.channels, enc.height, enc.width);
  out.test_known = adapt(known_subset(test, out.split), enc.channels, enc.height, enc.width);
  if (out.train_known.size() == 0) throw ProtocolError("no training samples of the known classes");

  switch (config.split.style) {
    case SplitStyle::kWithin:
    case SplitStyle::kOpennessSweep:
      out.test_unknown.push_back(adapt(unknown_subset(test, out.split), enc.channels, enc.height, enc.width));
      out.test_full = adapt(test, enc.channels, enc.height, enc.width);
      break;
    case SplitStyle::kCross:
      out.test_unknown.push_back(
          adapt(unknown_subset(unknown_source, out.split), enc.channels, enc.height, enc.width));
      break;
    case SplitStyle::kOutlier:
      if (has_second) {
        auto whole = unknown_source;
        whole.labels.assign(whole.size(), kUnknown);
        out.test_unknown.push_back(adapt(whole, enc.channels, enc.height, enc.width));
      }
      break;
  }
  if (config.outlier.noise_samples > 0) {
    out.test_unknown.push_back(
        make_noise(config.outlier.noise_samples, enc.channels, enc.height, enc.width, config.seed, "noise"));
  }
  if (config.outlier.mnist_noise) {
    auto noisy = make_mnist_noise(test, config.seed, "mnist-noise");
    out.test_unknown.push_back(adapt(noisy, enc.channels, enc.height, enc.width));
  }
  for (auto& part : out.test_unknown) part.labels.assign(part.size(), kUnknown);
  return out;
}

void resume(Checkpoint& c, const RunData& data, const EpochCallback& on_epoch) {
  const auto& config = c.config;
  config.validate();
  const auto& train_set = data.train_known;
  if (train_set.channels() != config.encoder.channels || train_set.height() != config.encoder.height ||
      train_set.width() != config.encoder.width) {
    throw ConfigError("training images are " + shape_str(train_set.images.shape()) + ", encoder expects " +
                      std::to_string(config.encoder.channels) + "x" + std::to_string(config.encoder.height) + "x" +
                      std::to_string(config.encoder.width));
  }
  check_protocol(c, data);

  auto tensors = c.encoder.tensors();
  tensors.push_back(&c.prototypes.points);
  for (auto* t : tensors) t->set_requires_grad(true);
  if (c.optim.velocity.size() != tensors.size()) throw FormatError("optimizer state does not match the model", 0);

  const auto shuffle_seed = config.stream_seed("shuffle");
  const auto batch_size = config.optim.batch_size;
  const auto n = train_set.size();
  const double clip = config.optim.clip_norm > 0.0 ? config.optim.clip_norm : std::numeric_limits<double>::infinity();

  for (auto epoch = c.epochs_done; epoch < config.optim.schedule.total_epochs; ++epoch) {
    c.optim.learning_rate = lr_at(config.optim.schedule, epoch);
    const auto order = epoch_order(n, shuffle_seed, epoch);
    EpochLog log;
    log.epoch = epoch;
    log.learning_rate = c.optim.learning_rate;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += batch_size, ++batches) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(batch_size, n - start));
      std::vector<int> labels;
      labels.reserve(idx.size());
      for (auto i : idx) labels.push_back(train_set.labels[i]);

      ad::Tape<float> tape;
      auto x = tape.constant(gather(train_set, idx));
      auto f = encode(tape, config.encoder, c.encoder, x, true);
      auto [loss, report] = total_loss(tape, config.loss, f, tape.param(c.prototypes.points), labels);
      if (!std::isfinite(report.total)) {
        throw NumericError("non-finite loss at " + epoch_where(epoch, batches) + " (ce " + std::to_string(report.ce_term) +
                           ", pl " + std::to_string(report.pl_term) + ", slc " + std::to_string(report.slc_term) + ")");
      }
      tape.backprop(loss);
      const double norm = clip_grad_norm(tensors, clip);
      if (!std::isfinite(norm)) throw NumericError("non-finite gradient at " + epoch_where(epoch, batches));
      sgd_momentum_step(c.optim, tensors);

      log.total += report.total;
      log.ce += report.ce_term;
      log.pl += report.pl_term;
      log.slc += report.slc_term;
      log.grad_norm += norm;
    }
    const auto nb = static_cast<double>(batches);
    log.total /= nb;
    log.ce /= nb;
    log.pl /= nb;
    log.slc /= nb;
    log.grad_norm /= nb;
    c.epochs_done = epoch + 1;
    const auto every = config.eval.validate_every;
    if (every > 0 && (c.epochs_done % every == 0 || c.epochs_done == config.optim.schedule.total_epochs)) {
      log.val_accuracy = validation_accuracy(c, data.test_known);
    }
    c.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  for (auto* t : tensors) t->set_requires_grad(false);
}

Checkpoint train(const RunConfig& config, const RunData& data, const EpochCallback& on_epoch) {
  config.validate();
  Checkpoint c;
  c.config = config;
  c.split = data.split;
  const auto init_seed = config.stream_seed("init");
  c.encoder = init_encoder<float>(config.encoder, init_seed);
  c.prototypes = init_prototypes<float>(data.split.n_known(), config.encoder.embedding_dim, config.prototypes.init,
                                        config.prototypes.scale, init_seed);
  auto tensors = c.encoder.tensors();
  tensors.push_back(&c.prototypes.points);
  c.optim = make_optim_state(tensors, config.optim.schedule.initial_lr, config.optim.momentum,
                             config.optim.weight_decay);
  resume(c, data, on_epoch);
  return c;
}

void check_protocol(const Checkpoint& checkpoint, const RunData& data) {
  if (checkpoint.split.known != data.split.known) {
    auto list = [](const std::vector<int>& v) {
      std::string s;
      for (auto x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
      return "{" + s + "}";
    };
    throw ProtocolError("checkpoint was trained on known classes " + list(checkpoint.split.known) +
                        ", the protocol uses " + list(data.split.known));
  }
  if (checkpoint.prototypes.classes() != data.split.n_known()) {
    throw ProtocolError("checkpoint has " + std::to_string(checkpoint.prototypes.classes()) + " prototypes for " +
                        std::to_string(data.split.n_known()) + " known classes");
  }
}

ModelScores score_model(const Checkpoint& c, const RunData& data, double percentile) {
  check_protocol(c, data);
  const auto& enc = c.config.encoder;
  const auto& protos = c.prototypes.points;
  ModelScores s;
  s.train_known = score(embed(enc, c.encoder, data.train_known.images), protos);
  s.test_known_features = embed(enc, c.encoder, data.test_known.images);
  s.test_known = score(s.test_known_features, protos);
  if (data.unknown_count() > 0) {
    s.test_unknown_features = embed(enc, c.encoder, concat(data.test_unknown).images);
    s.test_unknown = score(s.test_unknown_features, protos);
  }
  s.threshold = calibrate_threshold(distances_of(s.train_known), percentile);
  return s;
}

EvalReport evaluate(const Checkpoint& c, const RunData& data) {
  if (data.test_known.size() == 0 || data.unknown_count() == 0) {
    throw ProtocolError("evaluation needs known and unknown test samples");
  }
  const double percentile = c.config.eval.percentile;
  const auto s = score_model(c, data, percentile);
  EvalReport r;
  r.percentile = percentile;
  r.threshold = s.threshold;
  r.openness = data.split.openness;
  r.known_samples = s.test_known.size();
  r.unknown_samples = s.test_unknown.size();

  std::vector<int> closed, open, truth;
  std::vector<double> known_scores, unknown_scores;
  for (std::size_t i = 0; i < s.test_known.size(); ++i) {
    closed.push_back(s.test_known[i].nearest_class);
    open.push_back(predict_open(s.test_known[i], s.threshold));
    truth.push_back(data.test_known.labels[i]);
    known_scores.push_back(s.test_known[i].known_score);
  }
  for (const auto& u : s.test_unknown) {
    open.push_back(predict_open(u, s.threshold));
    truth.push_back(kUnknown);
    unknown_scores.push_back(u.known_score);
  }
  r.closed_accuracy = closed_accuracy(closed, data.test_known.labels);
  r.auroc = auroc(known_scores, unknown_scores);
  const auto f1 = f1_scores(open, truth, data.split.n_known());
  r.macro_f1 = f1.macro;
  r.per_class_f1 = f1.per_class;

  const auto center = c.prototypes.centroid();
  r.histograms = distance_histograms(s.test_known_features, s.test_unknown_features, center, c.config.eval.histogram_bins);
  r.median_known_center_distance = median(center_distances(s.test_known_features, center));
  r.median_unknown_center_distance = median(center_distances(s.test_unknown_features, center));
  return r;
}

std::string report_json(const EvalReport& r, const RunConfig& config) {
  nlohmann::ordered_json j;
  j["record"] = "eval";
  j["closed_accuracy"] = r.closed_accuracy;
  j["auroc"] = r.auroc;
  j["macro_f1"] = r.macro_f1;
  j["threshold"] = r.threshold;
  j["percentile"] = r.percentile;
  j["openness"] = r.openness;
  j["known_samples"] = r.known_samples;
  j["unknown_samples"] = r.unknown_samples;
  j["per_class_f1"] = r.per_class_f1;
  j["median_known_center_distance"] = r.median_known_center_distance;
  j["median_unknown_center_distance"] = r.median_unknown_center_distance;
  j["histogram_edges"] = r.histograms.known.edges;
  j["histogram_known"] = r.histograms.known.counts;
  j["histogram_unknown"] = r.histograms.unknown.counts;
  nlohmann::ordered_json cfg;
  for (const auto& key : config_keys()) cfg[key] = get_value(config, key);
  j["config"] = cfg;
  return j.dump();
}

std::vector<SweepPoint> sweep_openness(const Checkpoint& c, const RunData& data,
                                       const std::vector<std::size_t>& unknown_counts) {
  if (unknown_counts.empty()) throw ConfigError("eval.sweep_unknown_counts is empty");
  if (data.test_full.size() == 0) throw ProtocolError("openness sweeps need a within-dataset split");
  const auto n = data.split.n_known();
  const auto s = score_model(c, data, c.config.eval.percentile);
  std::vector<int> base_pred, base_truth;
  for (std::size_t i = 0; i < s.test_known.size(); ++i) {
    base_pred.push_back(predict_open(s.test_known[i], s.threshold));
    base_truth.push_back(data.test_known.labels[i]);
  }
  std::vector<SweepPoint> out;
  for (auto k : unknown_counts) {
    if (k == 0 || k > data.split.unknown.size()) {
      throw ProtocolError("cannot sweep " + std::to_string(k) + " unknown classes; the split lists " +
                          std::to_string(data.split.unknown.size()));
    }
    const auto& enc = c.config.encoder;
    const auto unknown = unknown_subset(data.test_full, data.split, k);
    auto pred = base_pred, truth = base_truth;
    if (unknown.size() > 0) {
      for (const auto& u : score(embed(enc, c.encoder, unknown.images), c.prototypes.points)) {
        pred.push_back(predict_open(u, s.threshold));
        truth.push_back(kUnknown);
      }
    }
    out.push_back({k, openness(n, n + k, n), macro_f1(pred, truth, n)});
  }
  return out;
}

void write_sweep_csv(const std::vector<SweepPoint>& points, std::ostream& out) {
  out << "unknown_classes,openness_percent,macro_f1\n";
  char buf[128];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%zu,%.4f,%.6f\n", p.unknown_classes, 100.0 * p.openness, p.macro_f1);
    out << buf;
  }
}

void export_features(const Checkpoint& c, const RunData& data, std::ostream& out) {
  check_protocol(c, data);
  const auto& enc = c.config.encoder;
  const auto& protos = c.prototypes.points;
  const auto d = enc.embedding_dim;
  const auto center = c.prototypes.centroid();
  char buf[64];
  const auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };

  out << "kind,dataset,label";
  for (std::size_t k = 0; k < d; ++k) out << ",f" << k;
  out << ",min_distance,center_distance\n";

  const auto rows = [&](const char* kind, const ImageDataset& set, const Tensor<float>& features) {
    const auto scored = score(features, protos);
    const auto to_center = center_distances(features, center);
    for (std::size_t i = 0; i < set.size(); ++i) {
      out << kind << ',' << set.name << ',';
      const int y = set.labels.empty() ? kUnknown : set.labels[i];
      out << (y == kUnknown ? std::string("UNKNOWN") : std::to_string(y));
      for (std::size_t k = 0; k < d; ++k) out << ',' << num(features[i * d + k]);
      out << ',' << num(scored[i].min_distance) << ',' << num(to_center[i]) << '\n';
    }
  };
  rows("sample", data.test_known, embed(enc, c.encoder, data.test_known.images));
  for (const auto& part : data.test_unknown) rows("sample", part, embed(enc, c.encoder, part.images));

  const auto proto_center = center_distances(protos, center);
  for (std::size_t i = 0; i < protos.dim(0); ++i) {
    out << "prototype,prototypes," << i;
    for (std::size_t k = 0; k < d; ++k) out << ',' << num(protos[i * d + k]);
    out << ",0," << num(proto_center[i]) << '\n';
  }
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

std::string aggregate_reports(const std::vector<std::string>& lines) {
  std::vector<double> acc, auc, f1;
  std::size_t line_no = 0;
  for (const auto& line : lines) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      if (j.value("record", "") != "eval") continue;
      acc.push_back(j.at("closed_accuracy").get<double>());
      auc.push_back(j.at("auroc").get<double>());
      f1.push_back(j.at("macro_f1").get<double>());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("report line " + std::to_string(line_no) + ": " + e.what(), 0);
    }
  }
  if (acc.empty()) throw FormatError("no eval records to aggregate", 0);
  nlohmann::ordered_json out;
  out["record"] = "aggregate";
  out["runs"] = acc.size();
  for (const auto& [name, values] : {std::pair{"closed_accuracy", &acc}, {"auroc", &auc}, {"macro_f1", &f1}}) {
    const auto s = summarize(*values);
    out[name] = {{"mean", s.mean}, {"std", s.std}};
  }
  return out.dump();
}

}  // namespace protoosr
