// sonoscan: command-line entry point for the audit pipeline.
//
//   scan -> dedup -> cluster -> pii (ocr, then entities) -> eval -> serve
//
// Every artifact records the stage, seed and parameters in a provenance
// header, and is written through a temp file + rename.

#include <pthread.h>
#include <signal.h>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sonoscan/classifier.hpp"
#include "sonoscan/cluster.hpp"
#include "sonoscan/dedup.hpp"
#include "sonoscan/embedding_store.hpp"
#include "sonoscan/error.hpp"
#include "sonoscan/io.hpp"
#include "sonoscan/labeled_set.hpp"
#include "sonoscan/ocr.hpp"
#include "sonoscan/pii.hpp"
#include "sonoscan/pii_eval.hpp"
#include "sonoscan/retrieval.hpp"
#include "sonoscan/review.hpp"

// After the Eigen users: <resolv.h> defines a `_res` macro.
#include <httplib.h>

#ifndef SONOSCAN_DATA_DIR
#define SONOSCAN_DATA_DIR "data"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sonoscan;

namespace {

enum ExitCode { kOk = 0, kInternal = 1, kUsage = 2, kData = 3, kExternal = 4 };

struct Globals {
  std::uint64_t seed = 0;
  int workers = 1;
};

std::string file_name(const fs::path& p) { return p.filename().string(); }

void require_file(const fs::path& p, const std::string& flag) {
  if (p.empty()) throw ConfigError(flag + " is required");
  if (!fs::exists(p)) throw ConfigError(flag + ": no such file " + p.string());
}

// Ids named by a detections JSONL file, optionally minus the ids a dedup
// report removed. Order follows the detections file.
std::vector<std::string> selected_ids(const fs::path& detections, const fs::path& dups) {
  std::vector<std::string> ids;
  for (const auto& rec : io::read_jsonl(detections)) ids.push_back(rec.at("image_id").get<std::string>());
  if (!dups.empty()) {
    const auto report = io::read_json(dups);
    std::set<std::string> removed;
    for (const auto& id : report.at("removed")) removed.insert(id.get<std::string>());
    std::erase_if(ids, [&](const std::string& id) { return removed.contains(id); });
  }
  return ids;
}

std::vector<std::size_t> rows_for(const std::vector<std::string>& ids,
                                  const std::vector<ImageRecord>& records) {
  std::map<std::string, std::size_t> row_of;
  for (const auto& r : records) row_of[r.id] = r.row;
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = row_of.find(id);
    if (it == row_of.end()) throw DataError("id " + id + " is not in the metadata");
    rows.push_back(it->second);
  }
  return rows;
}

std::optional<DupReport> load_dup_report(const fs::path& path) {
  if (path.empty()) return std::nullopt;
  const auto doc = io::read_json(path);
  DupReport report;
  report.theta = doc.value("theta", kDefaultDedupTheta);
  for (const auto& c : doc.at("components")) report.components.push_back(c.get<std::vector<std::string>>());
  report.kept = doc.at("kept").get<std::vector<std::string>>();
  report.removed = doc.at("removed").get<std::vector<std::string>>();
  return report;
}

json detection_json(const Detection& d) {
  json j = {{"image_id", d.image_id},
            {"row", d.row},
            {"score", d.score},
            {"source", to_string(d.source)}};
  if (d.best_query) j["best_query"] = *d.best_query;
  return j;
}

// ---------------------------------------------------------------- scan

struct ScanArgs {
  std::string mode = "retrieval";
  fs::path embeddings, metadata, queries, query_labels, model, out;
  std::string query_kind = "image";
  std::optional<double> tau;
};

int run_scan(const ScanArgs& a, const Globals& g) {
  require_file(a.embeddings, "--embeddings");
  require_file(a.metadata, "--metadata");
  if (a.out.empty()) throw ConfigError("--out is required");
  const auto images = normalize(load_embeddings(a.embeddings));
  const auto records = load_metadata(a.metadata);
  validate_records(records, images);

  std::vector<Detection> detections;
  json params = {{"mode", a.mode}, {"embeddings", file_name(a.embeddings)}};
  if (a.mode == "retrieval") {
    require_file(a.queries, "--queries");
    const auto kind = parse_query_kind(a.query_kind);
    std::optional<fs::path> labels;
    if (!a.query_labels.empty()) labels = a.query_labels;
    const auto queries = load_query_set(a.queries, kind, labels);
    auto config = RetrievalConfig::defaults_for(kind);
    if (a.tau) config.tau = *a.tau;
    config.validate();
    detections = retrieve(records, images, queries, config);
    params["tau"] = config.tau;
    params["query_kind"] = a.query_kind;
    params["queries"] = queries.embeddings.count;
  } else if (a.mode == "classifier") {
    require_file(a.model, "--model");
    const auto loaded = load_model(a.model);
    const auto pred = predict(loaded.model, images);
    for (const auto& r : records) {
      if (pred.labels[r.row] != 1) continue;
      detections.push_back({r.id, r.row, pred.scores[r.row], DetectionSource::classifier, std::nullopt});
    }
    std::stable_sort(detections.begin(), detections.end(), [](const Detection& x, const Detection& y) {
      return x.score != y.score ? x.score > y.score : x.row < y.row;
    });
    params["model"] = to_string(model_kind(loaded.model));
  } else {
    throw ConfigError("--mode must be retrieval or classifier");
  }

  std::vector<json> out;
  out.reserve(detections.size());
  for (const auto& d : detections) out.push_back(detection_json(d));
  io::write_jsonl_atomic(a.out, io::provenance("scan", g.seed, params), out);
  std::cerr << "scan: " << detections.size() << " of " << images.count << " images flagged\n";
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string model;
  fs::path train, val, test, out, report, pool;
  std::vector<double> lambda_grid;
  int al_rounds = 5;
  std::size_t expand_k = 50;
  double leakage_theta = 0.95;
  std::vector<int> trees_grid, depth_grid;
  int svm_epochs = 20;
  int epochs = 50;
  int patience = 10;
  double lr = 1e-4;
  std::size_t batch = 1024;
};

json eval_json(const EvalReport& r) {
  return {{"accuracy", r.accuracy}, {"fp_rate", r.fp_rate}, {"fn_rate", r.fn_rate},
          {"tp", r.tp},             {"fp", r.fp},           {"tn", r.tn},
          {"fn", r.fn}};
}

int run_train(const TrainArgs& a, const Globals& g) {
  require_file(a.train, "--train");
  require_file(a.val, "--val");
  if (a.out.empty()) throw ConfigError("--out is required");
  const auto kind = parse_model_kind(a.model);
  if (!a.pool.empty()) {
    require_file(a.pool, "--pool");
    if (a.al_rounds < 1) throw ConfigError("--al-rounds must be at least 1");
    if (a.expand_k < 1) throw ConfigError("--expand-k must be at least 1");
    if (!(a.leakage_theta >= -1.0 && a.leakage_theta <= 1.0)) throw ConfigError("--leakage-theta must be in [-1, 1]");
  }
  const auto train = load_labeled_set(a.train, Split::train);
  const auto val = load_labeled_set(a.val, Split::val);

  json params = {{"model", a.model}, {"train", file_name(a.train)}, {"val", file_name(a.val)}};
  Model model;
  json training_log;
  switch (kind) {
    case ModelKind::svm: {
      SvmTrainConfig c;
      if (!a.lambda_grid.empty()) c.lambda_grid = a.lambda_grid;
      c.epochs = a.svm_epochs;
      c.seed = g.seed;
      params["lambda_grid"] = c.lambda_grid;
      if (a.pool.empty()) {
        model = train_svm(train, val, c);
        break;
      }
      // Active learning: the holdout for the leakage filter is val plus test.
      const auto pool = load_labeled_set(a.pool, Split::train);
      EmbeddingMatrix holdout = val.X;
      if (!a.test.empty()) {
        const auto test = load_labeled_set(a.test, Split::test);
        if (test.X.dim != holdout.dim) throw DataError("--test dimension differs from --val");
        holdout.data.insert(holdout.data.end(), test.X.data.begin(), test.X.data.end());
        holdout.count += test.X.count;
      }
      ActiveLearningConfig al;
      al.max_rounds = a.al_rounds;
      al.expand_k = a.expand_k;
      al.leakage_theta = a.leakage_theta;
      al.svm = c;
      auto result = run_active_learning(train, val, pool, holdout, al);
      model = std::move(result.model);
      training_log = json::array();
      for (const auto& r : result.rounds) {
        training_log.push_back({{"round", r.round},
                                {"train_size", r.train_size},
                                {"val_accuracy", r.val_accuracy},
                                {"hard_examples", r.hard_examples},
                                {"added", r.added},
                                {"leaked", r.leaked}});
      }
      params["pool"] = file_name(a.pool);
      params["rounds"] = al.max_rounds;
      params["expand_k"] = al.expand_k;
      params["leakage_theta"] = al.leakage_theta;
      break;
    }
    case ModelKind::rf: {
      if (!a.pool.empty()) throw ConfigError("--pool (active learning) requires --model svm");
      RfTrainConfig c;
      if (!a.trees_grid.empty()) c.n_trees_grid = a.trees_grid;
      if (!a.depth_grid.empty()) c.max_depth_grid = a.depth_grid;
      c.seed = g.seed;
      model = train_rf(train, val, c);
      params["n_trees_grid"] = c.n_trees_grid;
      params["max_depth_grid"] = c.max_depth_grid;
      break;
    }
    case ModelKind::mlp: {
      if (!a.pool.empty()) throw ConfigError("--pool (active learning) requires --model svm");
      MlpTrainConfig c;
      c.epochs = a.epochs;
      c.patience = a.patience;
      c.learning_rate = a.lr;
      c.batch_size = a.batch;
      c.seed = g.seed;
      MlpTrainingLog log;
      model = train_mlp(train, val, c, &log);
      training_log = {{"train_loss", log.train_loss},
                      {"val_accuracy", log.val_accuracy},
                      {"val_loss", log.val_loss},
                      {"best_epoch", log.best_epoch}};
      params["epochs"] = c.epochs;
      params["patience"] = c.patience;
      params["learning_rate"] = c.learning_rate;
      params["batch_size"] = c.batch_size;
      break;
    }
  }
  save_model(a.out, model, g.seed);

  json report = io::provenance("train", g.seed, params);
  report["validation"] = eval_json(evaluate(predict(model, val.X).labels, val.y));
  if (!training_log.is_null()) report["training"] = std::move(training_log);
  if (!a.test.empty()) {
    const auto test = load_labeled_set(a.test, Split::test);
    report["test"] = eval_json(evaluate(predict(model, test.X).labels, test.y));
  }
  if (!a.report.empty()) io::write_json_atomic(a.report, report);
  std::cout << report.dump(2) << '\n';
  return kOk;
}

// ---------------------------------------------------------------- boundary-band

struct BandArgs {
  fs::path model, embeddings, metadata, out;
  double k_sd = 2.0;
};

int run_band(const BandArgs& a, const Globals& g) {
  require_file(a.model, "--model");
  require_file(a.embeddings, "--embeddings");
  const auto loaded = load_model(a.model);
  const auto x = normalize(load_embeddings(a.embeddings));
  std::vector<std::string> ids(x.count);
  for (std::size_t i = 0; i < x.count; ++i) ids[i] = std::to_string(i);
  if (!a.metadata.empty()) {
    const auto records = load_metadata(a.metadata);
    validate_records(records, x);
    for (const auto& r : records) ids[r.row] = r.id;
  }
  const auto band = boundary_band(loaded.model, x, a.k_sd);
  json items = json::array();
  for (const auto& item : band.items) {
    items.push_back({{"image_id", ids[item.row]}, {"row", item.row}, {"score", item.score}});
  }
  json doc = io::provenance("boundary-band", g.seed, {{"k_sd", a.k_sd}, {"model", file_name(a.model)}});
  doc["sigma"] = band.sigma;
  doc["negatives"] = band.negatives;
  doc["items"] = std::move(items);
  if (a.out.empty()) {
    std::cout << doc.dump(2) << '\n';
  } else {
    io::write_json_atomic(a.out, doc);
  }
  return kOk;
}

// ---------------------------------------------------------------- dedup

struct DedupArgs {
  fs::path detections, embeddings, out;
  double theta = kDefaultDedupTheta;
};

int run_dedup(const DedupArgs& a, const Globals& g) {
  require_file(a.detections, "--detections");
  require_file(a.embeddings, "--embeddings");
  if (a.out.empty()) throw ConfigError("--out is required");
  if (!(a.theta >= -1.0 && a.theta <= 1.0)) throw ConfigError("--theta must lie in [-1,1]");
  const auto matrix = normalize(load_embeddings(a.embeddings));
  std::vector<std::string> ids;
  std::vector<std::size_t> rows;
  for (const auto& rec : io::read_jsonl(a.detections)) {
    ids.push_back(rec.at("image_id").get<std::string>());
    rows.push_back(rec.at("row").get<std::size_t>());
  }
  const auto report = deduplicate(ids, matrix, rows, a.theta);
  json doc = io::provenance("dedup", g.seed,
                            {{"theta", a.theta}, {"embeddings", file_name(a.embeddings)}});
  doc["theta"] = report.theta;
  doc["input"] = ids.size();
  doc["components"] = report.components;
  doc["kept"] = report.kept;
  doc["removed"] = report.removed;
  io::write_json_atomic(a.out, doc);
  std::cerr << "dedup: " << ids.size() << " -> " << report.kept.size() << " images\n";
  return kOk;
}

// ---------------------------------------------------------------- cluster

struct ClusterArgs {
  fs::path embeddings, metadata, detections, dups, stopwords, out;
  int min_cluster_size = 20;
  int min_samples = 0;
  int pca_dims = 5;
  double perplexity = 30.0;
  int tsne_iterations = 1000;
  std::size_t top_k = 5;
};

int run_cluster(const ClusterArgs& a, const Globals& g) {
  require_file(a.embeddings, "--embeddings");
  require_file(a.metadata, "--metadata");
  if (a.out.empty()) throw ConfigError("--out is required");
  if (a.min_cluster_size < 2) throw ConfigError("--min-cluster-size must be at least 2");
  const auto matrix = normalize(load_embeddings(a.embeddings));
  const auto records = load_metadata(a.metadata);
  validate_records(records, matrix);

  std::vector<std::string> ids;
  if (!a.detections.empty()) {
    ids = selected_ids(a.detections, a.dups);
  } else {
    for (const auto& r : records) ids.push_back(r.id);
  }
  const auto rows = rows_for(ids, records);
  const PointMatrix points = to_points(matrix.select_rows(rows));

  const auto reduced = pca_reduce(points, a.pca_dims);
  HdbscanParams hp;
  hp.min_cluster_size = a.min_cluster_size;
  hp.min_samples = a.min_samples;
  const auto assignment = hdbscan(reduced.projected, hp);

  TsneParams tp;
  tp.perplexity = a.perplexity;
  tp.iterations = a.tsne_iterations;
  tp.seed = g.seed;
  const auto layout = tsne_2d(points, tp);

  std::map<std::string, const ImageRecord*> by_id;
  for (const auto& r : records) by_id[r.id] = &r;
  std::map<int, std::vector<std::string>> captions;
  json assignments = json::array();
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const int label = assignment.labels[k];
    captions[label].push_back(by_id.at(ids[k])->caption);
    assignments.push_back({{"image_id", ids[k]},
                           {"cluster", label},
                           {"tsne", {layout.embedding(static_cast<Eigen::Index>(k), 0),
                                     layout.embedding(static_cast<Eigen::Index>(k), 1)}}});
  }
  const fs::path stop_path =
      a.stopwords.empty() ? fs::path(SONOSCAN_DATA_DIR) / "stopwords_en.txt" : a.stopwords;
  const auto themes = theme_words(captions, a.top_k, load_stopwords(stop_path));
  json theme_list = json::array();
  for (const auto& t : themes) {
    json words = json::array();
    for (const auto& w : t.top_words) words.push_back({{"word", w.word}, {"count", w.count}});
    theme_list.push_back({{"cluster", t.cluster_id}, {"num_images", t.num_images}, {"top_words", std::move(words)}});
  }

  json doc = io::provenance("cluster", g.seed,
                            {{"min_cluster_size", a.min_cluster_size},
                             {"min_samples", a.min_samples == 0 ? a.min_cluster_size : a.min_samples},
                             {"pca_dims", a.pca_dims},
                             {"perplexity", a.perplexity},
                             {"tsne_iterations", a.tsne_iterations},
                             {"top_k", a.top_k}});
  doc["images"] = ids.size();
  doc["n_clusters"] = assignment.n_clusters;
  doc["noise"] = std::count(assignment.labels.begin(), assignment.labels.end(), -1);
  doc["explained_variance"] = std::vector<double>(reduced.explained_variance.data(),
                                                  reduced.explained_variance.data() +
                                                      reduced.explained_variance.size());
  doc["tsne"] = {{"initial_kl", layout.initial_kl}, {"final_kl", layout.final_kl}};
  doc["assignments"] = std::move(assignments);
  doc["themes"] = std::move(theme_list);
  io::write_json_atomic(a.out, doc);
  std::cerr << "cluster: " << assignment.n_clusters << " clusters over " << ids.size()
            << " images\n";
  return kOk;
}

// ---------------------------------------------------------------- pii

struct PiiArgs {
  fs::path images, text_in, recognizers, detections, dups, out, work_dir;
  std::string ocr_cmd, correct_cmd, upscale_cmd;
  int rotation_step = 15;
  int max_angle = 90;
  double threshold = 0.4;
  int context_window = 5;
  double context_boost = 0.35;
};

std::string text_of(const json& rec) {
  if (rec.contains("corrected_text")) return rec["corrected_text"].get<std::string>();
  if (rec.contains("best")) return rec["best"].at("text").get<std::string>();
  if (rec.contains("text")) return rec["text"].get<std::string>();
  if (rec.contains("ocr_text") && rec["ocr_text"].is_string()) return rec["ocr_text"].get<std::string>();
  return {};
}

std::string id_of(const json& rec) {
  if (rec.contains("image_id")) return rec["image_id"].get<std::string>();
  return rec.at("id").get<std::string>();
}

int run_pii(const PiiArgs& a, const Globals& g) {
  if (a.out.empty()) throw ConfigError("--out is required");
  if (a.images.empty() == a.text_in.empty()) {
    throw ConfigError("give exactly one of --images (OCR) or --text-in (entity extraction)");
  }

  if (!a.images.empty()) {
    if (a.ocr_cmd.empty()) throw ConfigError("--ocr-cmd is required with --images");
    OcrOptions opts;
    opts.ocr_command = a.ocr_cmd;
    opts.correct_command = a.correct_cmd;
    opts.upscale_command = a.upscale_cmd;
    opts.rotation_step = a.rotation_step;
    opts.max_angle = a.max_angle;
    opts.workers = g.workers;
    opts.work_dir = a.work_dir;
    plan_preprocessing(1000, 1000, a.rotation_step, a.max_angle);  // validates the sweep

    std::optional<std::set<std::string>> wanted;
    if (!a.detections.empty()) {
      const auto ids = selected_ids(a.detections, a.dups);
      wanted.emplace(ids.begin(), ids.end());
    }
    std::vector<json> out;
    std::size_t warnings = 0;
    for (const auto& path : list_images(a.images)) {
      const std::string id = path.stem().string();
      if (wanted && !wanted->contains(id)) continue;
      const auto outcome = process_image(id, path, opts);
      for (const auto& w : outcome.warnings) {
        std::cerr << "warning: " << id << ": " << w << '\n';
        ++warnings;
      }
      out.push_back(to_json(outcome));
    }
    io::write_jsonl_atomic(a.out,
                           io::provenance("ocr", g.seed,
                                          {{"rotation_step", a.rotation_step},
                                           {"max_angle", a.max_angle},
                                           {"correction", !a.correct_cmd.empty()},
                                           {"upscaler", a.upscale_cmd.empty() ? "bicubic" : "external"}}),
                           out);
    std::cerr << "pii: OCR'd " << out.size() << " images (" << warnings << " warnings)\n";
    return kOk;
  }

  require_file(a.text_in, "--text-in");
  const fs::path spec = a.recognizers.empty()
                            ? fs::path(SONOSCAN_DATA_DIR) / "recognizers" / "default.json"
                            : a.recognizers;
  require_file(spec, "--recognizers");
  const auto recognizers = load_recognizers(spec);
  AnalyzerConfig config{a.threshold, a.context_window, a.context_boost};
  config.validate();

  std::vector<json> out;
  std::size_t total = 0;
  for (const auto& rec : io::read_jsonl(a.text_in)) {
    const std::string text = text_of(rec);
    json spans = json::array();
    for (const auto& s : analyze(text, recognizers, config)) spans.push_back(to_json(s));
    total += spans.size();
    out.push_back({{"image_id", id_of(rec)}, {"text", text}, {"entities", std::move(spans)}});
  }
  io::write_jsonl_atomic(a.out,
                         io::provenance("pii", g.seed,
                                        {{"recognizers", file_name(spec)},
                                         {"score_threshold", config.score_threshold},
                                         {"context_window_tokens", config.context_window_tokens},
                                         {"context_boost", config.context_boost}}),
                         out);
  std::cerr << "pii: " << total << " entities in " << out.size() << " texts\n";
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  fs::path detected, truth, dups, out;
};

int run_eval(const EvalArgs& a, const Globals& g) {
  require_file(a.detected, "--detected");
  if (a.out.empty()) throw ConfigError("--out is required");
  const auto detected = load_entities(a.detected);
  std::optional<TruthByImage> truth;
  if (!a.truth.empty()) {
    require_file(a.truth, "--truth");
    truth = load_ground_truth(a.truth);
  }
  const auto dups = load_dup_report(a.dups);
  json doc = io::provenance("eval", g.seed,
                            {{"detected", file_name(a.detected)},
                             {"truth", a.truth.empty() ? json(nullptr) : json(file_name(a.truth))},
                             {"dups", a.dups.empty() ? json(nullptr) : json(file_name(a.dups))}});
  doc.update(evaluation_report(detected, truth ? &*truth : nullptr, dups));
  io::write_json_atomic(a.out, doc);
  return kOk;
}

// ---------------------------------------------------------------- serve

struct ServeArgs {
  fs::path detections, clusters, entities, metadata, images, log, ui;
  std::string bind = "127.0.0.1:8080";
};

int run_serve(const ServeArgs& a, const Globals&) {
  require_file(a.detections, "--detections");
  if (a.log.empty()) throw ConfigError("--log is required");
  const auto colon = a.bind.rfind(':');
  if (colon == std::string::npos) throw ConfigError("--bind must be HOST:PORT");
  const std::string host = a.bind.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(a.bind.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConfigError("--bind has a bad port: " + a.bind);
  }

  // Block termination signals before any thread starts; a dedicated thread
  // waits for them and stops the server.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  ReviewSources sources{a.detections, a.clusters, a.entities, a.metadata};
  ReviewService service(load_review_items(sources), a.log, a.images, load_cluster_themes(a.clusters));
  httplib::Server server;
  service.register_routes(server);
  if (!a.ui.empty() && !server.set_mount_point("/", a.ui.string())) {
    throw ConfigError("--ui: cannot serve " + a.ui.string());
  }

  const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw ConfigError("cannot bind " + a.bind);
  std::cout << "listening on http://" << host << ":" << bound << std::endl;

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  server.listen_after_bind();
  // listen_after_bind returns only after stop(); wake the waiter if it is
  // still blocked (the server may have stopped for another reason).
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return kOk;
}

int exit_code_for(const Error& e) {
  switch (e.category()) {
    case ErrorCategory::config: return kUsage;
    case ErrorCategory::data: return kData;
    case ErrorCategory::external: return kExternal;
    case ErrorCategory::internal: return kInternal;
  }
  return kInternal;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sonoscan: dataset privacy audit toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI config file; flags override it");
  Globals g;
  app.add_option("--seed", g.seed, "root seed recorded in every artifact")->capture_default_str();
  app.add_option("--workers", g.workers, "worker threads for parallel stages")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  ScanArgs scan;
  auto* scan_cmd = app.add_subcommand("scan", "flag images by query retrieval or a trained classifier");
  scan_cmd->add_option("--mode", scan.mode, "retrieval | classifier")
      ->check(CLI::IsMember({"retrieval", "classifier"}))
      ->capture_default_str();
  scan_cmd->add_option("--embeddings", scan.embeddings, "dataset EMB1 file");
  scan_cmd->add_option("--metadata", scan.metadata, "dataset metadata JSONL");
  scan_cmd->add_option("--queries", scan.queries, "query EMB1 file (retrieval)");
  scan_cmd->add_option("--query-labels", scan.query_labels, "one label per query row");
  scan_cmd->add_option("--query-kind", scan.query_kind, "image | text (sets the default tau)")
      ->check(CLI::IsMember({"image", "text"}))
      ->capture_default_str();
  scan_cmd->add_option("--tau", scan.tau, "similarity threshold (default 0.7 image, 0.3 text)");
  scan_cmd->add_option("--model", scan.model, "SONM model file (classifier)");
  scan_cmd->add_option("--out", scan.out, "detections JSONL");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train an SVM, random forest or MLP detector");
  train_cmd->add_option("--model", train.model, "svm | rf | mlp")
      ->required()
      ->check(CLI::IsMember({"svm", "rf", "mlp"}));
  train_cmd->add_option("--train", train.train, "labeled EMB1 file (+ .labels sidecar)");
  train_cmd->add_option("--val", train.val, "validation set");
  train_cmd->add_option("--test", train.test, "optional test set for the report");
  train_cmd->add_option("--out", train.out, "model file");
  train_cmd->add_option("--report", train.report, "write the evaluation report here");
  train_cmd->add_option("--pool", train.pool, "labeled pool for active learning (svm only)");
  train_cmd->add_option("--al-rounds", train.al_rounds, "active learning round limit")->capture_default_str();
  train_cmd->add_option("--expand-k", train.expand_k, "pool items added per round")->capture_default_str();
  train_cmd->add_option("--leakage-theta", train.leakage_theta, "drop pool items this close to val/test")
      ->capture_default_str();
  train_cmd->add_option("--lambda-grid", train.lambda_grid, "SVM regularization grid");
  train_cmd->add_option("--svm-epochs", train.svm_epochs)->capture_default_str();
  train_cmd->add_option("--trees-grid", train.trees_grid, "RF tree counts");
  train_cmd->add_option("--depth-grid", train.depth_grid, "RF depth limits");
  train_cmd->add_option("--epochs", train.epochs, "MLP epoch budget")->capture_default_str();
  train_cmd->add_option("--patience", train.patience, "MLP early stopping")->capture_default_str();
  train_cmd->add_option("--lr", train.lr, "MLP learning rate")->capture_default_str();
  train_cmd->add_option("--batch", train.batch, "MLP batch size")->capture_default_str();

  BandArgs band;
  auto* band_cmd = app.add_subcommand("boundary-band", "negatively scored items near the decision boundary");
  band_cmd->add_option("--model", band.model, "SONM model file");
  band_cmd->add_option("--embeddings", band.embeddings, "EMB1 file to score");
  band_cmd->add_option("--metadata", band.metadata, "metadata for ids");
  band_cmd->add_option("--k-sd", band.k_sd, "band width in standard deviations")->capture_default_str();
  band_cmd->add_option("--out", band.out, "JSON report (default: stdout)");

  DedupArgs dedup;
  auto* dedup_cmd = app.add_subcommand("dedup", "collapse near-duplicate detections");
  dedup_cmd->add_option("--detections", dedup.detections, "detections JSONL");
  dedup_cmd->add_option("--embeddings", dedup.embeddings, "similarity space (EMB1)");
  dedup_cmd->add_option("--theta", dedup.theta, "duplicate threshold")->capture_default_str();
  dedup_cmd->add_option("--out", dedup.out, "dup report JSON");

  ClusterArgs cluster;
  auto* cluster_cmd = app.add_subcommand("cluster", "PCA + HDBSCAN clusters, t-SNE layout and themes");
  cluster_cmd->add_option("--embeddings", cluster.embeddings, "EMB1 file");
  cluster_cmd->add_option("--metadata", cluster.metadata, "metadata JSONL (captions)");
  cluster_cmd->add_option("--detections", cluster.detections, "restrict to these detections");
  cluster_cmd->add_option("--dups", cluster.dups, "drop ids removed by this dup report");
  cluster_cmd->add_option("--min-cluster-size", cluster.min_cluster_size)->capture_default_str();
  cluster_cmd->add_option("--min-samples", cluster.min_samples, "0 = min cluster size")->capture_default_str();
  cluster_cmd->add_option("--pca-dims", cluster.pca_dims)->capture_default_str();
  cluster_cmd->add_option("--perplexity", cluster.perplexity)->capture_default_str();
  cluster_cmd->add_option("--tsne-iterations", cluster.tsne_iterations)->capture_default_str();
  cluster_cmd->add_option("--top-k", cluster.top_k, "theme words per cluster")->capture_default_str();
  cluster_cmd->add_option("--stopwords", cluster.stopwords, "stopword list");
  cluster_cmd->add_option("--out", cluster.out, "clusters JSON");

  PiiArgs pii;
  auto* pii_cmd = app.add_subcommand("pii", "OCR images (--images) or extract entities (--text-in)");
  pii_cmd->add_option("--images", pii.images, "image directory to OCR");
  pii_cmd->add_option("--ocr-cmd", pii.ocr_cmd, "OCR command, run as CMD <image>");
  pii_cmd->add_option("--correct-cmd", pii.correct_cmd, "correction command, prompt on stdin");
  pii_cmd->add_option("--upscale-cmd", pii.upscale_cmd, "upscaler, run as CMD <in> <out>");
  pii_cmd->add_option("--rotation-step", pii.rotation_step)->capture_default_str();
  pii_cmd->add_option("--max-angle", pii.max_angle)->capture_default_str();
  pii_cmd->add_option("--work-dir", pii.work_dir, "keep variant images here");
  pii_cmd->add_option("--detections", pii.detections, "only OCR these detections");
  pii_cmd->add_option("--dups", pii.dups, "skip ids removed by this dup report");
  pii_cmd->add_option("--text-in", pii.text_in, "OCR outcomes or metadata JSONL");
  pii_cmd->add_option("--recognizers", pii.recognizers, "recognizer spec JSON");
  pii_cmd->add_option("--threshold", pii.threshold, "minimum entity score")->capture_default_str();
  pii_cmd->add_option("--context-window", pii.context_window)->capture_default_str();
  pii_cmd->add_option("--context-boost", pii.context_boost)->capture_default_str();
  pii_cmd->add_option("--out", pii.out, "output JSONL");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "entity counts, P/R/F1, histograms and co-occurrence");
  eval_cmd->add_option("--detected", eval.detected, "entities JSONL");
  eval_cmd->add_option("--truth", eval.truth, "ground truth JSONL");
  eval_cmd->add_option("--dups", eval.dups, "dup report for the unique column");
  eval_cmd->add_option("--out", eval.out, "report JSON");

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "review queue and annotation HTTP service");
  serve_cmd->add_option("--detections", serve.detections, "detections JSONL");
  serve_cmd->add_option("--clusters", serve.clusters, "clusters JSON");
  serve_cmd->add_option("--entities", serve.entities, "entities JSONL");
  serve_cmd->add_option("--metadata", serve.metadata, "metadata JSONL (captions)");
  serve_cmd->add_option("--images", serve.images, "local image directory");
  serve_cmd->add_option("--log", serve.log, "annotation log (JSONL, append-only)");
  serve_cmd->add_option("--ui", serve.ui, "static client directory mounted at /");
  serve_cmd->add_option("--bind", serve.bind, "HOST:PORT (port 0 picks a free port)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*scan_cmd) return run_scan(scan, g);
    if (*train_cmd) return run_train(train, g);
    if (*band_cmd) return run_band(band, g);
    if (*dedup_cmd) return run_dedup(dedup, g);
    if (*cluster_cmd) return run_cluster(cluster, g);
    if (*pii_cmd) return run_pii(pii, g);
    if (*eval_cmd) return run_eval(eval, g);
    if (*serve_cmd) return run_serve(serve, g);
  } catch (const ExternalCommandError& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (!e.stderr_text().empty()) std::cerr << "command stderr:\n" << e.stderr_text();
    return kExternal;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const json::exception& e) {
    std::cerr << "error: malformed input: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInternal;
  }
  return kUsage;
}
