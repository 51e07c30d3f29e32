// sonoscan-synth: seeded synthetic inputs for the pipeline.
//
// Dataset mode writes a CLIP-like corpus: background vectors scattered
// over the sphere, planted positives around a few theme centroids, and
// near-copies of some positives. Positives get captions, an image with a
// sidecar OCR response (read by the stub OCR script) and ground truth.
//
// Surrogate mode writes the labeled train/val/test sets used to compare
// detectors: two overlapping Gaussian classes.

#include <cmath>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "sonoscan/embedding_store.hpp"
#include "sonoscan/error.hpp"
#include "sonoscan/io.hpp"
#include "sonoscan/labeled_set.hpp"
#include "sonoscan/random.hpp"

#ifndef SONOSCAN_DATA_DIR
#define SONOSCAN_DATA_DIR "data"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sonoscan;

namespace {

struct Theme {
  std::vector<std::string> words;
};

const std::vector<Theme> kThemes = {
    {{"baby", "announcement", "coming", "soon", "ultrasound", "little", "one"}},
    {{"gender", "reveal", "party", "sonogram", "boy", "girl", "cake"}},
    {{"pregnancy", "keepsake", "frame", "scan", "memory", "gift", "wooden"}},
};

const std::vector<std::string> kBackgroundWords = {
    "beach", "sunset", "dog",     "kitchen", "mountain", "car",    "coffee",  "city",
    "street", "garden", "flower", "laptop",  "river",    "forest", "bicycle", "shoes",
    "table",  "window", "bridge", "pizza",   "guitar",   "poster", "snow",    "train"};

const std::vector<std::string> kMonths = {"January", "February", "March",     "April",
                                          "May",     "June",     "July",      "August",
                                          "September", "October", "November", "December"};

const std::vector<std::string> kFacilities = {"Memorial Hospital", "Women's Clinic",
                                              "Imaging Center", "Medical Center"};

std::string titlecase(std::string w) {
  bool start = true;
  for (auto& c : w) {
    if (start && c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
    start = c == ' ';
  }
  return w;
}

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& items) {
  return items[static_cast<std::size_t>(rng.below(items.size()))];
}

// Unit vector in a random direction.
std::vector<double> random_direction(Rng& rng, std::uint32_t dim) {
  std::vector<double> v(dim);
  double norm = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

// base + noise of expected norm `spread`.
void write_row(EmbeddingMatrix& m, std::size_t row, const std::vector<double>& base, double spread,
               Rng& rng) {
  const double scale = spread / std::sqrt(static_cast<double>(m.dim));
  auto out = m.row(row);
  for (std::uint32_t k = 0; k < m.dim; ++k) out[k] = static_cast<float>(base[k] + scale * rng.normal());
}

std::string caption(Rng& rng, const std::vector<std::string>& vocab, int words) {
  std::string s;
  for (int k = 0; k < words; ++k) {
    if (k > 0) s += ' ';
    s += pick(rng, vocab);
  }
  return s;
}

struct OcrSample {
  std::string text;
  json spans = json::array();
};

// A short ultrasound-printout style text with a random subset of the four
// entity types, plus the spans it contains.
OcrSample ocr_sample(Rng& rng, const std::vector<std::string>& given,
                     const std::vector<std::string>& surnames, const std::vector<std::string>& places) {
  OcrSample s;
  std::vector<std::string> parts;
  auto add = [&](const std::string& type, const std::string& value, const std::string& before,
                 const std::string& after = {}) {
    parts.push_back(before + value + after);
    s.spans.push_back({{"entity_type", type}, {"text", value}});
  };
  if (rng.uniform() < 0.7) {
    const std::string name = titlecase(pick(rng, given)) + " " + titlecase(pick(rng, surnames));
    add("NAME", name, rng.uniform() < 0.5 ? "Baby " : "Patient: ");
  }
  if (rng.uniform() < 0.5) {
    const std::string place = titlecase(pick(rng, places));
    add("LOCATION", place, pick(rng, kFacilities) + " ");
  }
  if (rng.uniform() < 0.3) {
    const auto area = 200 + rng.below(800);
    const auto mid = 100 + rng.below(900);
    const auto tail = rng.below(10000);
    char phone[32];
    std::snprintf(phone, sizeof phone, "(%03u) %03u-%04u", static_cast<unsigned>(area),
                  static_cast<unsigned>(mid), static_cast<unsigned>(tail));
    add("PHONE_NUMBER", phone, "Call ");
  }
  if (rng.uniform() < 0.6) {
    std::string date;
    if (rng.uniform() < 0.5) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%02u/%02u/%04u", static_cast<unsigned>(1 + rng.below(12)),
                    static_cast<unsigned>(1 + rng.below(28)), static_cast<unsigned>(2015 + rng.below(8)));
      date = buf;
    } else {
      date = pick(rng, kMonths) + " " + std::to_string(1 + rng.below(28)) + ", " +
             std::to_string(2015 + rng.below(8));
    }
    add("DATE_TIME", date, rng.uniform() < 0.5 ? "DOB " : "Exam date ");
  }
  parts.push_back("GA " + std::to_string(8 + rng.below(30)) + "w");
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (k > 0) s.text += "  ";
    s.text += parts[k];
  }
  return s;
}

void write_image(const fs::path& path, const std::string& text, Rng& rng) {
  cv::Mat img(256, 256, CV_8UC1, cv::Scalar(0));
  // A fan-shaped field with speckle, like a sonogram sector.
  cv::ellipse(img, {128, 20}, {200, 200}, 90, -35, 35, cv::Scalar(70), cv::FILLED);
  for (int k = 0; k < 400; ++k) {
    const int x = static_cast<int>(rng.below(256));
    const int y = static_cast<int>(rng.below(256));
    img.at<unsigned char>(y, x) = static_cast<unsigned char>(60 + rng.below(120));
  }
  cv::putText(img, text.substr(0, 24), {6, 246}, cv::FONT_HERSHEY_PLAIN, 0.8, cv::Scalar(255));
  if (!cv::imwrite(path.string(), img)) throw DataError("cannot write " + path.string());
}

struct DatasetArgs {
  fs::path out;
  std::size_t count = 10000;
  std::uint32_t dim = 512;
  std::size_t positives = 300;
  std::size_t duplicate_groups = 30;
  std::size_t queries = 5;
  double spread = 0.4;
  double dup_spread = 0.08;
  fs::path data_dir = SONOSCAN_DATA_DIR;
};

void make_dataset(const DatasetArgs& a, std::uint64_t seed) {
  if (a.positives + a.duplicate_groups * 3 > a.count) throw ConfigError("--count too small");
  if (a.queries == 0) throw ConfigError("--queries must be positive");
  fs::create_directories(a.out / "images");
  Rng rng(seed);

  const auto given = io::read_word_list(a.data_dir / "gazetteers" / "given_names.txt");
  const auto surnames = io::read_word_list(a.data_dir / "gazetteers" / "surnames.txt");
  const auto places = io::read_word_list(a.data_dir / "gazetteers" / "places.txt");

  std::vector<std::vector<double>> centroids;
  for (std::size_t t = 0; t < kThemes.size(); ++t) centroids.push_back(random_direction(rng, a.dim));

  // Row roles: positives first get scattered through the corpus by a
  // shuffled permutation so ids carry no signal.
  std::vector<std::size_t> order(a.count);
  for (std::size_t i = 0; i < a.count; ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));

  EmbeddingMatrix m(a.count, a.dim);
  std::vector<int> theme_of(a.count, -1);
  std::size_t next = 0;
  std::vector<std::size_t> positive_rows;
  for (std::size_t k = 0; k < a.positives; ++k) {
    const std::size_t row = order[next++];
    const int theme = static_cast<int>(k % kThemes.size());
    write_row(m, row, centroids[static_cast<std::size_t>(theme)], a.spread, rng);
    theme_of[row] = theme;
    positive_rows.push_back(row);
  }
  // Near-copies: 1-3 extra rows per group, each close to its original.
  std::vector<std::size_t> copy_source(a.count, a.count);
  for (std::size_t g = 0; g < a.duplicate_groups; ++g) {
    const std::size_t source = positive_rows[g * (a.positives / a.duplicate_groups)];
    const auto copies = 1 + rng.below(3);
    std::vector<double> base(a.dim);
    for (std::uint32_t k = 0; k < a.dim; ++k) base[k] = m.row(source)[k];
    for (std::uint64_t c = 0; c < copies; ++c) {
      const std::size_t row = order[next++];
      write_row(m, row, base, a.dup_spread, rng);
      theme_of[row] = theme_of[source];
      copy_source[row] = source;
    }
  }
  while (next < a.count) {
    const std::size_t row = order[next++];
    write_row(m, row, random_direction(rng, a.dim), 0.0, rng);
  }
  save_embeddings(a.out / "embeddings.emb", m);

  EmbeddingMatrix q(a.queries, a.dim);
  for (std::size_t k = 0; k < a.queries; ++k) {
    write_row(q, k, centroids[k % centroids.size()], 0.1, rng);
  }
  save_embeddings(a.out / "queries.emb", q);
  {
    io::AtomicFile labels(a.out / "queries.labels");
    for (std::size_t k = 0; k < a.queries; ++k) labels.stream() << "theme" << k % centroids.size() << '\n';
    labels.commit();
  }

  // Metadata, OCR sidecars and truth. Copies reuse their source's text so
  // the duplicate report has something to collapse downstream.
  std::vector<OcrSample> samples(a.count);
  std::vector<json> metadata, truth;
  char id[32];
  for (std::size_t row = 0; row < a.count; ++row) {
    if (theme_of[row] >= 0 && copy_source[row] == a.count) {
      samples[row] = ocr_sample(rng, given, surnames, places);
    }
  }
  for (std::size_t row = 0; row < a.count; ++row) {
    std::snprintf(id, sizeof id, "img%05zu", row);
    json rec = {{"id", id}, {"url", std::string("https://example.org/") + id + ".jpg"}};
    if (theme_of[row] < 0) {
      rec["caption"] = caption(rng, kBackgroundWords, 4);
      metadata.push_back(std::move(rec));
      continue;
    }
    const auto& words = kThemes[static_cast<std::size_t>(theme_of[row])].words;
    rec["caption"] = caption(rng, words, 3) + " " + caption(rng, kBackgroundWords, 1);
    const auto& sample = samples[copy_source[row] == a.count ? row : copy_source[row]];
    rec["ocr_text"] = sample.text;
    metadata.push_back(std::move(rec));
    truth.push_back({{"image_id", id}, {"spans", sample.spans}});

    write_image(a.out / "images" / (std::string(id) + ".png"), sample.text, rng);
    io::AtomicFile sidecar(a.out / "images" / (std::string(id) + ".ocr.json"));
    sidecar.stream() << json{{"text", sample.text}, {"confidence", 0.9}}.dump() << '\n';
    sidecar.commit();
  }
  {
    io::AtomicFile out(a.out / "metadata.jsonl");
    for (const auto& rec : metadata) out.stream() << rec.dump() << '\n';
    out.commit();
  }
  io::write_jsonl_atomic(a.out / "truth.jsonl",
                         io::provenance("synth", seed, {{"count", a.count}, {"positives", a.positives}}),
                         truth);
  std::cerr << "synth: " << a.count << " vectors, " << truth.size() << " planted positives\n";
}

struct SurrogateArgs {
  fs::path out;
  std::uint32_t dim = 512;
  std::size_t train = 3960, val = 990, test = 990;
  std::uint32_t informative = 32;  // coordinates whose means differ between classes
  double shift = 1.0;              // per-coordinate mean gap, in noise standard deviations
};

// Class means differ by `shift` noise S.D.s on `informative` random
// coordinates; both classes share a common offset so raw cosine similarity
// is dominated by it, as with CLIP embeddings of one domain.
void make_surrogate(const SurrogateArgs& a, std::uint64_t seed) {
  if (a.informative == 0 || a.informative > a.dim) throw ConfigError("--informative out of range");
  fs::create_directories(a.out);
  Rng rng(seed);
  const double sd = 1.0 / std::sqrt(static_cast<double>(a.dim));
  const auto center = random_direction(rng, a.dim);
  std::vector<std::size_t> coords(a.dim);
  for (std::size_t k = 0; k < a.dim; ++k) coords[k] = k;
  rng.shuffle(std::span<std::size_t>(coords));
  std::vector<double> gap(a.dim, 0.0);
  for (std::uint32_t k = 0; k < a.informative; ++k) {
    gap[coords[k]] = (rng.uniform() < 0.5 ? -0.5 : 0.5) * a.shift * sd;
  }
  auto make = [&](std::size_t n, Split split) {
    LabeledSet set;
    set.split = split;
    set.X = EmbeddingMatrix(n, a.dim);
    set.y.resize(n);
    std::vector<double> mean(a.dim);
    for (std::size_t i = 0; i < n; ++i) {
      const int label = rng.uniform() < 0.5 ? 1 : 0;
      for (std::uint32_t k = 0; k < a.dim; ++k) mean[k] = center[k] + (label == 1 ? gap[k] : -gap[k]);
      write_row(set.X, i, mean, 1.0, rng);
      set.y[i] = label;
    }
    return set;
  };
  save_labeled_set(a.out / "train.emb", make(a.train, Split::train));
  save_labeled_set(a.out / "val.emb", make(a.val, Split::val));
  save_labeled_set(a.out / "test.emb", make(a.test, Split::test));
  std::cerr << "synth: surrogate sets " << a.train << "/" << a.val << "/" << a.test << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sonoscan-synth: seeded synthetic inputs"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed)->capture_default_str();

  DatasetArgs ds;
  auto* ds_cmd = app.add_subcommand("dataset", "corpus with planted positives and duplicates");
  ds_cmd->add_option("--out", ds.out, "output directory")->required();
  ds_cmd->add_option("--count", ds.count)->capture_default_str();
  ds_cmd->add_option("--dim", ds.dim)->capture_default_str();
  ds_cmd->add_option("--positives", ds.positives)->capture_default_str();
  ds_cmd->add_option("--duplicate-groups", ds.duplicate_groups)->capture_default_str();
  ds_cmd->add_option("--queries", ds.queries)->capture_default_str();
  ds_cmd->add_option("--data-dir", ds.data_dir, "gazetteer root")->capture_default_str();

  SurrogateArgs sg;
  auto* sg_cmd = app.add_subcommand("surrogate", "labeled train/val/test sets");
  sg_cmd->add_option("--out", sg.out, "output directory")->required();
  sg_cmd->add_option("--dim", sg.dim)->capture_default_str();
  sg_cmd->add_option("--informative", sg.informative)->capture_default_str();
  sg_cmd->add_option("--shift", sg.shift)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  try {
    if (*ds_cmd) make_dataset(ds, seed);
    if (*sg_cmd) make_surrogate(sg, seed);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.category() == ErrorCategory::config ? 2 : 3;
  }
  return 0;
}
