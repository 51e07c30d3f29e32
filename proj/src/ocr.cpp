#include "sonoscan/ocr.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "sonoscan/subprocess.hpp"

namespace sonoscan {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<VariantSpec> plan_preprocessing(int width, int height, int step, int max_angle) {
  if (width <= 0 || height <= 0) {
    throw DataError("image dimensions must be positive, got " + std::to_string(width) + "x" +
                    std::to_string(height));
  }
  if (max_angle < 5) throw ConfigError("max rotation angle must be at least 5 degrees");
  if (step < 5 || step > max_angle) {
    throw ConfigError("rotation step must lie in [5, " + std::to_string(max_angle) + "], got " +
                      std::to_string(step));
  }
  const bool upscale = std::min(width, height) < kUpscaleBelow;
  std::vector<VariantSpec> plan{{0, upscale}};
  for (int angle = step; angle <= max_angle; angle += step) {
    plan.push_back({angle, upscale});
    plan.push_back({-angle, upscale});
  }
  return plan;
}

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

ProcessResult run_command(const std::string& command, const fs::path& image,
                          const std::string& input, std::chrono::milliseconds timeout) {
  auto argv = split_command(command);
  if (argv.empty()) throw ConfigError("no command configured");
  argv.push_back(image.string());
  return run_process(argv, input, timeout);
}

cv::Mat read_image(const fs::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw DataError("cannot read image " + path.string());
  return img;
}

void write_image(const fs::path& path, const cv::Mat& img) {
  if (!cv::imwrite(path.string(), img)) throw DataError("cannot write image " + path.string());
}

cv::Mat rotate_expanded(const cv::Mat& img, int degrees) {
  if (degrees == 0) return img;
  const cv::Point2f center((img.cols - 1) / 2.0f, (img.rows - 1) / 2.0f);
  cv::Mat m = cv::getRotationMatrix2D(center, degrees, 1.0);
  const cv::Rect2f box = cv::RotatedRect(cv::Point2f(), img.size(), degrees).boundingRect2f();
  m.at<double>(0, 2) += box.width / 2.0 - img.cols / 2.0;
  m.at<double>(1, 2) += box.height / 2.0 - img.rows / 2.0;
  cv::Mat out;
  cv::warpAffine(img, out, m, cv::Size(static_cast<int>(std::lround(box.width)),
                                       static_cast<int>(std::lround(box.height))),
                 cv::INTER_LINEAR, cv::BORDER_REPLICATE);
  return out;
}

std::string variant_name(const fs::path& image, const VariantSpec& v) {
  std::string name = image.stem().string() + "__r" + (v.rotation_degrees >= 0 ? "+" : "") +
                     std::to_string(v.rotation_degrees);
  if (v.upscale) name += "_x4";
  return name + ".png";
}

cv::Mat upscale_image(const fs::path& image, const cv::Mat& img, const OcrOptions& options,
                      const fs::path& work_dir) {
  if (options.upscale_command.empty()) {
    cv::Mat out;
    cv::resize(img, out, cv::Size(), kUpscaleFactor, kUpscaleFactor, cv::INTER_CUBIC);
    return out;
  }
  const fs::path out_path = work_dir / (image.stem().string() + "__upscaled.png");
  auto argv = split_command(options.upscale_command);
  if (argv.empty()) throw ConfigError("empty upscale command");
  argv.push_back(image.string());
  argv.push_back(out_path.string());
  const auto result = run_process(argv, {}, options.timeout);
  if (result.exit_code != 0) {
    throw ExternalCommandError("upscale command exited with status " +
                                   std::to_string(result.exit_code),
                               result.stderr_text);
  }
  return read_image(out_path);
}

OcrVariantResult invoke_ocr(const fs::path& input, const VariantSpec& variant,
                            const OcrOptions& options) {
  ProcessResult result;
  try {
    result = run_command(options.ocr_command, input, {}, options.timeout);
  } catch (const CommandNotFoundError& e) {
    throw OcrError(OcrError::Kind::not_found, e.what(), {});
  }
  if (result.exit_code != 0) {
    throw OcrError(OcrError::Kind::nonzero_exit,
                   "OCR command exited with status " + std::to_string(result.exit_code) +
                       " on " + input.string(),
                   result.stderr_text);
  }
  auto parsed = parse_ocr_response(result.stdout_text, result.stderr_text);
  parsed.rotation_degrees = variant.rotation_degrees;
  parsed.upscaled = variant.upscale;
  return parsed;
}

// Writes the variant image (if it differs from the original) and OCRs it.
OcrVariantResult ocr_variant(const fs::path& image, const cv::Mat* base, const VariantSpec& variant,
                             const OcrOptions& options, const fs::path& work_dir) {
  if (variant.rotation_degrees == 0 && !variant.upscale) return invoke_ocr(image, variant, options);
  const fs::path out = work_dir / variant_name(image, variant);
  write_image(out, rotate_expanded(*base, variant.rotation_degrees));
  return invoke_ocr(out, variant, options);
}

std::size_t alnum_count(const std::string& s) {
  return static_cast<std::size_t>(std::count_if(
      s.begin(), s.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)); }));
}

// True if a should be preferred over b.
bool better(const OcrVariantResult& a, const OcrVariantResult& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  const auto an = alnum_count(a.text), bn = alnum_count(b.text);
  if (an != bn) return an > bn;
  const int ar = std::abs(a.rotation_degrees), br = std::abs(b.rotation_degrees);
  if (ar != br) return ar < br;
  if (a.rotation_degrees != b.rotation_degrees) return a.rotation_degrees < b.rotation_degrees;
  if (a.upscaled != b.upscaled) return !a.upscaled;
  return a.text < b.text;
}

class TempDir {
 public:
  TempDir() {
    std::string pattern = (fs::temp_directory_path() / "sonoscan-ocr-XXXXXX").string();
    if (::mkdtemp(pattern.data()) == nullptr) {
      throw Error(ErrorCategory::internal, "cannot create temporary directory");
    }
    path_ = pattern;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

}  // namespace

OcrVariantResult parse_ocr_response(const std::string& stdout_text,
                                    const std::string& stderr_text) {
  const std::string line = trim(stdout_text);
  if (line.empty() || line.find('\n') != std::string::npos) {
    throw OcrError(OcrError::Kind::malformed_response,
                   "OCR command must print exactly one line, got: '" + stdout_text + "'",
                   stderr_text);
  }
  json doc;
  try {
    doc = json::parse(line);
  } catch (const json::parse_error& e) {
    throw OcrError(OcrError::Kind::malformed_response,
                   std::string("OCR response is not JSON: ") + e.what(), stderr_text);
  }
  if (!doc.is_object() || !doc.contains("text") || !doc["text"].is_string() ||
      !doc.contains("confidence") || !doc["confidence"].is_number()) {
    throw OcrError(OcrError::Kind::malformed_response,
                   "OCR response needs string 'text' and numeric 'confidence': " + line,
                   stderr_text);
  }
  OcrVariantResult r;
  r.text = doc["text"].get<std::string>();
  r.confidence = doc["confidence"].get<double>();
  if (!(r.confidence >= 0.0 && r.confidence <= 1.0)) {
    throw OcrError(OcrError::Kind::malformed_response,
                   "OCR confidence outside [0,1]: " + line, stderr_text);
  }
  return r;
}

OcrVariantResult run_ocr(const fs::path& image, const VariantSpec& variant,
                         const OcrOptions& options) {
  if (!fs::exists(image)) throw DataError("image not found: " + image.string());
  if (variant.rotation_degrees == 0 && !variant.upscale) return invoke_ocr(image, variant, options);

  std::optional<TempDir> scratch;
  fs::path work_dir = options.work_dir;
  if (work_dir.empty()) {
    scratch.emplace();
    work_dir = scratch->path();
  }
  cv::Mat base = read_image(image);
  if (variant.upscale) base = upscale_image(image, base, options, work_dir);
  return ocr_variant(image, &base, variant, options, work_dir);
}

OcrVariantResult select_best(std::span<const OcrVariantResult> variants) {
  if (variants.empty()) throw DataError("no OCR variants to choose from");
  const OcrVariantResult* best = &variants.front();
  for (const auto& v : variants.subspan(1)) {
    if (better(v, *best)) best = &v;
  }
  return *best;
}

Correction correct_text(const std::string& text, const fs::path& image,
                        const std::string& command, std::chrono::milliseconds timeout) {
  if (command.empty()) return {text, std::nullopt};
  try {
    const auto result = run_command(command, image, kCorrectionPrompt + text, timeout);
    if (result.exit_code != 0) {
      return {text, "correction command exited with status " + std::to_string(result.exit_code) +
                        ": " + trim(result.stderr_text)};
    }
    return {trim(result.stdout_text), std::nullopt};
  } catch (const Error& e) {
    return {text, std::string("correction command failed: ") + e.what()};
  }
}

OcrOutcome process_image(const std::string& image_id, const fs::path& image,
                         const OcrOptions& options) {
  if (options.ocr_command.empty()) throw ConfigError("no OCR command configured");
  cv::Mat original = read_image(image);
  const auto plan =
      plan_preprocessing(original.cols, original.rows, options.rotation_step, options.max_angle);

  std::optional<TempDir> scratch;
  fs::path work_dir = options.work_dir;
  if (work_dir.empty()) {
    scratch.emplace();
    work_dir = scratch->path();
  } else {
    fs::create_directories(work_dir);
  }
  const cv::Mat base =
      plan.front().upscale ? upscale_image(image, original, options, work_dir) : original;

  std::vector<OcrVariantResult> results(plan.size());
  std::vector<std::exception_ptr> failures(plan.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < plan.size(); k = next++) {
      try {
        results[k] = ocr_variant(image, &base, plan[k], options, work_dir);
      } catch (...) {
        failures[k] = std::current_exception();
      }
    }
  };
  const auto n_workers =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1, options.workers)), 1,
                              plan.size());
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
    worker();
  }
  // Report the failure of the earliest variant so errors do not depend on
  // scheduling.
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  OcrOutcome outcome;
  outcome.image_id = image_id;
  outcome.best = select_best(results);
  outcome.all_variants = std::move(results);
  auto corrected = correct_text(outcome.best.text, image, options.correct_command, options.timeout);
  outcome.corrected_text = std::move(corrected.text);
  if (corrected.warning) outcome.warnings.push_back(*corrected.warning);
  return outcome;
}

json to_json(const OcrVariantResult& r) {
  return {{"rotation_degrees", r.rotation_degrees},
          {"upscaled", r.upscaled},
          {"text", r.text},
          {"confidence", r.confidence}};
}

json to_json(const OcrOutcome& o) {
  json variants = json::array();
  for (const auto& v : o.all_variants) variants.push_back(to_json(v));
  return {{"image_id", o.image_id},
          {"best", to_json(o.best)},
          {"all_variants", std::move(variants)},
          {"corrected_text", o.corrected_text},
          {"warnings", o.warnings}};
}

OcrVariantResult variant_from_json(const json& doc) {
  OcrVariantResult r;
  r.rotation_degrees = doc.at("rotation_degrees").get<int>();
  r.upscaled = doc.at("upscaled").get<bool>();
  r.text = doc.at("text").get<std::string>();
  r.confidence = doc.at("confidence").get<double>();
  return r;
}

OcrOutcome outcome_from_json(const json& doc) {
  OcrOutcome o;
  o.image_id = doc.at("image_id").get<std::string>();
  o.best = variant_from_json(doc.at("best"));
  for (const auto& v : doc.at("all_variants")) o.all_variants.push_back(variant_from_json(v));
  o.corrected_text = doc.value("corrected_text", o.best.text);
  if (doc.contains("warnings")) o.warnings = doc["warnings"].get<std::vector<std::string>>();
  return o;
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir.string());
  static const std::vector<std::string> kExtensions = {".png", ".jpg", ".jpeg", ".bmp",
                                                       ".tif", ".tiff", ".webp"};
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (std::find(kExtensions.begin(), kExtensions.end(), ext) != kExtensions.end()) {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace sonoscan
