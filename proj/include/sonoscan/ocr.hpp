#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sonoscan/error.hpp"

namespace sonoscan {

/// Positive rotation is counterclockwise, in degrees.
struct VariantSpec {
  int rotation_degrees = 0;
  bool upscale = false;

  friend bool operator==(const VariantSpec&, const VariantSpec&) = default;
};

inline constexpr int kUpscaleBelow = 200;
inline constexpr int kUpscaleFactor = 4;

/// Rotations 0, +step, -step, +2*step, ... up to max_angle; every variant is
/// upscaled when the shorter side is under kUpscaleBelow pixels.
std::vector<VariantSpec> plan_preprocessing(int width, int height, int step = 15,
                                            int max_angle = 90);

struct OcrVariantResult {
  int rotation_degrees = 0;
  bool upscaled = false;
  std::string text;
  double confidence = 0.0;

  friend bool operator==(const OcrVariantResult&, const OcrVariantResult&) = default;
};

class OcrError : public ExternalCommandError {
 public:
  enum class Kind { not_found, nonzero_exit, malformed_response };

  OcrError(Kind kind, const std::string& what, std::string stderr_text)
      : ExternalCommandError(what, std::move(stderr_text)), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct OcrOptions {
  std::string ocr_command;
  std::string correct_command;  // empty: no correction
  std::string upscale_command;  // empty: bicubic; otherwise `CMD <in> <out>`
  int rotation_step = 15;
  int max_angle = 90;
  int workers = 1;
  std::chrono::milliseconds timeout{120000};
  /// Where variant images are written. Empty: a fresh directory under the
  /// system temp dir, removed afterwards.
  std::filesystem::path work_dir;
};

/// Parses the one-line `{"text": ..., "confidence": ...}` reply.
OcrVariantResult parse_ocr_response(const std::string& stdout_text,
                                    const std::string& stderr_text = {});

/// Writes the transformed image under options.work_dir (unless the variant
/// is the identity) and runs the OCR command on it.
OcrVariantResult run_ocr(const std::filesystem::path& image, const VariantSpec& variant,
                         const OcrOptions& options);

/// Highest confidence, then most alphanumeric characters, then smallest
/// |rotation|; remaining ties go to the lower rotation, the non-upscaled
/// variant, then the smaller text.
OcrVariantResult select_best(std::span<const OcrVariantResult> variants);

inline constexpr const char* kCorrectionPrompt = "Correct the following OCR extracted text: ";

struct Correction {
  std::string text;
  std::optional<std::string> warning;  // set when the command failed
};

Correction correct_text(const std::string& text, const std::filesystem::path& image,
                        const std::string& command,
                        std::chrono::milliseconds timeout = std::chrono::milliseconds{120000});

struct OcrOutcome {
  std::string image_id;
  OcrVariantResult best;
  std::vector<OcrVariantResult> all_variants;  // in plan order
  std::string corrected_text;
  std::vector<std::string> warnings;
};

OcrOutcome process_image(const std::string& image_id, const std::filesystem::path& image,
                         const OcrOptions& options);

nlohmann::json to_json(const OcrVariantResult& result);
nlohmann::json to_json(const OcrOutcome& outcome);
OcrVariantResult variant_from_json(const nlohmann::json& doc);
OcrOutcome outcome_from_json(const nlohmann::json& doc);

/// Image files directly inside `dir`, sorted by name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace sonoscan
