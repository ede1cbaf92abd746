#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace autosep {

using Fingerprint = std::string;

/// Trims outer whitespace and folds CRLF / lone CR into LF.
std::string normalize_prompt_text(std::string_view text);

/// SHA-256 (hex) of the normalized text. Throws ConfigError on text that is
/// empty after normalization.
Fingerprint fingerprint(std::string_view text);

/// One unlabeled image. The optional class label is only reachable through
/// EvaluationContext, which keeps the optimizer label-blind.
class ImageRef {
 public:
  ImageRef() = default;
  ImageRef(std::string id, std::filesystem::path path, std::optional<int> label = std::nullopt)
      : id_(std::move(id)), path_(std::move(path)), label_(label) {}

  const std::string& id() const { return id_; }
  const std::filesystem::path& path() const { return path_; }
  bool has_label() const { return label_.has_value(); }

  friend bool operator==(const ImageRef&, const ImageRef&) = default;
  friend void to_json(nlohmann::json& j, const ImageRef& image);
  friend void from_json(const nlohmann::json& j, ImageRef& image);

 private:
  friend class EvaluationContext;

  std::string id_;
  std::filesystem::path path_;
  std::optional<int> label_;
};

/// Gate for label reads. Every read is counted so tests can assert that an
/// optimization run performed none.
class EvaluationContext {
 public:
  std::optional<int> label(const ImageRef& image) const {
    access_count_.fetch_add(1, std::memory_order_relaxed);
    return image.label_;
  }
  static std::uint64_t access_count() { return access_count_.load(); }

 private:
  static inline std::atomic<std::uint64_t> access_count_{0};
};

/// Ordered collection of images with unique ids.
class Dataset {
 public:
  Dataset() = default;
  /// Throws DataError on duplicate ids.
  explicit Dataset(std::vector<ImageRef> images);

  std::size_t size() const { return images_.size(); }
  bool empty() const { return images_.empty(); }
  const ImageRef& operator[](std::size_t i) const { return images_[i]; }
  const ImageRef& at(std::string_view id) const;
  std::optional<std::size_t> index_of(std::string_view id) const;
  const std::vector<ImageRef>& images() const { return images_; }
  auto begin() const { return images_.begin(); }
  auto end() const { return images_.end(); }

  Dataset subset(const std::vector<std::size_t>& indices) const;

 private:
  std::vector<ImageRef> images_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Throws DataError if any id appears in both datasets.
void require_disjoint(const Dataset& a, const Dataset& b);

struct PromptCandidate {
  std::string text;
  Fingerprint fingerprint;
  std::optional<Fingerprint> parent;
  int born_iter = 0;

  /// Normalizes the text and computes its fingerprint.
  static PromptCandidate make(std::string_view text, std::optional<Fingerprint> parent = std::nullopt,
                              int born_iter = 0);

  friend bool operator==(const PromptCandidate&, const PromptCandidate&) = default;
};

struct Description {
  std::string image_id;
  Fingerprint prompt_fingerprint;
  std::string text;
  std::string model_id;

  friend bool operator==(const Description&, const Description&) = default;
};

/// Image id -> description text, for a single prompt.
using DescriptionSet = std::unordered_map<std::string, std::string>;

struct TaskSpec {
  std::string category_noun = "bird";
  std::string category_plural;  // defaults to noun + "s"
  std::vector<std::string> class_names;
  std::string classification_template_id = "zero_shot";

  std::size_t num_classes() const { return class_names.size(); }
  std::string plural() const { return category_plural.empty() ? category_noun + "s" : category_plural; }
  std::vector<char> option_letters() const;
  /// Throws ConfigError listing every violation.
  void validate() const;

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

enum class NegativesMode { kFixed, kPerIteration };

NLOHMANN_JSON_SERIALIZE_ENUM(NegativesMode, {{NegativesMode::kFixed, "fixed"},
                                             {NegativesMode::kPerIteration, "per_iteration"}})

struct RunConfig {
  int iterations = 6;                  // N
  int dataset_size = 0;                // n
  int negatives_k = 2;                 // k
  int beam_b = 4;                      // b
  int reflections_l = 3;               // l
  int minibatch_size = 60;
  int error_pairs_per_reflection = 4;
  std::uint64_t seed = 0;
  NegativesMode negatives = NegativesMode::kFixed;
  int parallelism = 1;
  bool skip_failed = false;
  std::string model_id;

  /// Every violated constraint, human readable. Empty when valid.
  std::vector<std::string> violations() const;
  /// Throws ConfigError with all violations joined.
  void validate() const;

  /// New-candidate backend calls per iteration: (2 + n + k n) b l.
  std::int64_t query_budget_per_iteration() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

void to_json(nlohmann::json& j, const PromptCandidate& c);
void from_json(const nlohmann::json& j, PromptCandidate& c);
void to_json(nlohmann::json& j, const Description& d);
void from_json(const nlohmann::json& j, Description& d);
void to_json(nlohmann::json& j, const TaskSpec& t);
void from_json(const nlohmann::json& j, TaskSpec& t);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

}  // namespace autosep
