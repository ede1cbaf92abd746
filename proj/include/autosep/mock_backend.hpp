#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "autosep/backend.hpp"

namespace autosep {

/// Latent-attribute world simulated by MockBackend.
///
/// Every image is a binary vector over `dims` attributes. A shared subset of
/// attributes (`class_dims`) takes a fixed per-class pattern, the remaining
/// ones are drawn per image. A description prompt "elicits" attribute j when
/// it contains lexicon[j] as a word; the description then reports that
/// attribute's value, flipped with probability `noise`.
struct MockWorld {
  int dims = 8;
  std::vector<std::string> lexicon;
  std::vector<int> class_dims;
  std::vector<std::vector<int>> class_patterns;
  double noise = 0.05;
  /// Probability that the target image is recognised without any help.
  double visual_recognition = 0.4;
  /// Probability of copying the label of a same-class in-context example.
  double label_copy = 0.5;
  /// Probability that an unelicited class / non-class attribute is
  /// mentioned vaguely ("dimJ=?") in a description.
  double mention_class_dim = 0.8;
  double mention_other_dim = 0.25;
  std::uint64_t seed = 0;

  /// Class dims and patterns drawn from `seed`; lexicon from the built-in
  /// keyword list.
  static MockWorld standard(int dims, int num_classes, double noise, std::uint64_t seed);
  static const std::vector<std::string>& default_lexicon();

  int num_classes() const { return static_cast<int>(class_patterns.size()); }
  void validate() const;
  /// Class whose pattern the latents carry, if any.
  std::optional<int> class_of(const std::vector<int>& latents) const;
  /// Attribute indices (0-based, ascending) whose keyword occurs in `prompt`.
  std::vector<int> elicited_dims(std::string_view prompt) const;
  bool is_class_dim(int dim) const;

  friend bool operator==(const MockWorld&, const MockWorld&) = default;
};

void to_json(nlohmann::json& j, const MockWorld& w);
void from_json(const nlohmann::json& j, MockWorld& w);

struct MockImage {
  std::string serial;
  std::vector<int> latents;
};

std::string encode_mock_image(const MockImage& image);
/// Throws DataError when the bytes are not a mock image.
MockImage decode_mock_image(std::string_view bytes);

/// Parsed "dimJ=V" tokens: 0-based dim -> value, with -1 for "dimJ=?".
std::map<int, int> parse_mock_description(std::string_view text);

/// Writes `per_class * num_classes` mock image files named
/// `<prefix>_NNNN.mock` under `dir` (classes interleaved) and returns them
/// labelled.
Dataset generate_mock_dataset(const MockWorld& world, const std::filesystem::path& dir, const std::string& prefix,
                              int per_class, std::uint64_t seed);

/// Deterministic stand-in for a multimodal model. Stateless: each reply is
/// a pure function of (world, request), so concurrency and process restarts
/// never change outputs.
class MockBackend : public Backend {
 public:
  explicit MockBackend(MockWorld world);

  std::string model_id() const override { return model_id_; }
  BackendReply send(const BackendRequest& request) override;

  const MockWorld& world() const { return world_; }

  std::string describe(const MockImage& image, std::string_view prompt) const;
  std::string judge(const MockImage& image, std::string_view first, std::string_view second) const;

 private:
  std::string classify(const BackendRequest& request) const;
  std::string reflect(const BackendRequest& request) const;
  std::string modify(const BackendRequest& request) const;
  double draw(const BackendRequest& request, std::string_view purpose, std::string_view serial) const;

  MockWorld world_;
  std::string model_id_;
};

}  // namespace autosep
