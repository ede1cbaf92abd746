#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <tuple>
#include <vector>

#include "autosep/core.hpp"

namespace autosep {

/// Splits one CSV record. Supports double-quoted fields with "" escapes.
std::vector<std::string> split_csv_line(std::string_view line);
/// Quotes a field only when it contains a comma, quote or newline.
std::string csv_field(std::string_view field);

/// Loads `id,path[,label]` rows. Relative paths resolve against the
/// manifest's directory. Rejects duplicate ids (naming both rows) and lists
/// every id whose file is missing.
Dataset load_dataset(const std::filesystem::path& manifest);

/// Throws DataError if any present label falls outside [0, num_classes).
void validate_labels(const Dataset& dataset, std::size_t num_classes);

/// Writes a manifest; labels are included when `with_labels` is set and
/// every image has one (read through the evaluation gate).
void write_manifest(const std::filesystem::path& manifest, const Dataset& dataset, bool with_labels);

std::string read_text_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view content);

/// Write-once description store keyed by (image_id, prompt_fingerprint,
/// model_id). When constructed with a file, existing entries are loaded and
/// new ones appended as JSON lines.
class DescriptionCache {
 public:
  DescriptionCache() = default;
  explicit DescriptionCache(std::filesystem::path file);

  std::optional<Description> get(const std::string& image_id, const Fingerprint& prompt,
                                 const std::string& model_id) const;
  /// Returns false (and leaves the stored entry untouched) if the key exists.
  bool put(const Description& description);
  std::size_t size() const;

 private:
  using Key = std::tuple<std::string, std::string, std::string>;

  mutable std::shared_mutex mutex_;
  std::map<Key, Description> entries_;
  std::optional<std::filesystem::path> file_;
};

}  // namespace autosep
