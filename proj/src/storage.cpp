#include "autosep/storage.hpp"

#include <fstream>
#include <mutex>
#include <sstream>
#include <unordered_map>

#include "autosep/errors.hpp"

namespace autosep {

namespace fs = std::filesystem;

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

std::string csv_field(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}

Dataset load_dataset(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open manifest " + manifest.string());

  std::string line;
  if (!std::getline(in, line)) throw DataError("manifest " + manifest.string() + " is empty");
  const auto header = split_csv_line(line);
  int id_col = -1, path_col = -1, label_col = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "id") id_col = static_cast<int>(i);
    else if (header[i] == "path") path_col = static_cast<int>(i);
    else if (header[i] == "label") label_col = static_cast<int>(i);
  }
  if (id_col < 0 || path_col < 0) {
    throw DataError("manifest " + manifest.string() + " must have 'id' and 'path' columns");
  }

  const fs::path base = manifest.parent_path();
  std::vector<ImageRef> images;
  std::unordered_map<std::string, int> first_row;
  std::vector<std::string> missing;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    auto need = static_cast<std::size_t>(std::max({id_col, path_col, label_col}) + 1);
    if (fields.size() < need) {
      throw DataError("manifest row " + std::to_string(row) + ": expected " + std::to_string(need) + " fields");
    }
    const std::string& id = fields[id_col];
    if (id.empty()) throw DataError("manifest row " + std::to_string(row) + ": empty id");
    if (auto [it, inserted] = first_row.emplace(id, row); !inserted) {
      throw DataError("duplicate image id '" + id + "' in manifest rows " + std::to_string(it->second) + " and " +
                      std::to_string(row));
    }
    fs::path path = fields[path_col];
    if (path.is_relative()) path = base / path;
    if (!fs::is_regular_file(path)) missing.push_back(id);

    std::optional<int> label;
    if (label_col >= 0 && !fields[label_col].empty()) {
      try {
        std::size_t used = 0;
        int value = std::stoi(fields[label_col], &used);
        if (used != fields[label_col].size() || value < 0) throw std::invalid_argument("label");
        label = value;
      } catch (const std::exception&) {
        throw DataError("manifest row " + std::to_string(row) + ": invalid label '" + fields[label_col] + "'");
      }
    }
    images.emplace_back(id, std::move(path), label);
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size(); ++i) list += (i ? ", " : "") + missing[i];
    throw DataError("image files missing for ids: " + list);
  }
  return Dataset(std::move(images));
}

void validate_labels(const Dataset& dataset, std::size_t num_classes) {
  EvaluationContext ctx;
  for (const auto& image : dataset) {
    auto label = ctx.label(image);
    if (label && (*label < 0 || static_cast<std::size_t>(*label) >= num_classes)) {
      throw DataError("image '" + image.id() + "' has label " + std::to_string(*label) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    }
  }
}

void write_manifest(const fs::path& manifest, const Dataset& dataset, bool with_labels) {
  EvaluationContext ctx;
  bool labels = with_labels;
  for (const auto& image : dataset) labels = labels && image.has_label();
  std::ostringstream out;
  out << (labels ? "id,path,label\n" : "id,path\n");
  const fs::path base = fs::absolute(manifest).parent_path();
  for (const auto& image : dataset) {
    const fs::path path = fs::absolute(image.path()).lexically_normal().lexically_relative(base.lexically_normal());
    out << csv_field(image.id()) << ',' << csv_field(path.generic_string());
    if (labels) out << ',' << *ctx.label(image);
    out << '\n';
  }
  atomic_write(manifest, out.str());
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void atomic_write(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

DescriptionCache::DescriptionCache(fs::path file) : file_(std::move(file)) {
  if (!fs::exists(*file_)) return;
  std::ifstream in(*file_);
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    Description d;
    try {
      d = nlohmann::json::parse(line).get<Description>();
    } catch (const std::exception& e) {
      // A torn final line from an interrupted write is tolerated; anything
      // else is corruption.
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw DataError("corrupt description cache " + file_->string() + " line " + std::to_string(row) + ": " +
                      e.what());
    }
    entries_.emplace(Key{d.image_id, d.prompt_fingerprint, d.model_id}, std::move(d));
  }
}

std::optional<Description> DescriptionCache::get(const std::string& image_id, const Fingerprint& prompt,
                                                 const std::string& model_id) const {
  std::shared_lock lock(mutex_);
  auto it = entries_.find(Key{image_id, prompt, model_id});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

bool DescriptionCache::put(const Description& description) {
  std::unique_lock lock(mutex_);
  auto [it, inserted] =
      entries_.emplace(Key{description.image_id, description.prompt_fingerprint, description.model_id}, description);
  if (!inserted) return false;
  if (file_) {
    std::ofstream out(*file_, std::ios::app);
    if (!out) throw DataError("cannot append to description cache " + file_->string());
    out << nlohmann::json(description).dump() << '\n';
  }
  return true;
}

std::size_t DescriptionCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

}  // namespace autosep
