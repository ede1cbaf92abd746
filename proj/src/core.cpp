#include "autosep/core.hpp"

#include <set>
#include <sstream>

#include "autosep/errors.hpp"
#include "autosep/hashing.hpp"

namespace autosep {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace

std::string normalize_prompt_text(std::string_view text) {
  std::string folded;
  folded.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '\r') {
      folded.push_back('\n');
      if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
    } else {
      folded.push_back(text[i]);
    }
  }
  std::size_t b = 0;
  std::size_t e = folded.size();
  while (b < e && is_space(folded[b])) ++b;
  while (e > b && is_space(folded[e - 1])) --e;
  return folded.substr(b, e - b);
}

Fingerprint fingerprint(std::string_view text) {
  const std::string norm = normalize_prompt_text(text);
  if (norm.empty()) throw ConfigError("cannot fingerprint an empty prompt");
  return sha256_hex(norm);
}

Dataset::Dataset(std::vector<ImageRef> images) : images_(std::move(images)) {
  for (std::size_t i = 0; i < images_.size(); ++i) {
    auto [it, inserted] = index_.emplace(images_[i].id(), i);
    if (!inserted) {
      throw DataError("duplicate image id '" + images_[i].id() + "' at positions " + std::to_string(it->second) +
                      " and " + std::to_string(i));
    }
  }
}

const ImageRef& Dataset::at(std::string_view id) const {
  auto idx = index_of(id);
  if (!idx) throw DataError("unknown image id '" + std::string(id) + "'");
  return images_[*idx];
}

std::optional<std::size_t> Dataset::index_of(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  std::vector<ImageRef> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(images_.at(i));
  return Dataset(std::move(out));
}

void require_disjoint(const Dataset& a, const Dataset& b) {
  std::vector<std::string> shared;
  for (const auto& image : a) {
    if (b.index_of(image.id())) shared.push_back(image.id());
  }
  if (!shared.empty()) {
    throw DataError("optimization and evaluation sets share ids: " + join(shared, ", "));
  }
}

PromptCandidate PromptCandidate::make(std::string_view text, std::optional<Fingerprint> parent, int born_iter) {
  PromptCandidate c;
  c.text = normalize_prompt_text(text);
  c.fingerprint = autosep::fingerprint(c.text);
  c.parent = std::move(parent);
  c.born_iter = born_iter;
  return c;
}

std::vector<char> TaskSpec::option_letters() const {
  std::vector<char> letters;
  for (std::size_t i = 0; i < class_names.size() && i < 26; ++i) letters.push_back(static_cast<char>('A' + i));
  return letters;
}

void TaskSpec::validate() const {
  std::vector<std::string> errors;
  if (category_noun.empty()) errors.push_back("category_noun must be non-empty");
  if (class_names.size() < 2) errors.push_back("need at least 2 classes (got " + std::to_string(class_names.size()) + ")");
  if (class_names.size() > 26) errors.push_back("at most 26 classes (got " + std::to_string(class_names.size()) + ")");
  std::set<std::string> seen;
  for (const auto& name : class_names) {
    if (!seen.insert(name).second) errors.push_back("duplicate class name '" + name + "'");
  }
  if (!errors.empty()) throw ConfigError("invalid task: " + join(errors, "; "));
}

std::vector<std::string> RunConfig::violations() const {
  std::vector<std::string> v;
  auto positive = [&](int value, const char* name) {
    if (value < 1) v.push_back(std::string(name) + " must be >= 1 (got " + std::to_string(value) + ")");
  };
  positive(iterations, "N (iterations)");
  positive(negatives_k, "k (negatives per image)");
  positive(beam_b, "b (retained prompts)");
  positive(reflections_l, "l (reflections per prompt)");
  positive(error_pairs_per_reflection, "error_pairs_per_reflection");
  positive(parallelism, "parallelism");
  positive(minibatch_size, "minibatch_size");
  if (dataset_size < 2) v.push_back("n (dataset size) must be >= 2 (got " + std::to_string(dataset_size) + ")");
  if (negatives_k > dataset_size - 1) {
    v.push_back("k must be <= n-1 (k=" + std::to_string(negatives_k) + ", n=" + std::to_string(dataset_size) + ")");
  }
  if (minibatch_size > dataset_size) {
    v.push_back("minibatch_size must be <= n (minibatch_size=" + std::to_string(minibatch_size) +
                ", n=" + std::to_string(dataset_size) + ")");
  }
  return v;
}

void RunConfig::validate() const {
  auto v = violations();
  if (!v.empty()) throw ConfigError("invalid run config: " + join(v, "; "));
}

std::int64_t RunConfig::query_budget_per_iteration() const {
  const std::int64_t n = dataset_size;
  const std::int64_t k = negatives_k;
  return (2 + n + k * n) * static_cast<std::int64_t>(beam_b) * reflections_l;
}

// --- serialization ---------------------------------------------------------

void to_json(nlohmann::json& j, const ImageRef& image) {
  j = {{"id", image.id_}, {"path", image.path_.generic_string()}};
  j["label"] = image.label_ ? nlohmann::json(*image.label_) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, ImageRef& image) {
  image.id_ = j.at("id").get<std::string>();
  image.path_ = j.at("path").get<std::string>();
  image.label_.reset();
  if (j.contains("label") && !j.at("label").is_null()) image.label_ = j.at("label").get<int>();
}

void to_json(nlohmann::json& j, const PromptCandidate& c) {
  j = {{"text", c.text}, {"fingerprint", c.fingerprint}, {"born_iter", c.born_iter}};
  j["parent"] = c.parent ? nlohmann::json(*c.parent) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, PromptCandidate& c) {
  c.text = j.at("text").get<std::string>();
  c.fingerprint = j.at("fingerprint").get<std::string>();
  c.born_iter = j.at("born_iter").get<int>();
  c.parent.reset();
  if (j.contains("parent") && !j.at("parent").is_null()) c.parent = j.at("parent").get<std::string>();
}

void to_json(nlohmann::json& j, const Description& d) {
  j = {{"image_id", d.image_id}, {"prompt_fingerprint", d.prompt_fingerprint}, {"text", d.text}, {"model_id", d.model_id}};
}

void from_json(const nlohmann::json& j, Description& d) {
  d.image_id = j.at("image_id").get<std::string>();
  d.prompt_fingerprint = j.at("prompt_fingerprint").get<std::string>();
  d.text = j.at("text").get<std::string>();
  d.model_id = j.at("model_id").get<std::string>();
}

void to_json(nlohmann::json& j, const TaskSpec& t) {
  j = {{"category_noun", t.category_noun},
       {"category_plural", t.category_plural},
       {"class_names", t.class_names},
       {"classification_template_id", t.classification_template_id}};
}

void from_json(const nlohmann::json& j, TaskSpec& t) {
  t.category_noun = j.at("category_noun").get<std::string>();
  t.category_plural = j.value("category_plural", std::string{});
  t.class_names = j.at("class_names").get<std::vector<std::string>>();
  t.classification_template_id = j.value("classification_template_id", std::string("zero_shot"));
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"iterations", c.iterations},
       {"dataset_size", c.dataset_size},
       {"negatives_k", c.negatives_k},
       {"beam_b", c.beam_b},
       {"reflections_l", c.reflections_l},
       {"minibatch_size", c.minibatch_size},
       {"error_pairs_per_reflection", c.error_pairs_per_reflection},
       {"seed", c.seed},
       {"negatives", c.negatives},
       {"parallelism", c.parallelism},
       {"skip_failed", c.skip_failed},
       {"model_id", c.model_id}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  c.iterations = j.at("iterations").get<int>();
  c.dataset_size = j.at("dataset_size").get<int>();
  c.negatives_k = j.at("negatives_k").get<int>();
  c.beam_b = j.at("beam_b").get<int>();
  c.reflections_l = j.at("reflections_l").get<int>();
  c.minibatch_size = j.at("minibatch_size").get<int>();
  c.error_pairs_per_reflection = j.at("error_pairs_per_reflection").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.negatives = j.at("negatives").get<NegativesMode>();
  c.parallelism = j.at("parallelism").get<int>();
  c.skip_failed = j.at("skip_failed").get<bool>();
  c.model_id = j.at("model_id").get<std::string>();
}

}  // namespace autosep
