#include "autosep/mock_backend.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <set>
#include <sstream>

#include "autosep/errors.hpp"
#include "autosep/hashing.hpp"

namespace autosep {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kMagic = "AUTOSEP-MOCK-IMAGE 1";

constexpr const char* kPhrases[] = {
    "Describe the {kw} precisely.",
    "Pay close attention to the {kw}.",
    "Note the exact appearance of the {kw}.",
    "State clearly what the {kw} looks like.",
    "Mention the {kw} explicitly, including its colour and shape.",
    "Report any pattern or marking on the {kw}.",
    "Be specific about the {kw} rather than general impressions.",
    "Compare the {kw} against what is usual and point out differences.",
};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool has_word(const std::string& lowered_text, const std::string& word) {
  auto alpha = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
  for (auto pos = lowered_text.find(word); pos != std::string::npos; pos = lowered_text.find(word, pos + 1)) {
    bool left = pos == 0 || !alpha(lowered_text[pos - 1]);
    bool right = pos + word.size() >= lowered_text.size() || !alpha(lowered_text[pos + word.size()]);
    if (left && right) return true;
  }
  return false;
}

std::string between(std::string_view text, std::string_view open, std::string_view close) {
  auto b = text.find(open);
  if (b == std::string_view::npos) return {};
  b += open.size();
  auto e = text.find(close, b);
  if (e == std::string_view::npos) return {};
  return std::string(text.substr(b, e - b));
}

std::string letter(int index) { return std::string(1, static_cast<char>('A' + index)); }

}  // namespace

// --- world -------------------------------------------------------------------

const std::vector<std::string>& MockWorld::default_lexicon() {
  static const std::vector<std::string> kLexicon = {"bill",  "crown", "wing", "tail",  "breast", "eye",
                                                    "leg",   "throat", "nape", "belly", "back",   "rump",
                                                    "flank", "cheek", "forehead", "mantle"};
  return kLexicon;
}

MockWorld MockWorld::standard(int dims, int num_classes, double noise, std::uint64_t seed) {
  if (dims < 1 || dims > static_cast<int>(default_lexicon().size())) {
    throw ConfigError("mock world dims must be in [1, " + std::to_string(default_lexicon().size()) + "]");
  }
  if (num_classes < 2) throw ConfigError("mock world needs at least 2 classes");
  MockWorld w;
  w.dims = dims;
  w.noise = noise;
  w.seed = seed;
  w.lexicon.assign(default_lexicon().begin(), default_lexicon().begin() + dims);
  int bits = 1;
  while ((1 << bits) < num_classes) ++bits;
  if (bits > dims) throw ConfigError("mock world has too few dims for " + std::to_string(num_classes) + " classes");

  Rng rng(derive_seed(seed, "mock-world"));
  auto picked = rng.sample_indices(static_cast<std::size_t>(dims), static_cast<std::size_t>(bits));
  std::sort(picked.begin(), picked.end());
  for (auto d : picked) w.class_dims.push_back(static_cast<int>(d));
  auto codes = rng.sample_indices(std::size_t{1} << bits, static_cast<std::size_t>(num_classes));
  for (auto code : codes) {
    std::vector<int> pattern;
    for (int b = 0; b < bits; ++b) pattern.push_back(static_cast<int>((code >> b) & 1U));
    w.class_patterns.push_back(std::move(pattern));
  }
  w.validate();
  return w;
}

void MockWorld::validate() const {
  std::vector<std::string> errors;
  if (dims < 1) errors.push_back("dims must be >= 1");
  if (static_cast<int>(lexicon.size()) != dims) errors.push_back("lexicon must have one keyword per dim");
  std::set<std::string> words;
  for (const auto& w : lexicon) {
    if (w.empty() || w != lower(w) || !words.insert(w).second) errors.push_back("bad or duplicate keyword '" + w + "'");
  }
  std::set<int> cd(class_dims.begin(), class_dims.end());
  if (cd.size() != class_dims.size() || class_dims.empty()) errors.push_back("class_dims must be non-empty and distinct");
  for (int d : class_dims) {
    if (d < 0 || d >= dims) errors.push_back("class dim out of range");
  }
  if (class_patterns.size() < 2) errors.push_back("need at least 2 classes");
  std::set<std::vector<int>> patterns;
  for (const auto& p : class_patterns) {
    if (p.size() != class_dims.size()) errors.push_back("pattern size must equal class_dims size");
    if (!patterns.insert(p).second) errors.push_back("class patterns must be distinct");
    for (int v : p) {
      if (v != 0 && v != 1) errors.push_back("pattern values must be 0/1");
    }
  }
  auto prob = [&](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) errors.push_back(std::string(name) + " must be in [0,1]");
  };
  if (!(noise >= 0.0 && noise < 0.5)) errors.push_back("noise must be in [0, 0.5)");
  prob(visual_recognition, "visual_recognition");
  prob(label_copy, "label_copy");
  prob(mention_class_dim, "mention_class_dim");
  prob(mention_other_dim, "mention_other_dim");
  if (!errors.empty()) {
    std::string msg = "invalid mock world:";
    for (const auto& e : errors) msg += " " + e + ";";
    throw ConfigError(msg);
  }
}

std::optional<int> MockWorld::class_of(const std::vector<int>& latents) const {
  for (int c = 0; c < num_classes(); ++c) {
    bool match = true;
    for (std::size_t i = 0; i < class_dims.size() && match; ++i) {
      match = latents.at(static_cast<std::size_t>(class_dims[i])) == class_patterns[c][i];
    }
    if (match) return c;
  }
  return std::nullopt;
}

std::vector<int> MockWorld::elicited_dims(std::string_view prompt) const {
  const std::string text = lower(prompt);
  std::vector<int> out;
  for (int d = 0; d < dims; ++d) {
    if (has_word(text, lexicon[d])) out.push_back(d);
  }
  return out;
}

bool MockWorld::is_class_dim(int dim) const {
  return std::find(class_dims.begin(), class_dims.end(), dim) != class_dims.end();
}

void to_json(nlohmann::json& j, const MockWorld& w) {
  j = {{"dims", w.dims},
       {"lexicon", w.lexicon},
       {"class_dims", w.class_dims},
       {"class_patterns", w.class_patterns},
       {"noise", w.noise},
       {"visual_recognition", w.visual_recognition},
       {"label_copy", w.label_copy},
       {"mention_class_dim", w.mention_class_dim},
       {"mention_other_dim", w.mention_other_dim},
       {"seed", w.seed}};
}

void from_json(const nlohmann::json& j, MockWorld& w) {
  w.dims = j.at("dims").get<int>();
  w.lexicon = j.at("lexicon").get<std::vector<std::string>>();
  w.class_dims = j.at("class_dims").get<std::vector<int>>();
  w.class_patterns = j.at("class_patterns").get<std::vector<std::vector<int>>>();
  w.noise = j.at("noise").get<double>();
  w.visual_recognition = j.value("visual_recognition", 0.4);
  w.label_copy = j.value("label_copy", 0.5);
  w.mention_class_dim = j.value("mention_class_dim", 0.8);
  w.mention_other_dim = j.value("mention_other_dim", 0.25);
  w.seed = j.at("seed").get<std::uint64_t>();
  w.validate();
}

// --- images ------------------------------------------------------------------

std::string encode_mock_image(const MockImage& image) {
  std::string bits;
  for (int v : image.latents) bits.push_back(v ? '1' : '0');
  return std::string(kMagic) + "\nserial=" + image.serial + "\nlatents=" + bits + "\n";
}

MockImage decode_mock_image(std::string_view bytes) {
  if (bytes.substr(0, kMagic.size()) != kMagic) throw DataError("not a mock image payload");
  MockImage image;
  image.serial = between(bytes, "\nserial=", "\n");
  const std::string bits = between(bytes, "\nlatents=", "\n");
  if (image.serial.empty() || bits.empty()) throw DataError("truncated mock image payload");
  for (char c : bits) {
    if (c != '0' && c != '1') throw DataError("bad latent bit in mock image");
    image.latents.push_back(c - '0');
  }
  return image;
}

std::map<int, int> parse_mock_description(std::string_view text) {
  static const std::regex kToken(R"(dim(\d+)=([01?]))");
  std::map<int, int> out;
  const std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), kToken); it != std::sregex_iterator(); ++it) {
    int dim = std::stoi((*it)[1].str()) - 1;
    char v = (*it)[2].str()[0];
    out[dim] = v == '?' ? -1 : v - '0';
  }
  return out;
}

Dataset generate_mock_dataset(const MockWorld& world, const fs::path& dir, const std::string& prefix, int per_class,
                              std::uint64_t seed) {
  world.validate();
  fs::create_directories(dir);
  Rng rng(derive_seed(seed, "mock-dataset", prefix));
  const int total = per_class * world.num_classes();
  std::vector<ImageRef> images;
  for (int i = 0; i < total; ++i) {
    const int cls = i % world.num_classes();
    MockImage image;
    char serial[32];
    std::snprintf(serial, sizeof(serial), "%s_%04d", prefix.c_str(), i);
    image.serial = serial;
    image.latents.assign(static_cast<std::size_t>(world.dims), 0);
    for (int d = 0; d < world.dims; ++d) image.latents[d] = rng.bernoulli_half() ? 1 : 0;
    for (std::size_t c = 0; c < world.class_dims.size(); ++c) {
      image.latents[world.class_dims[c]] = world.class_patterns[cls][c];
    }
    const fs::path path = dir / (image.serial + ".mock");
    atomic_write(path, encode_mock_image(image));
    images.emplace_back(image.serial, path, cls);
  }
  return Dataset(std::move(images));
}

// --- backend -----------------------------------------------------------------

MockBackend::MockBackend(MockWorld world) : world_(std::move(world)) {
  world_.validate();
  model_id_ = "mock-" + sha256_hex(nlohmann::json(world_).dump()).substr(0, 12);
}

double MockBackend::draw(const BackendRequest& request, std::string_view purpose, std::string_view serial) const {
  StableHasher h(world_.seed);
  h.add(purpose).add(serial).add(request.prompt_text);
  if (request.temperature > 0.0) h.add(request.sample_index);
  return h.unit();
}

BackendReply MockBackend::send(const BackendRequest& request) {
  request.validate();
  switch (request.kind) {
    case RequestKind::kDescribe: {
      auto image = decode_mock_image(request.images.front().bytes);
      return {describe(image, request.prompt_text), std::nullopt, std::nullopt};
    }
    case RequestKind::kBinaryChoice: {
      auto image = decode_mock_image(request.images.front().bytes);
      const std::string& p = request.prompt_text;
      auto a = p.find("Text 1:");
      auto b = p.rfind("Text 2:");
      auto e = p.rfind("Which description");
      if (a == std::string::npos || b == std::string::npos || e == std::string::npos || !(a < b && b < e)) {
        return {"I am not sure.", std::nullopt, std::nullopt};
      }
      return {judge(image, p.substr(a + 7, b - a - 7), p.substr(b + 7, e - b - 7)), std::nullopt, std::nullopt};
    }
    case RequestKind::kClassify:
      return {classify(request), std::nullopt, std::nullopt};
    case RequestKind::kReflect:
      return {reflect(request), std::nullopt, std::nullopt};
    case RequestKind::kModify:
      return {modify(request), std::nullopt, std::nullopt};
  }
  throw BackendError("mock backend: unknown request kind");
}

std::string MockBackend::describe(const MockImage& image, std::string_view prompt) const {
  const std::string prompt_text(prompt);
  const auto elicited = world_.elicited_dims(prompt);
  std::vector<std::string> tokens;
  for (int d : elicited) {
    int v = image.latents.at(d);
    StableHasher h(world_.seed);
    if (h.add("noise").add(image.serial).add(prompt_text).add(d).unit() < world_.noise) v = 1 - v;
    tokens.push_back("dim" + std::to_string(d + 1) + "=" + std::to_string(v));
  }
  for (int d = 0; d < world_.dims; ++d) {
    if (std::find(elicited.begin(), elicited.end(), d) != elicited.end()) continue;
    const double p = world_.is_class_dim(d) ? world_.mention_class_dim : world_.mention_other_dim;
    StableHasher h(world_.seed);
    if (h.add("mention").add(image.serial).add(prompt_text).add(d).unit() < p) {
      tokens.push_back("dim" + std::to_string(d + 1) + "=?");
    }
  }
  if (tokens.empty()) return "general appearance only, no distinctive attribute singled out";
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) out += (i ? ";" : "") + tokens[i];
  return out;
}

std::string MockBackend::judge(const MockImage& image, std::string_view first, std::string_view second) const {
  auto distance = [&](std::string_view text) {
    int dist = 0;
    for (auto [dim, value] : parse_mock_description(text)) {
      if (value < 0 || dim < 0 || dim >= world_.dims) continue;
      dist += value != image.latents[dim] ? 1 : 0;
    }
    return dist;
  };
  const int d1 = distance(first);
  const int d2 = distance(second);
  if (d1 != d2) return d1 < d2 ? "First" : "Second";
  StableHasher h(world_.seed);
  return h.add("tie").add(image.serial).unit() < 0.5 ? "First" : "Second";
}

std::string MockBackend::classify(const BackendRequest& request) const {
  const auto target = decode_mock_image(request.images.back().bytes);
  const auto truth = world_.class_of(target.latents);
  const int classes = world_.num_classes();
  const std::string& prompt = request.prompt_text;

  // In-context examples: the model sometimes copies the label it was given
  // for an example that looks like the target.
  static const std::regex kContext(R"(The classification of the (\d+) image is: ([A-Z]))");
  std::map<int, char> given;
  for (auto it = std::sregex_iterator(prompt.begin(), prompt.end(), kContext); it != std::sregex_iterator(); ++it) {
    given[std::stoi((*it)[1].str()) - 1] = (*it)[2].str()[0];
  }
  if (!given.empty() && request.images.size() > 1 && draw(request, "copy", target.serial) < world_.label_copy) {
    std::vector<char> lookalikes;
    for (std::size_t i = 0; i + 1 < request.images.size(); ++i) {
      auto it = given.find(static_cast<int>(i));
      if (it == given.end()) continue;
      auto context = decode_mock_image(request.images[i].bytes);
      if (world_.class_of(context.latents) == truth) lookalikes.push_back(it->second);
    }
    if (!lookalikes.empty()) {
      auto pick = static_cast<std::size_t>(draw(request, "copy-pick", target.serial) * lookalikes.size());
      return std::string("The answer is: ") + lookalikes[std::min(pick, lookalikes.size() - 1)];
    }
  }

  StableHasher vis(world_.seed);
  if (truth && vis.add("visual").add(target.serial).unit() < world_.visual_recognition) {
    return "The answer is: " + letter(*truth);
  }

  std::vector<int> consistent;
  const auto features = between(prompt, "The image shows the following features:", "The answer is:");
  const auto described = parse_mock_description(features);
  for (int c = 0; c < classes; ++c) {
    bool ok = true;
    for (std::size_t i = 0; i < world_.class_dims.size() && ok; ++i) {
      auto it = described.find(world_.class_dims[i]);
      if (it != described.end() && it->second >= 0) ok = it->second == world_.class_patterns[c][i];
    }
    if (ok) consistent.push_back(c);
  }
  if (consistent.empty()) {
    for (int c = 0; c < classes; ++c) consistent.push_back(c);
  }
  auto pick = static_cast<std::size_t>(draw(request, "guess", target.serial) * consistent.size());
  return "The answer is: " + letter(consistent[std::min(pick, consistent.size() - 1)]);
}

std::string MockBackend::reflect(const BackendRequest& request) const {
  const std::string& prompt = request.prompt_text;
  const auto current = between(prompt, "<prompt>\n", "\n</prompt>");
  const auto elicited = world_.elicited_dims(current);
  auto is_elicited = [&](int d) { return std::find(elicited.begin(), elicited.end(), d) != elicited.end(); };

  std::map<int, int> mentions;
  std::set<int> seen;
  std::istringstream lines(prompt);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.rfind("Anchor description:", 0) != 0 && line.rfind("Other description:", 0) != 0) continue;
    for (auto [dim, value] : parse_mock_description(line)) {
      seen.insert(dim);
      if (value < 0 && !is_elicited(dim)) ++mentions[dim];
    }
  }

  std::vector<int> best;
  int best_count = 0;
  for (auto [dim, count] : mentions) {
    if (count > best_count) {
      best = {dim};
      best_count = count;
    } else if (count == best_count) {
      best.push_back(dim);
    }
  }
  if (best.empty()) {
    for (int d = 0; d < world_.dims; ++d) {
      if (!is_elicited(d)) best.push_back(d);
    }
  }

  std::string critique;
  if (!best.empty()) {
    auto pick = static_cast<std::size_t>(draw(request, "reflect-pick", "") * best.size());
    const auto& kw = world_.lexicon[best[std::min(pick, best.size() - 1)]];
    critique += "1. The descriptions never state the " + kw + " precisely, so images that differ in their " + kw +
                " receive the same description.\n";
    critique += "missing: " + kw + "\n";
  } else {
    critique += "1. The prompt already asks for every attribute I can see; the remaining errors look like noise.\n";
  }
  for (int d : elicited) {
    if (!seen.contains(d)) {
      critique += "2. The descriptions ignore the " + world_.lexicon[d] + ", so asking for it adds nothing.\n";
      critique += "irrelevant: " + world_.lexicon[d] + "\n";
      break;
    }
  }
  return critique;
}

std::string MockBackend::modify(const BackendRequest& request) const {
  const std::string& prompt = request.prompt_text;
  std::string text = between(prompt, "<prompt>\n", "\n</prompt>");
  const std::string critique = between(prompt, "<reasons>", "</reasons>");
  if (text.empty()) return "I could not find the prompt to revise.";

  static const std::regex kMissing(R"(missing: ([a-z]+))");
  static const std::regex kIrrelevant(R"(irrelevant: ([a-z]+))");
  std::smatch m;
  if (std::regex_search(critique, m, kIrrelevant)) {
    const std::string kw = m[1].str();
    std::string kept;
    std::size_t start = 0;
    while (start < text.size()) {
      auto end = text.find(". ", start);
      std::string sentence = text.substr(start, end == std::string::npos ? std::string::npos : end + 2 - start);
      if (!has_word(lower(sentence), kw)) kept += sentence;
      if (end == std::string::npos) break;
      start = end + 2;
    }
    if (!kept.empty()) text = kept;
  }
  if (std::regex_search(critique, m, kMissing)) {
    const std::string kw = m[1].str();
    if (!has_word(lower(text), kw)) {
      constexpr auto n = std::size(kPhrases);
      auto pick = std::min(static_cast<std::size_t>(draw(request, "phrase", "") * n), n - 1);
      text += " " + render_template(kPhrases[pick], {{"kw", kw}});
    }
  }
  return "Here is the revised prompt.\n<START>\n" + text + "\n<END>";
}

}  // namespace autosep
