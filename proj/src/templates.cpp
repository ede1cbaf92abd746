#include "autosep/templates.hpp"

#include <fstream>
#include <sstream>

#include "autosep/errors.hpp"

namespace autosep {

namespace {

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> kDefaults = {
      {"describe_initial",
       "# Task\n"
       "Describe the {noun} in the given image in detail, focusing on highly distinctive attributes that are "
       "typical to this {noun}. Ignore the background or other information."},
      {"binary_choice",
       "Text 1: {first}. Text 2: {second}. Which description correctly describes the image? "
       "The first or the second?"},
      {"classify_zero_shot",
       "# Task\n"
       "Determine what kind of {noun} this image shows from the following options:\n"
       "\n"
       "{options}\n"
       "\n"
       "Answer the letter from A to {last_letter} as prediction.\n"
       "\n"
       "The answer is:"},
      {"classify_with_description",
       "# Task\n"
       "Determine what kind of {noun} this image shows from the following options:\n"
       "\n"
       "{options}\n"
       "\n"
       "Answer the letter from A to {last_letter} as prediction.\n"
       "\n"
       "# Prediction\n"
       "Text: The image shows the following features: {description}\n"
       "The answer is:"},
      {"classify_fewshot",
       "Your task is to classify the image to {count_word} {plural}: {inline_options}.\n"
       "\n"
       "{context}"
       "The classification of the last image is: (Answer Letter {letter_choices})"},
      {"classify_multi_image",
       "Your task is to classify the image to {count_word} {plural}: {inline_options}.\n"
       "\n"
       "The first {m} images show distinct types of {plural}.\n"
       "\n"
       "The classification of the last image is: (Answer Letter {letter_choices})"},
      {"reflect",
       "I'm trying to write a prompt that makes a model describe the {noun} in an image. Each description "
       "should let a reader pick out that exact image among other images of {plural}.\n"
       "\n"
       "My current prompt is:\n"
       "<prompt>\n"
       "{prompt}\n"
       "</prompt>\n"
       "\n"
       "In each example below, a model was shown one image (the anchor) together with two descriptions "
       "produced by this prompt: the anchor's own description and the description of a different {noun}. "
       "The model failed to choose the anchor's own description.\n"
       "\n"
       "{examples}"
       "Give {num_reasons} reasons why the prompt could have led to these mistakes. Focus on the visual "
       "attributes that the descriptions left out or left vague."},
      {"reflect_example",
       "## Example {index}\n"
       "Anchor description: {anchor}\n"
       "Other description: {other}\n"
       "Presented order: the anchor's description was shown {position}.\n"
       "\n"},
      {"modify",
       "I'm trying to write a prompt that makes a model describe the {noun} in an image. Each description "
       "should let a reader pick out that exact image among other images of {plural}.\n"
       "\n"
       "My current prompt is:\n"
       "<prompt>\n"
       "{prompt}\n"
       "</prompt>\n"
       "\n"
       "It produced descriptions that could not be told apart in these examples:\n"
       "\n"
       "{examples}"
       "Based on these examples, the problems with the prompt are:\n"
       "<reasons>\n"
       "{critique}\n"
       "</reasons>\n"
       "\n"
       "Write one improved prompt that addresses these problems. Wrap the improved prompt with <START> and "
       "<END>."},
  };
  return kDefaults;
}

}  // namespace

std::string render_template(std::string_view tpl, const std::map<std::string, std::string>& vars) {
  std::string out;
  out.reserve(tpl.size());
  std::size_t i = 0;
  while (i < tpl.size()) {
    if (tpl[i] == '{') {
      auto close = tpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        auto it = vars.find(std::string(tpl.substr(i + 1, close - i - 1)));
        if (it != vars.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tpl[i++]);
  }
  return out;
}

std::string number_word(int n) {
  static const char* kWords[] = {"zero",       "one",        "two",        "three",       "four",
                                 "five",       "six",        "seven",      "eight",       "nine",
                                 "ten",        "eleven",     "twelve",     "thirteen",    "fourteen",
                                 "fifteen",    "sixteen",    "seventeen",  "eighteen",    "nineteen",
                                 "twenty",     "twenty-one", "twenty-two", "twenty-three", "twenty-four",
                                 "twenty-five", "twenty-six"};
  if (n < 0 || n > 26) return std::to_string(n);
  return kWords[n];
}

TemplateStore::TemplateStore() : templates_(defaults()) {}

const std::string& TemplateStore::builtin(const std::string& name) {
  auto it = defaults().find(name);
  if (it == defaults().end()) throw ConfigError("unknown template '" + name + "'");
  return it->second;
}

void TemplateStore::load_overrides(const std::filesystem::path& dir) {
  for (const char* name : kNames) {
    auto file = dir / (std::string(name) + ".txt");
    if (!std::filesystem::exists(file)) continue;
    std::ifstream in(file, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    // Editors usually append a final newline; the built-ins carry none.
    if (!text.empty() && text.back() == '\n') text.pop_back();
    templates_[name] = std::move(text);
  }
}

void TemplateStore::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (const auto& [name, text] : templates_) {
    std::ofstream out(dir / (name + ".txt"), std::ios::binary);
    out << text << '\n';
  }
}

const std::string& TemplateStore::get(const std::string& name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) throw ConfigError("unknown template '" + name + "'");
  return it->second;
}

void TemplateStore::set(const std::string& name, std::string text) {
  if (!defaults().contains(name)) throw ConfigError("unknown template '" + name + "'");
  templates_[name] = std::move(text);
}

std::string TemplateStore::initial_prompt(const TaskSpec& task) const {
  return render_template(get("describe_initial"), {{"noun", task.category_noun}, {"plural", task.plural()}});
}

std::string TemplateStore::binary_choice(std::string_view first, std::string_view second) const {
  return render_template(get("binary_choice"), {{"first", std::string(first)}, {"second", std::string(second)}});
}

std::string TemplateStore::classification(const TaskSpec& task, const std::string* description) const {
  const auto letters = task.option_letters();
  std::string options;
  for (std::size_t i = 0; i < letters.size(); ++i) {
    if (i) options += '\n';
    options += std::string(1, letters[i]) + ". " + task.class_names[i];
  }
  std::map<std::string, std::string> vars = {
      {"noun", task.category_noun},
      {"plural", task.plural()},
      {"options", options},
      {"last_letter", std::string(1, letters.empty() ? 'A' : letters.back())},
  };
  if (description) {
    vars["description"] = *description;
    return render_template(get("classify_with_description"), vars);
  }
  return render_template(get("classify_zero_shot"), vars);
}

namespace {

std::map<std::string, std::string> multi_image_vars(const TaskSpec& task) {
  const auto letters = task.option_letters();
  std::string inline_options;
  std::string choices;
  for (std::size_t i = 0; i < letters.size(); ++i) {
    if (i) {
      inline_options += ", ";
      choices += " or ";
    }
    inline_options += std::string(1, letters[i]) + ". " + task.class_names[i];
    choices += letters[i];
  }
  return {{"noun", task.category_noun},
          {"plural", task.plural()},
          {"count_word", number_word(static_cast<int>(task.num_classes()))},
          {"inline_options", inline_options},
          {"letter_choices", choices}};
}

}  // namespace

std::string TemplateStore::fewshot_random_labels(const TaskSpec& task, const std::vector<char>& context_labels) const {
  auto vars = multi_image_vars(task);
  std::string context;
  for (std::size_t i = 0; i < context_labels.size(); ++i) {
    context += "The classification of the " + std::to_string(i + 1) + " image is: " + context_labels[i] + "\n\n";
  }
  vars["context"] = context;
  return render_template(get("classify_fewshot"), vars);
}

std::string TemplateStore::multi_image(const TaskSpec& task, int context_images) const {
  auto vars = multi_image_vars(task);
  vars["m"] = std::to_string(context_images);
  return render_template(get("classify_multi_image"), vars);
}

std::string TemplateStore::examples_block(const std::vector<ErrorExample>& errors) const {
  std::string block;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    block += render_template(get("reflect_example"), {{"index", std::to_string(i + 1)},
                                                      {"anchor", errors[i].anchor_description},
                                                      {"other", errors[i].other_description},
                                                      {"position", errors[i].anchor_shown_first ? "first" : "second"}});
  }
  return block;
}

std::string TemplateStore::reflect(const TaskSpec& task, std::string_view prompt,
                                   const std::vector<ErrorExample>& errors, int num_reasons) const {
  return render_template(get("reflect"), {{"noun", task.category_noun},
                                          {"plural", task.plural()},
                                          {"prompt", std::string(prompt)},
                                          {"examples", examples_block(errors)},
                                          {"num_reasons", std::to_string(num_reasons)}});
}

std::string TemplateStore::modify(const TaskSpec& task, std::string_view prompt, std::string_view critique,
                                  const std::vector<ErrorExample>& errors) const {
  return render_template(get("modify"), {{"noun", task.category_noun},
                                         {"plural", task.plural()},
                                         {"prompt", std::string(prompt)},
                                         {"examples", examples_block(errors)},
                                         {"critique", std::string(critique)}});
}

}  // namespace autosep
