#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "autosep/core.hpp"

namespace autosep {

/// Replaces every `{name}` whose name is a key of `vars`. Other braces are
/// left untouched so user-edited templates cannot break rendering.
std::string render_template(std::string_view tpl, const std::map<std::string, std::string>& vars);

/// One mismatched pair shown to the Reflect / Modify operators.
struct ErrorExample {
  std::string anchor_description;
  std::string other_description;
  bool anchor_shown_first = true;
};

/// Prompt templates used for every backend call. Built-in defaults can be
/// overridden per template by `<name>.txt` files in a directory.
class TemplateStore {
 public:
  static constexpr const char* kNames[] = {
      "describe_initial", "binary_choice",    "classify_zero_shot", "classify_with_description",
      "classify_fewshot", "classify_multi_image", "reflect",        "reflect_example",
      "modify",
  };

  TemplateStore();

  /// Overrides any template that has a `<name>.txt` file in `dir`.
  void load_overrides(const std::filesystem::path& dir);
  /// Writes all templates as `<name>.txt` into `dir`.
  void save(const std::filesystem::path& dir) const;

  const std::string& get(const std::string& name) const;
  void set(const std::string& name, std::string text);

  static const std::string& builtin(const std::string& name);

  std::string initial_prompt(const TaskSpec& task) const;
  std::string binary_choice(std::string_view first, std::string_view second) const;
  /// Zero-shot template when `description` is null, else the description
  /// variant with the text spliced into the features line.
  std::string classification(const TaskSpec& task, const std::string* description) const;
  std::string fewshot_random_labels(const TaskSpec& task, const std::vector<char>& context_labels) const;
  std::string multi_image(const TaskSpec& task, int context_images) const;
  std::string reflect(const TaskSpec& task, std::string_view prompt, const std::vector<ErrorExample>& errors,
                      int num_reasons) const;
  std::string modify(const TaskSpec& task, std::string_view prompt, std::string_view critique,
                     const std::vector<ErrorExample>& errors) const;

 private:
  std::string examples_block(const std::vector<ErrorExample>& errors) const;

  std::map<std::string, std::string> templates_;
};

/// "one" ... "twenty-six".
std::string number_word(int n);

}  // namespace autosep
