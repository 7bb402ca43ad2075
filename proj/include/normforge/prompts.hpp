#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace normforge {

enum class PromptRole {
  flow_reasoning,
  flow_extraction,
  norm_reasoning,
  norm_extraction,
  norm_abstraction,
  grpo_task,
  grounding_judge,
  coverage_judge,
};

inline constexpr std::array<PromptRole, 8> kAllPromptRoles = {
    PromptRole::flow_reasoning,  PromptRole::flow_extraction, PromptRole::norm_reasoning,
    PromptRole::norm_extraction, PromptRole::norm_abstraction, PromptRole::grpo_task,
    PromptRole::grounding_judge, PromptRole::coverage_judge,
};

std::string_view to_string(PromptRole role);

class PromptError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using PromptVars = std::map<std::string, std::string>;

/// Text with {{name}} placeholders.
class PromptTemplate {
 public:
  PromptTemplate() = default;
  explicit PromptTemplate(std::string text);

  const std::string& text() const { return text_; }
  /// Placeholder names in order of first appearance.
  std::vector<std::string> variables() const;

  /// Single-pass substitution: substituted values are never rescanned. Every
  /// placeholder needs a value and every value needs a placeholder.
  std::string render(const PromptVars& vars) const;

  /// Inverse of render for text produced by it. Returns nullopt when the
  /// literal parts of the template do not line up with `rendered`.
  std::optional<PromptVars> match(std::string_view rendered) const;

 private:
  struct Piece {
    bool is_var;
    std::string value;  // literal text or variable name
  };
  std::vector<Piece> pieces_;
  std::string text_;
};

struct PromptPair {
  PromptTemplate system;
  PromptTemplate user;
};

/// The eight system/user template pairs, loaded from <dir>/<role>.system.txt
/// and <dir>/<role>.user.txt.
class PromptSet {
 public:
  static PromptSet load(const std::filesystem::path& dir);

  const PromptPair& get(PromptRole role) const;
  /// Role whose system prompt equals `system_prompt` exactly.
  std::optional<PromptRole> identify(std::string_view system_prompt) const;
  /// SHA-256 over all template files, in role order.
  const std::string& fingerprint() const { return fingerprint_; }

 private:
  std::map<PromptRole, PromptPair> pairs_;
  std::string fingerprint_;
};

/// NORMFORGE_PROMPT_DIR when set, otherwise the prompts/ directory of the
/// source tree this library was built from.
std::filesystem::path default_prompt_dir();

}  // namespace normforge
