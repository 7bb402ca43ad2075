#include "normforge/prompts.hpp"

#include <algorithm>
#include <cstdlib>
#include <set>

#include "normforge/util.hpp"

namespace normforge {

std::string_view to_string(PromptRole role) {
  switch (role) {
    case PromptRole::flow_reasoning: return "flow_reasoning";
    case PromptRole::flow_extraction: return "flow_extraction";
    case PromptRole::norm_reasoning: return "norm_reasoning";
    case PromptRole::norm_extraction: return "norm_extraction";
    case PromptRole::norm_abstraction: return "norm_abstraction";
    case PromptRole::grpo_task: return "grpo_task";
    case PromptRole::grounding_judge: return "grounding_judge";
    case PromptRole::coverage_judge: return "coverage_judge";
  }
  return "";
}

namespace {

bool is_name_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

}  // namespace

PromptTemplate::PromptTemplate(std::string text) : text_(std::move(text)) {
  std::string literal;
  std::size_t pos = 0;
  while (pos < text_.size()) {
    const auto open = text_.find("{{", pos);
    if (open == std::string::npos) break;
    const auto close = text_.find("}}", open + 2);
    if (close == std::string::npos) break;
    const std::string name = text_.substr(open + 2, close - open - 2);
    bool valid = !name.empty();
    for (char c : name) valid = valid && is_name_char(c);
    if (!valid) {
      literal += text_.substr(pos, open + 2 - pos);
      pos = open + 2;
      continue;
    }
    literal += text_.substr(pos, open - pos);
    if (!literal.empty()) pieces_.push_back({false, std::move(literal)});
    literal.clear();
    pieces_.push_back({true, name});
    pos = close + 2;
  }
  literal += text_.substr(pos);
  if (!literal.empty()) pieces_.push_back({false, std::move(literal)});
}

std::vector<std::string> PromptTemplate::variables() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& p : pieces_) {
    if (p.is_var && seen.insert(p.value).second) out.push_back(p.value);
  }
  return out;
}

std::string PromptTemplate::render(const PromptVars& vars) const {
  const auto names = variables();
  for (const auto& [name, value] : vars) {
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      throw PromptError("template has no placeholder {{" + name + "}}");
    }
  }
  std::string out;
  out.reserve(text_.size());
  for (const auto& p : pieces_) {
    if (!p.is_var) {
      out += p.value;
      continue;
    }
    auto it = vars.find(p.value);
    if (it == vars.end()) throw PromptError("no value for placeholder {{" + p.value + "}}");
    out += it->second;
  }
  return out;
}

std::optional<PromptVars> PromptTemplate::match(std::string_view rendered) const {
  PromptVars vars;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    const auto& p = pieces_[i];
    if (!p.is_var) {
      if (rendered.substr(pos, p.value.size()) != p.value) return std::nullopt;
      pos += p.value.size();
      continue;
    }
    if (i + 1 == pieces_.size()) {
      vars[p.value] = std::string(rendered.substr(pos));
      pos = rendered.size();
      continue;
    }
    const auto& next = pieces_[i + 1];
    if (next.is_var) return std::nullopt;
    std::size_t end;
    if (i + 2 == pieces_.size()) {
      // Trailing literal: anchor at the end.
      if (rendered.size() < pos + next.value.size()) return std::nullopt;
      end = rendered.size() - next.value.size();
    } else {
      end = rendered.find(next.value, pos);
      if (end == std::string_view::npos) return std::nullopt;
    }
    vars[p.value] = std::string(rendered.substr(pos, end - pos));
    pos = end;
  }
  if (pos != rendered.size()) return std::nullopt;
  return vars;
}

PromptSet PromptSet::load(const std::filesystem::path& dir) {
  PromptSet set;
  std::string all;
  for (auto role : kAllPromptRoles) {
    PromptPair pair;
    for (const char* part : {"system", "user"}) {
      const auto path = dir / (std::string(to_string(role)) + "." + part + ".txt");
      std::string text;
      try {
        text = read_file(path);
      } catch (const std::exception&) {
        throw PromptError("missing prompt template " + path.string());
      }
      // Files end with a newline; prompts do not.
      while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
      all += text;
      all += '\0';
      (std::string_view(part) == "system" ? pair.system : pair.user) = PromptTemplate(std::move(text));
    }
    set.pairs_[role] = std::move(pair);
  }
  set.fingerprint_ = sha256_hex(all);
  return set;
}

const PromptPair& PromptSet::get(PromptRole role) const { return pairs_.at(role); }

std::optional<PromptRole> PromptSet::identify(std::string_view system_prompt) const {
  for (const auto& [role, pair] : pairs_) {
    if (pair.system.text() == system_prompt) return role;
  }
  return std::nullopt;
}

std::filesystem::path default_prompt_dir() {
  if (const char* env = std::getenv("NORMFORGE_PROMPT_DIR"); env && *env) return env;
  return NORMFORGE_DEFAULT_PROMPT_DIR;
}

}  // namespace normforge
