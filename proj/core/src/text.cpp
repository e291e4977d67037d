#include "dwiz/text.hpp"

#include <cctype>

namespace dwiz {
namespace {

bool is_split_punct(char c) { return c == '.' || c == ',' || c == '?' || c == '!'; }

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

// Splits on whitespace, with . , ? ! always forming their own token.
std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (char c : text) {
    if (is_space(c)) {
      flush();
    } else if (is_split_punct(c)) {
      flush();
      tokens.emplace_back(1, c);
    } else {
      current.push_back(c);
    }
  }
  flush();
  return tokens;
}

}  // namespace

std::string clean_utterance(std::string_view raw_text) {
  std::string stripped;
  stripped.reserve(raw_text.size());

  int angle_depth = 0;
  for (std::size_t i = 0; i < raw_text.size(); ++i) {
    const char c = raw_text[i];
    if (c == '<') {
      ++angle_depth;
      continue;
    }
    if (c == '>') {
      if (angle_depth > 0) --angle_depth;
      stripped.push_back(' ');
      continue;
    }
    if (angle_depth > 0) continue;

    if (c == '{') {
      // "{D", "{F", "{C", "{E", "{A": drop the code letter with the brace.
      if (i + 1 < raw_text.size() && std::isupper(static_cast<unsigned char>(raw_text[i + 1])) &&
          (i + 2 >= raw_text.size() || is_space(raw_text[i + 2]))) {
        ++i;
      }
      stripped.push_back(' ');
      continue;
    }
    switch (c) {
      case '}':
      case '[':
      case ']':
      case '+':
      case '/':
      case '#':
      case '(':
      case ')':
        stripped.push_back(' ');
        break;
      default:
        stripped.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }

  std::vector<std::string> kept;
  for (auto& tok : split_tokens(stripped)) {
    if (tok.find_first_not_of('-') == std::string::npos) continue;
    kept.push_back(std::move(tok));
  }
  return join_tokens(kept);
}

std::vector<std::string> tokenize(std::string_view clean_text) { return split_tokens(clean_text); }

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

}  // namespace dwiz
