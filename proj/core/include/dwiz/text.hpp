#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace dwiz {

/// Removes SwDA transcription markup and normalizes the text:
///  - slash-unit terminators "/" are dropped
///  - repair brackets "[", "]" and the "+" interruption point are dropped,
///    both the reparandum and the repair words are kept
///  - discourse braces "{D ...}", "{F ...}" etc. lose the brace and code
///    letter but keep the inner words
///  - angle-bracket annotations such as "<laughter>" are removed with content
///  - "#", "(", ")" and dash-only tokens are dropped
///  - the result is lowercased, terminal punctuation (. , ? !) becomes a
///    standalone token, and whitespace is collapsed
std::string clean_utterance(std::string_view raw_text);

/// Whitespace split after separating . , ? ! into standalone tokens.
std::vector<std::string> tokenize(std::string_view clean_text);

std::string join_tokens(const std::vector<std::string>& tokens);

}  // namespace dwiz
