#include "dwiz/tags.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "dwiz/embedded_data.hpp"
#include "dwiz/error.hpp"

namespace dwiz {
namespace {

std::vector<std::vector<std::string>> parse_tsv(std::string_view tsv) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in{std::string(tsv)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

const std::map<std::string, std::string, std::less<>>& alias_table() {
  static const auto table = [] {
    std::map<std::string, std::string, std::less<>> m;
    for (auto& row : parse_tsv(embedded::kSwdaTagAliasesTsv)) {
      if (row.size() != 2) throw Error("malformed tag alias row");
      m.emplace(row[0], row[1]);
    }
    return m;
  }();
  return table;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

}  // namespace

const TagSet& TagSet::swda() {
  static const TagSet tags = parse(embedded::kSwdaTagsTsv);
  return tags;
}

TagSet TagSet::parse(std::string_view tsv) {
  TagSet set;
  std::set<std::string> seen;
  for (auto& row : parse_tsv(tsv)) {
    if (row.size() != 3) throw InvalidArgument("tag table rows need 3 tab-separated fields");
    DialogueActTag tag;
    tag.index = std::stoi(row[0]);
    tag.mnemonic = row[1];
    tag.display_name = row[2];
    if (tag.index != static_cast<int>(set.tags_.size())) {
      throw InvalidArgument("tag table indices must be contiguous from 0");
    }
    if (tag.mnemonic.empty() || !seen.insert(tag.mnemonic).second) {
      throw InvalidArgument("tag mnemonic empty or duplicated: '" + tag.mnemonic + "'");
    }
    set.tags_.push_back(std::move(tag));
  }
  return set;
}

const DialogueActTag& TagSet::at(int index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= tags_.size()) {
    throw InvalidArgument("tag index out of range: " + std::to_string(index));
  }
  return tags_[static_cast<std::size_t>(index)];
}

std::optional<int> TagSet::find(std::string_view mnemonic) const {
  auto it = std::find_if(tags_.begin(), tags_.end(),
                         [&](const DialogueActTag& t) { return t.mnemonic == mnemonic; });
  if (it == tags_.end()) return std::nullopt;
  return it->index;
}

int TagSet::index_of(std::string_view mnemonic) const {
  if (auto i = find(mnemonic)) return *i;
  throw InvalidArgument("unknown dialogue act tag '" + std::string(mnemonic) + "'");
}

std::vector<std::string> TagSet::mnemonics() const {
  std::vector<std::string> out;
  out.reserve(tags_.size());
  for (const auto& t : tags_) out.push_back(t.mnemonic);
  return out;
}

std::string collapse_act_tag(std::string_view raw) {
  // Composite annotations list several tags separated by ',' or ';'; the
  // first one is the utterance's tag.
  const auto sep = raw.find_first_of(",;");
  std::string tag(trim(raw.substr(0, sep)));

  if (tag == kContinuationTag) return tag;
  if (tag == "qy^d" || tag == "qw^d" || tag == "b^m") return tag;

  const auto& aliases = alias_table();
  if (auto it = aliases.find(tag); it != aliases.end()) return it->second;

  // Drop secondary dimensions ("sd^e" -> "sd"). A leading caret is itself a
  // tag ("^q", "^2", "^h", "^g") and is kept.
  if (auto caret = tag.find('^', 1); caret != std::string::npos) tag.erase(caret);
  std::erase_if(tag, [](char c) { return c == '(' || c == ')' || c == '@' || c == '*'; });

  if (auto it = aliases.find(tag); it != aliases.end()) return it->second;
  return tag;
}

}  // namespace dwiz
