#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dwiz {

inline constexpr std::size_t kNumTags = 42;

struct DialogueActTag {
  int index = 0;
  std::string mnemonic;
  std::string display_name;

  friend bool operator==(const DialogueActTag&, const DialogueActTag&) = default;
};

/// The 42 clustered SwDA dialogue-act classes, loaded from the bundled
/// swda_tags.tsv table. Index order follows corpus frequency.
class TagSet {
 public:
  static const TagSet& swda();

  /// Parses a tab-separated table of (index, mnemonic, display name) rows.
  static TagSet parse(std::string_view tsv);

  std::size_t size() const noexcept { return tags_.size(); }
  const DialogueActTag& at(int index) const;
  const std::vector<DialogueActTag>& all() const noexcept { return tags_; }

  std::optional<int> find(std::string_view mnemonic) const;
  /// Throws InvalidArgument for an unknown mnemonic.
  int index_of(std::string_view mnemonic) const;

  std::vector<std::string> mnemonics() const;

 private:
  std::vector<DialogueActTag> tags_;
};

/// Marker returned by collapse_act_tag for SwDA continuation rows.
inline constexpr std::string_view kContinuationTag = "+";

/// Collapses a raw SwDA act_tag (possibly composite, e.g. "sd^e", "qy^d",
/// "aa,sv") onto its 42-class cluster mnemonic. Returns "+" for
/// continuation rows; the caller resolves those against the speaker's
/// previous tag. The result is not validated against the tag set.
std::string collapse_act_tag(std::string_view raw);

}  // namespace dwiz
