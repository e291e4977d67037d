#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace dwiz {

enum class Speaker { A, B };

char speaker_char(Speaker s);

struct LabeledUtterance {
  std::string conversation_id;
  std::size_t position = 0;
  Speaker speaker = Speaker::A;
  std::string raw_text;
  std::string clean_text;
  std::vector<std::string> tokens;
  int tag = 0;  // index into TagSet::swda()
};

struct Conversation {
  std::string id;
  std::vector<LabeledUtterance> utterances;
};

struct CorpusSplit {
  std::vector<Conversation> train;
  std::vector<Conversation> validation;
  std::vector<Conversation> test;
};

struct SplitCounts {
  std::size_t conversations = 0;
  std::size_t utterances = 0;
};

std::size_t utterance_count(const std::vector<Conversation>& conversations);
SplitCounts count(const std::vector<Conversation>& conversations);

/// Reads every *.csv file under `directory` (recursively, sorted by path)
/// in the public SwDA release layout. Throws IngestError on a missing or
/// empty directory, a malformed row (message names file and line), or a tag
/// that does not collapse onto the 42-class set.
std::vector<Conversation> load_swda(const std::filesystem::path& directory);

/// Parses one SwDA conversation CSV. `source_name` is used in error messages.
Conversation parse_swda_csv(std::istream& in, const std::string& source_name);

/// Builds the train/validation/test split. Validation is carved from the
/// last `validation_count` ids of the train list (in list order); train
/// keeps the rest. Throws InvalidArgument on overlapping or unknown ids.
CorpusSplit split_corpus(const std::vector<Conversation>& all,
                         const std::vector<std::string>& train_ids,
                         const std::vector<std::string>& test_ids,
                         std::size_t validation_count = 19);

/// One id per line; blank lines and '#' comments are ignored.
std::vector<std::string> read_id_list(const std::filesystem::path& path);
void write_id_list(const std::filesystem::path& path, const std::vector<std::string>& ids);
std::vector<std::string> conversation_ids(const std::vector<Conversation>& conversations);

/// Most frequent tag over the given conversations; ties go to the lowest index.
int most_common_tag(const std::vector<Conversation>& conversations);

/// Accuracy on `split.test` of always predicting the most frequent tag of
/// train plus validation.
double most_common_class_baseline(const CorpusSplit& split);

/// Normalized corpus interchange: one JSON object per utterance with
/// conversation_id, position, speaker, clean_text, tokens, tag (mnemonic).
void write_jsonl(std::ostream& out, const std::vector<Conversation>& conversations);
std::vector<Conversation> read_jsonl(std::istream& in);

/// The bundled test conversation list.
std::vector<std::string> default_test_ids();

/// Train ids for a corpus: every loaded id that is neither a test id nor
/// excluded, in load order.
std::vector<std::string> default_train_ids(const std::vector<Conversation>& all,
                                           const std::vector<std::string>& test_ids,
                                           const std::vector<std::string>& exclude_ids);

/// Directory layout written by prepare-corpus: {train,validation,test}.jsonl
/// plus splits/{train,validation,test}.txt.
void save_prepared_corpus(const std::filesystem::path& directory, const CorpusSplit& split);
CorpusSplit load_prepared_corpus(const std::filesystem::path& directory);

}  // namespace dwiz
