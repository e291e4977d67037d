#include "dwiz/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dwiz/embedded_data.hpp"
#include "dwiz/error.hpp"
#include "dwiz/tags.hpp"
#include "dwiz/text.hpp"

namespace dwiz {
namespace fs = std::filesystem;

namespace {

struct CsvRecord {
  std::vector<std::string> fields;
  std::size_t line = 0;  // 1-based line where the record starts
};

// RFC 4180 reader: quoted fields may hold commas, doubled quotes and newlines.
class CsvReader {
 public:
  CsvReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  bool next(CsvRecord& record) {
    record.fields.clear();
    record.line = line_;
    std::string field;
    bool in_quotes = false;
    bool any = false;
    char c;
    while (in_.get(c)) {
      any = true;
      if (in_quotes) {
        if (c == '"') {
          if (in_.peek() == '"') {
            in_.get(c);
            field.push_back('"');
          } else {
            in_quotes = false;
          }
        } else {
          if (c == '\n') ++line_;
          field.push_back(c);
        }
        continue;
      }
      if (c == '"') {
        in_quotes = true;
      } else if (c == ',') {
        record.fields.push_back(std::move(field));
        field.clear();
      } else if (c == '\r') {
        // tolerated before '\n'
      } else if (c == '\n') {
        ++line_;
        record.fields.push_back(std::move(field));
        return true;
      } else {
        field.push_back(c);
      }
    }
    if (in_quotes) {
      throw IngestError(source_ + ":" + std::to_string(record.line) + ": unterminated quoted field");
    }
    if (!any) return false;
    record.fields.push_back(std::move(field));
    return true;
  }

 private:
  std::istream& in_;
  std::string source_;
  std::size_t line_ = 1;
};

std::string row_error(const std::string& source, std::size_t line, const std::string& what) {
  return source + ":" + std::to_string(line) + ": " + what;
}

}  // namespace

char speaker_char(Speaker s) { return s == Speaker::A ? 'A' : 'B'; }

std::size_t utterance_count(const std::vector<Conversation>& conversations) {
  std::size_t n = 0;
  for (const auto& c : conversations) n += c.utterances.size();
  return n;
}

SplitCounts count(const std::vector<Conversation>& conversations) {
  return {conversations.size(), utterance_count(conversations)};
}

Conversation parse_swda_csv(std::istream& in, const std::string& source_name) {
  CsvReader reader(in, source_name);
  CsvRecord record;
  if (!reader.next(record)) throw IngestError(source_name + ": empty file");

  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < record.fields.size(); ++i) column[record.fields[i]] = i;
  for (const char* required : {"conversation_no", "caller", "act_tag", "text"}) {
    if (!column.count(required)) {
      throw IngestError(row_error(source_name, 1, std::string("missing column '") + required + "'"));
    }
  }
  const std::size_t header_width = record.fields.size();
  const auto col_conv = column["conversation_no"];
  const auto col_caller = column["caller"];
  const auto col_tag = column["act_tag"];
  const auto col_text = column["text"];

  const TagSet& tags = TagSet::swda();
  Conversation conv;
  std::map<Speaker, int> last_tag;

  while (reader.next(record)) {
    if (record.fields.size() == 1 && record.fields[0].empty()) continue;  // blank line
    if (record.fields.size() != header_width) {
      throw IngestError(row_error(source_name, record.line,
                                  "expected " + std::to_string(header_width) + " fields, got " +
                                      std::to_string(record.fields.size())));
    }
    const std::string& conv_no = record.fields[col_conv];
    if (conv_no.empty() || !std::all_of(conv_no.begin(), conv_no.end(), ::isdigit)) {
      throw IngestError(row_error(source_name, record.line, "bad conversation_no '" + conv_no + "'"));
    }
    const std::string id = "sw" + conv_no;
    if (conv.id.empty()) {
      conv.id = id;
    } else if (conv.id != id) {
      throw IngestError(row_error(source_name, record.line, "file mixes conversations " + conv.id + " and " + id));
    }

    const std::string& caller = record.fields[col_caller];
    Speaker speaker;
    if (caller == "A") {
      speaker = Speaker::A;
    } else if (caller == "B") {
      speaker = Speaker::B;
    } else {
      throw IngestError(row_error(source_name, record.line, "bad caller '" + caller + "'"));
    }

    const std::string raw_tag = record.fields[col_tag];
    const std::string collapsed = collapse_act_tag(raw_tag);
    int tag;
    if (collapsed == kContinuationTag) {
      auto it = last_tag.find(speaker);
      if (it == last_tag.end()) {
        throw IngestError(row_error(source_name, record.line,
                                    "continuation '+' with no earlier utterance by the same speaker"));
      }
      tag = it->second;
    } else if (auto idx = tags.find(collapsed)) {
      tag = *idx;
    } else {
      throw IngestError(row_error(source_name, record.line,
                                  "unknown act tag '" + raw_tag + "' (collapsed to '" + collapsed + "')"));
    }
    last_tag[speaker] = tag;

    LabeledUtterance u;
    u.conversation_id = id;
    u.position = conv.utterances.size();
    u.speaker = speaker;
    u.raw_text = record.fields[col_text];
    u.clean_text = clean_utterance(u.raw_text);
    u.tokens = tokenize(u.clean_text);
    u.tag = tag;
    conv.utterances.push_back(std::move(u));
  }
  if (conv.utterances.empty()) throw IngestError(source_name + ": no utterance rows");
  return conv;
}

std::vector<Conversation> load_swda(const fs::path& directory) {
  std::error_code ec;
  if (!fs::is_directory(directory, ec)) {
    throw IngestError("SwDA directory not found: " + directory.string());
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(directory)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  if (files.empty()) throw IngestError("no conversation CSV files under " + directory.string());
  std::sort(files.begin(), files.end());

  std::vector<Conversation> conversations;
  std::set<std::string> seen;
  for (const auto& file : files) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IngestError("cannot open " + file.string());
    Conversation conv = parse_swda_csv(in, file.string());
    if (!seen.insert(conv.id).second) throw IngestError("duplicate conversation " + conv.id + " in " + file.string());
    conversations.push_back(std::move(conv));
  }
  return conversations;
}

CorpusSplit split_corpus(const std::vector<Conversation>& all, const std::vector<std::string>& train_ids,
                         const std::vector<std::string>& test_ids, std::size_t validation_count) {
  std::map<std::string, const Conversation*> by_id;
  for (const auto& c : all) by_id[c.id] = &c;

  std::set<std::string> train_set(train_ids.begin(), train_ids.end());
  std::vector<std::string> problems;
  if (train_set.size() != train_ids.size()) problems.push_back("duplicate id in train list");
  for (const auto& id : test_ids) {
    if (train_set.count(id)) problems.push_back("id in both train and test lists: " + id);
  }
  std::set<std::string> test_set;
  for (const auto& id : test_ids) {
    if (!test_set.insert(id).second) problems.push_back("duplicate id in test list: " + id);
  }
  for (const auto* list : {&train_ids, &test_ids}) {
    for (const auto& id : *list) {
      if (!by_id.count(id)) problems.push_back("unknown conversation id: " + id);
    }
  }
  if (validation_count > train_ids.size()) {
    problems.push_back("validation_count " + std::to_string(validation_count) + " exceeds train list size " +
                       std::to_string(train_ids.size()));
  }
  if (!problems.empty()) {
    std::string msg = "invalid split lists:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw InvalidArgument(msg);
  }

  CorpusSplit split;
  const std::size_t train_end = train_ids.size() - validation_count;
  for (std::size_t i = 0; i < train_ids.size(); ++i) {
    auto& dst = i < train_end ? split.train : split.validation;
    dst.push_back(*by_id[train_ids[i]]);
  }
  for (const auto& id : test_ids) split.test.push_back(*by_id[id]);
  return split;
}

std::vector<std::string> read_id_list(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot read id list " + path.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    ids.push_back(line.substr(first, last - first + 1));
  }
  return ids;
}

void write_id_list(const fs::path& path, const std::vector<std::string>& ids) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& id : ids) out << id << '\n';
}

std::vector<std::string> conversation_ids(const std::vector<Conversation>& conversations) {
  std::vector<std::string> ids;
  ids.reserve(conversations.size());
  for (const auto& c : conversations) ids.push_back(c.id);
  return ids;
}

int most_common_tag(const std::vector<Conversation>& conversations) {
  std::vector<std::size_t> counts(TagSet::swda().size(), 0);
  std::size_t total = 0;
  for (const auto& c : conversations) {
    for (const auto& u : c.utterances) {
      ++counts.at(static_cast<std::size_t>(u.tag));
      ++total;
    }
  }
  if (total == 0) throw InvalidArgument("most_common_tag: no utterances");
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

double most_common_class_baseline(const CorpusSplit& split) {
  std::vector<Conversation> training = split.train;
  training.insert(training.end(), split.validation.begin(), split.validation.end());
  if (utterance_count(training) == 0) throw InvalidArgument("baseline: empty training split");
  const std::size_t test_total = utterance_count(split.test);
  if (test_total == 0) throw InvalidArgument("baseline: empty test split");

  const int mode = most_common_tag(training);
  std::size_t hits = 0;
  for (const auto& c : split.test) {
    for (const auto& u : c.utterances) hits += (u.tag == mode);
  }
  return static_cast<double>(hits) / static_cast<double>(test_total);
}

void write_jsonl(std::ostream& out, const std::vector<Conversation>& conversations) {
  const TagSet& tags = TagSet::swda();
  for (const auto& c : conversations) {
    for (const auto& u : c.utterances) {
      nlohmann::ordered_json j;
      j["conversation_id"] = u.conversation_id;
      j["position"] = u.position;
      j["speaker"] = std::string(1, speaker_char(u.speaker));
      j["clean_text"] = u.clean_text;
      j["tokens"] = u.tokens;
      j["tag"] = tags.at(u.tag).mnemonic;
      out << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
    }
  }
}

std::vector<Conversation> read_jsonl(std::istream& in) {
  const TagSet& tags = TagSet::swda();
  std::vector<Conversation> conversations;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      LabeledUtterance u;
      u.conversation_id = j.at("conversation_id").get<std::string>();
      u.position = j.at("position").get<std::size_t>();
      const auto speaker = j.at("speaker").get<std::string>();
      if (speaker != "A" && speaker != "B") throw InvalidArgument("bad speaker '" + speaker + "'");
      u.speaker = speaker == "A" ? Speaker::A : Speaker::B;
      u.clean_text = j.at("clean_text").get<std::string>();
      u.raw_text = u.clean_text;
      u.tokens = j.at("tokens").get<std::vector<std::string>>();
      u.tag = tags.index_of(j.at("tag").get<std::string>());

      if (conversations.empty() || conversations.back().id != u.conversation_id) {
        conversations.push_back(Conversation{u.conversation_id, {}});
      }
      auto& conv = conversations.back();
      if (u.position != conv.utterances.size()) {
        throw InvalidArgument("position gap in conversation " + conv.id);
      }
      conv.utterances.push_back(std::move(u));
    } catch (const nlohmann::json::exception& e) {
      throw IngestError("corpus jsonl line " + std::to_string(line_no) + ": " + e.what());
    } catch (const InvalidArgument& e) {
      throw IngestError("corpus jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return conversations;
}

std::vector<std::string> default_test_ids() {
  std::istringstream in{std::string(embedded::kSwdaTestIds)};
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    ids.push_back(line.substr(first, last - first + 1));
  }
  return ids;
}

std::vector<std::string> default_train_ids(const std::vector<Conversation>& all,
                                           const std::vector<std::string>& test_ids,
                                           const std::vector<std::string>& exclude_ids) {
  const std::set<std::string> skip = [&] {
    std::set<std::string> s(test_ids.begin(), test_ids.end());
    s.insert(exclude_ids.begin(), exclude_ids.end());
    return s;
  }();
  std::vector<std::string> ids;
  for (const auto& c : all) {
    if (!skip.count(c.id)) ids.push_back(c.id);
  }
  return ids;
}

void save_prepared_corpus(const fs::path& directory, const CorpusSplit& split) {
  fs::create_directories(directory / "splits");
  const std::pair<const char*, const std::vector<Conversation>*> parts[] = {
      {"train", &split.train}, {"validation", &split.validation}, {"test", &split.test}};
  for (const auto& [name, convs] : parts) {
    const auto path = directory / (std::string(name) + ".jsonl");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    write_jsonl(out, *convs);
    if (!out) throw Error("write failed: " + path.string());
    write_id_list(directory / "splits" / (std::string(name) + ".txt"), conversation_ids(*convs));
  }
}

CorpusSplit load_prepared_corpus(const fs::path& directory) {
  auto read = [&](const char* name) {
    const auto path = directory / (std::string(name) + ".jsonl");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot read " + path.string() + " (run prepare-corpus first)");
    try {
      return read_jsonl(in);
    } catch (const IngestError& e) {
      throw IngestError(path.string() + ": " + e.what());
    }
  };
  CorpusSplit split;
  split.train = read("train");
  split.validation = read("validation");
  split.test = read("test");
  return split;
}

}  // namespace dwiz
