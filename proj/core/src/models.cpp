#include "dwiz/models.hpp"

#include <bit>
#include <cstring>

#include <zlib.h>

namespace dwiz {

std::uint32_t parameter_checksum(const nn::ConstParameterRefs<float>& params) {
  static_assert(std::endian::native == std::endian::little, "checksums assume a little-endian host");
  uLong crc = crc32(0L, Z_NULL, 0);
  for (const auto& [name, t] : params) {
    crc = crc32(crc, reinterpret_cast<const Bytef*>(t->data()), static_cast<uInt>(t->size() * sizeof(float)));
  }
  return static_cast<std::uint32_t>(crc);
}

NoContextModel::NoContextModel(Vocabulary vocab, std::size_t max_len, NoContextNet<float> net,
                               std::vector<std::string> tags, std::string id)
    : vocab_(std::move(vocab)), max_len_(max_len), net_(std::move(net)), tags_(std::move(tags)), id_(std::move(id)) {
  if (max_len_ == 0) throw InvalidArgument("max_len must be >= 1");
  net_.validate();
  if (net_.embedding.vocab_size() != vocab_.size()) {
    throw ShapeError("embedding rows (" + std::to_string(net_.embedding.vocab_size()) +
                     ") do not match vocabulary size (" + std::to_string(vocab_.size()) + ")");
  }
  if (net_.output.classes() != tags_.size()) {
    throw ShapeError("output classes (" + std::to_string(net_.output.classes()) + ") do not match tag list (" +
                     std::to_string(tags_.size()) + ")");
  }
}

NoContextModel NoContextModel::initialize(Vocabulary vocab, std::size_t max_len, const ModelDims& dims,
                                          std::uint64_t seed, std::string id) {
  auto net = NoContextNet<float>::zeros(vocab.size(), dims);
  Rng rng(seed);
  dwiz::initialize(net, rng);
  std::vector<std::string> tags;
  if (dims.num_classes == TagSet::swda().size()) {
    tags = TagSet::swda().mnemonics();
  } else {
    for (std::size_t i = 0; i < dims.num_classes; ++i) tags.push_back("c" + std::to_string(i));
  }
  return NoContextModel(std::move(vocab), max_len, std::move(net), std::move(tags), std::move(id));
}

ModelDims NoContextModel::dims() const {
  return {net_.embedding.dim(), net_.encoder.hidden(), net_.output.classes()};
}

std::vector<TokenId> NoContextModel::encode(const std::vector<std::string>& tokens) const {
  return encode_utterance(vocab_, tokens, max_len_);
}

void NoContextModel::check_ids(std::span<const TokenId> ids) const {
  if (ids.size() != max_len_) {
    throw ShapeError("encoded utterance has length " + std::to_string(ids.size()) + ", model expects " +
                     std::to_string(max_len_));
  }
}

std::vector<float> NoContextModel::representation(std::span<const TokenId> ids) const {
  check_ids(ids);
  return utterance_representation(net_, ids);
}

std::vector<float> NoContextModel::predict(std::span<const TokenId> ids) const {
  check_ids(ids);
  return predict_no_context(net_, ids);
}

ContextModel::ContextModel(std::shared_ptr<const NoContextModel> encoder, ContextNet<float> net,
                           std::size_t context_size, std::string id)
    : encoder_(std::move(encoder)), net_(std::move(net)), context_size_(context_size), id_(std::move(id)) {
  if (!encoder_) throw InvalidArgument("context model needs an encoder");
  net_.validate();
  if (net_.context.input_dim() != encoder_->dims().hidden_dim) {
    throw ShapeError("context LSTM input (" + std::to_string(net_.context.input_dim()) +
                     ") must equal the encoder hidden size (" + std::to_string(encoder_->dims().hidden_dim) + ")");
  }
  if (net_.output.classes() != encoder_->tags().size()) {
    throw ShapeError("context output classes do not match the encoder's tag list");
  }
}

ContextModel ContextModel::initialize(std::shared_ptr<const NoContextModel> encoder, std::size_t context_size,
                                      std::uint64_t seed, std::string id) {
  if (!encoder) throw InvalidArgument("context model needs an encoder");
  const ModelDims dims = encoder->dims();
  auto net = ContextNet<float>::zeros(dims.hidden_dim, dims);
  Rng rng(seed);
  dwiz::initialize(net, rng);
  return ContextModel(std::move(encoder), std::move(net), context_size, std::move(id));
}

std::vector<float> ContextModel::predict(const std::vector<std::vector<TokenId>>& window) const {
  if (window.size() != context_size_ + 1) {
    throw InvalidArgument("context window must hold " + std::to_string(context_size_ + 1) + " utterances, got " +
                          std::to_string(window.size()));
  }
  for (const auto& ids : window) {
    if (ids.size() != encoder_->max_len()) throw ShapeError("context window utterance has wrong encoded length");
  }
  return predict_context(net_, encode_window(encoder_->net(), window));
}

std::vector<float> ContextModel::predict_from_representations(const Tensor<float>& reps) const {
  return predict_context(net_, reps);
}

}  // namespace dwiz
