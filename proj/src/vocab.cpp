#include "envedit/vocab.hpp"

#include "envedit/common.hpp"

namespace envedit {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 3 || tokens_[0] != kUnk || tokens_[1] != kBos || tokens_[2] != kStop) {
    throw Error("invalid_vocabulary", "vocabulary must start with <unk>, <bos>, stop");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw Error("invalid_vocabulary", "duplicate token '" + tokens_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::for_classes(const std::vector<std::string>& class_names) {
  std::vector<std::string> tokens = {kUnk, kBos, kStop, "left", "right", "straight", "up", "down"};
  for (const auto& c : class_names) tokens.push_back(c);
  tokens.emplace_back("mask");
  return Vocabulary(std::move(tokens));
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? unk_id() : it->second;
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = 0;
  for (const auto& t : tokens_) h = mix_seed(h ^ hash_tag(t));
  return h;
}

}  // namespace envedit
