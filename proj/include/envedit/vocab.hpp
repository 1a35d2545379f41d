#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace envedit {

// Token inventory shared by the speaker and the agent:
// specials, direction words, then class names and the mask class.
class Vocabulary {
 public:
  static constexpr const char* kUnk = "<unk>";
  static constexpr const char* kBos = "<bos>";
  static constexpr const char* kStop = "stop";

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);
  static Vocabulary for_classes(const std::vector<std::string>& class_names);

  int id(const std::string& token) const;  // unknown -> unk id
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(tokens_.size()); }
  int unk_id() const { return 0; }
  int bos_id() const { return 1; }
  int stop_id() const { return 2; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::uint64_t hash() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace envedit
