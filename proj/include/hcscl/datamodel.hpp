#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

namespace hcscl {

using TokenId = int;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr int kNumSpecialTokens = 4;

/// Token <-> id mapping. Ids 0..3 are PAD, BOS, EOS, UNK.
class Vocabulary {
 public:
  Vocabulary();
  /// `tokens[i]` becomes id i. The first four entries must be the special
  /// token strings; the rest must be distinct.
  static Vocabulary from_tokens(std::vector<std::string> tokens);
  /// Special tokens plus "w4" ... "w{size-1}".
  static Vocabulary synthetic(int size);

  int size() const { return static_cast<int>(id_to_token_.size()); }
  TokenId id(const std::string& token) const;
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.id_to_token_ == b.id_to_token_; }

 private:
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
};

std::array<std::string, kNumSpecialTokens> special_token_strings();

/// Pixel-coordinate bounding box (x1, y1, x2, y2).
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double area() const { return (x2 - x1) * (y2 - y1); }
  friend bool operator==(const Box&, const Box&) = default;
};

struct ObjectProposal {
  std::vector<double> feature;
  Box bbox;
  int attr_class = 0;
  double confidence = 1.0;
  friend bool operator==(const ObjectProposal&, const ObjectProposal&) = default;
};

struct ImageRecord {
  std::vector<ObjectProposal> objects;
  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct Sample {
  std::vector<std::vector<TokenId>> sentences;
  std::vector<ImageRecord> images;
  std::vector<TokenId> summary;
  int gold_image = 0;
  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Corpus {
  std::vector<Sample> samples;
  Vocabulary vocab;
  int d_obj = 0;
  int n_attr = 0;
  friend bool operator==(const Corpus&, const Corpus&) = default;
};

/// Throws ValidationError naming `index` and the offending field.
void validate_sample(const Sample& sample, int vocab_size, int d_obj, int n_attr, std::size_t index);
/// Validates every sample plus the corpus-level dims. Rejects empty corpora.
void validate_corpus(const Corpus& corpus);

Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
/// Serialized form of save_corpus, for callers that need the bytes.
std::string corpus_to_jsonl(const Corpus& corpus);
Corpus corpus_from_jsonl(const std::string& text);

struct CorpusSplit {
  Corpus train;
  Corpus valid;
  Corpus test;
};

/// Index form of split_corpus: positions into the original sample list.
std::array<std::vector<std::size_t>, 3> split_indices(std::size_t n, std::array<double, 3> fractions,
                                                      std::uint64_t seed);

/// Shuffles with `seed`, then takes floor(n*f_train) and floor(n*f_valid)
/// samples for train and valid; the remainder goes to test.
CorpusSplit split_corpus(const Corpus& corpus, std::array<double, 3> fractions, std::uint64_t seed);

/// Summary tokens with BOS/EOS framing removed, for metrics.
std::vector<TokenId> strip_framing(const std::vector<TokenId>& summary);

}  // namespace hcscl
