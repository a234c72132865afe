#include "hcscl/datamodel.hpp"

#include "hcscl/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace hcscl {

using nlohmann::json;

std::array<std::string, kNumSpecialTokens> special_token_strings() { return {"<pad>", "<s>", "</s>", "<unk>"}; }

Vocabulary::Vocabulary() {
  for (const auto& s : special_token_strings()) {
    token_to_id_.emplace(s, static_cast<TokenId>(id_to_token_.size()));
    id_to_token_.push_back(s);
  }
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  const auto specials = special_token_strings();
  if (tokens.size() < specials.size()) throw ValidationError("vocab: fewer entries than special tokens");
  for (std::size_t i = 0; i < specials.size(); ++i)
    if (tokens[i] != specials[i]) throw ValidationError("vocab: entry " + std::to_string(i) + " must be " + specials[i]);
  Vocabulary v;
  for (std::size_t i = specials.size(); i < tokens.size(); ++i) {
    if (!v.token_to_id_.emplace(tokens[i], static_cast<TokenId>(i)).second)
      throw ValidationError("vocab: duplicate token '" + tokens[i] + "' at " + std::to_string(i));
    v.id_to_token_.push_back(std::move(tokens[i]));
  }
  return v;
}

Vocabulary Vocabulary::synthetic(int size) {
  if (size < kNumSpecialTokens) throw ValidationError("vocab size below special token count");
  const auto specials = special_token_strings();
  std::vector<std::string> tokens(specials.begin(), specials.end());
  for (int i = kNumSpecialTokens; i < size; ++i) tokens.push_back("w" + std::to_string(i));
  return from_tokens(std::move(tokens));
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id out of range: " + std::to_string(id));
  return id_to_token_[static_cast<std::size_t>(id)];
}

// ---------------------------------------------------------------------------
// Validation

namespace {

[[noreturn]] void reject(std::size_t index, const std::string& field, const std::string& what) {
  throw ValidationError("sample " + std::to_string(index) + ": " + field + " " + what);
}

void check_tokens(const std::vector<TokenId>& ids, int vocab_size, std::size_t index, const std::string& field) {
  for (std::size_t j = 0; j < ids.size(); ++j)
    if (ids[j] < 0 || ids[j] >= vocab_size)
      reject(index, field + "[" + std::to_string(j) + "]", "token id " + std::to_string(ids[j]) + " outside vocab");
}

}  // namespace

void validate_sample(const Sample& s, int vocab_size, int d_obj, int n_attr, std::size_t index) {
  if (s.sentences.empty()) reject(index, "sentences", "is empty");
  for (std::size_t i = 0; i < s.sentences.size(); ++i) {
    const std::string field = "sentences[" + std::to_string(i) + "]";
    if (s.sentences[i].empty()) reject(index, field, "is empty");
    check_tokens(s.sentences[i], vocab_size, index, field);
  }
  if (s.summary.empty()) reject(index, "summary", "is empty");
  check_tokens(s.summary, vocab_size, index, "summary");
  if (s.images.empty()) reject(index, "images", "is empty");
  for (std::size_t k = 0; k < s.images.size(); ++k) {
    const auto& objects = s.images[k].objects;
    const std::string img = "images[" + std::to_string(k) + "]";
    if (objects.empty()) reject(index, img + ".objects", "is empty");
    for (std::size_t o = 0; o < objects.size(); ++o) {
      const auto& obj = objects[o];
      const std::string field = img + ".objects[" + std::to_string(o) + "]";
      if (static_cast<int>(obj.feature.size()) != d_obj)
        reject(index, field + ".feature", "has length " + std::to_string(obj.feature.size()) + ", expected " +
                                              std::to_string(d_obj));
      for (double x : obj.feature)
        if (!std::isfinite(x)) reject(index, field + ".feature", "is not finite");
      const Box& b = obj.bbox;
      if (!(std::isfinite(b.x1) && std::isfinite(b.y1) && std::isfinite(b.x2) && std::isfinite(b.y2)) ||
          !(b.x1 < b.x2 && b.y1 < b.y2))
        reject(index, field + ".bbox", "is not well-ordered");
      if (obj.attr_class < 0 || obj.attr_class >= n_attr)
        reject(index, field + ".attr_class", "outside [0, " + std::to_string(n_attr) + ")");
      if (!(obj.confidence >= 0.0 && obj.confidence <= 1.0)) reject(index, field + ".confidence", "outside [0, 1]");
    }
  }
  if (s.gold_image < 0 || s.gold_image >= static_cast<int>(s.images.size()))
    reject(index, "gold_image", std::to_string(s.gold_image) + " outside [0, " + std::to_string(s.images.size()) + ")");
}

void validate_corpus(const Corpus& c) {
  if (c.d_obj < 1) throw ValidationError("corpus: d_obj must be positive");
  if (c.n_attr < 1) throw ValidationError("corpus: n_attr must be positive");
  if (c.samples.empty()) throw ValidationError("no samples");
  for (std::size_t i = 0; i < c.samples.size(); ++i) validate_sample(c.samples[i], c.vocab.size(), c.d_obj, c.n_attr, i);
}

// ---------------------------------------------------------------------------
// JSONL

namespace {

json sample_to_json(const Sample& s) {
  json images = json::array();
  for (const auto& img : s.images) {
    json objects = json::array();
    for (const auto& o : img.objects) {
      objects.push_back(json{{"feature", o.feature},
                             {"bbox", {o.bbox.x1, o.bbox.y1, o.bbox.x2, o.bbox.y2}},
                             {"attr_class", o.attr_class},
                             {"confidence", o.confidence}});
    }
    images.push_back(json{{"objects", std::move(objects)}});
  }
  return json{{"sentences", s.sentences}, {"images", std::move(images)}, {"summary", s.summary}, {"gold_image", s.gold_image}};
}

Sample sample_from_json(const json& j) {
  Sample s;
  s.sentences = j.at("sentences").get<std::vector<std::vector<TokenId>>>();
  for (const auto& img : j.at("images")) {
    ImageRecord rec;
    for (const auto& o : img.at("objects")) {
      ObjectProposal obj;
      obj.feature = o.at("feature").get<std::vector<double>>();
      const auto bbox = o.at("bbox").get<std::vector<double>>();
      if (bbox.size() != 4) throw std::invalid_argument("bbox must have 4 coordinates");
      obj.bbox = Box{bbox[0], bbox[1], bbox[2], bbox[3]};
      obj.attr_class = o.at("attr_class").get<int>();
      obj.confidence = o.at("confidence").get<double>();
      rec.objects.push_back(std::move(obj));
    }
    s.images.push_back(std::move(rec));
  }
  s.summary = j.at("summary").get<std::vector<TokenId>>();
  s.gold_image = j.at("gold_image").get<int>();
  return s;
}

}  // namespace

std::string corpus_to_jsonl(const Corpus& c) {
  std::string out = json{{"vocab", c.vocab.tokens()}, {"d_obj", c.d_obj}, {"n_attr", c.n_attr}}.dump();
  out += '\n';
  for (const auto& s : c.samples) {
    out += sample_to_json(s).dump();
    out += '\n';
  }
  return out;
}

Corpus corpus_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  Corpus c;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (!have_header) {
        c.vocab = Vocabulary::from_tokens(j.at("vocab").get<std::vector<std::string>>());
        c.d_obj = j.at("d_obj").get<int>();
        c.n_attr = j.at("n_attr").get<int>();
        have_header = true;
      } else {
        c.samples.push_back(sample_from_json(j));
      }
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw ValidationError("no samples");
  validate_corpus(c);
  return c;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return corpus_from_jsonl(buf.str());
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  validate_corpus(corpus);
  const std::string text = corpus_to_jsonl(corpus);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write corpus file: " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::array<std::vector<std::size_t>, 3> split_indices(std::size_t n, std::array<double, 3> fractions,
                                                      std::uint64_t seed) {
  for (double f : fractions)
    if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative");
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  // The 1e-9 slack keeps products like 100 * 0.7 from flooring to 69.
  const auto n_train = std::min(n, static_cast<std::size_t>(std::floor(static_cast<double>(n) * fractions[0] + 1e-9)));
  const auto n_valid =
      std::min(n - n_train, static_cast<std::size_t>(std::floor(static_cast<double>(n) * fractions[1] + 1e-9)));

  std::array<std::vector<std::size_t>, 3> out;
  for (std::size_t k = 0; k < n; ++k) out[k < n_train ? 0 : (k < n_train + n_valid ? 1 : 2)].push_back(order[k]);
  return out;
}

CorpusSplit split_corpus(const Corpus& corpus, std::array<double, 3> fractions, std::uint64_t seed) {
  const auto parts = split_indices(corpus.samples.size(), fractions, seed);
  CorpusSplit out;
  Corpus* dst[3] = {&out.train, &out.valid, &out.test};
  for (int k = 0; k < 3; ++k) {
    dst[k]->vocab = corpus.vocab;
    dst[k]->d_obj = corpus.d_obj;
    dst[k]->n_attr = corpus.n_attr;
    for (std::size_t i : parts[static_cast<std::size_t>(k)]) dst[k]->samples.push_back(corpus.samples[i]);
  }
  return out;
}

std::vector<TokenId> strip_framing(const std::vector<TokenId>& summary) {
  std::vector<TokenId> out;
  for (TokenId t : summary)
    if (t != kBos && t != kEos && t != kPad) out.push_back(t);
  return out;
}

}  // namespace hcscl
