#include "hcscl/metrics.hpp"

#include "hcscl/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

namespace hcscl::metrics {

namespace {

using NgramCounts = std::map<std::vector<TokenId>, std::size_t>;

NgramCounts ngrams(std::span<const TokenId> seq, int n) {
  NgramCounts out;
  const auto len = static_cast<std::size_t>(n);
  if (seq.size() < len) return out;
  for (std::size_t i = 0; i + len <= seq.size(); ++i) ++out[std::vector<TokenId>(seq.begin() + i, seq.begin() + i + len)];
  return out;
}

std::size_t clipped_overlap(const NgramCounts& ref, const NgramCounts& hyp) {
  std::size_t overlap = 0;
  for (const auto& [gram, count] : hyp)
    if (auto it = ref.find(gram); it != ref.end()) overlap += std::min(count, it->second);
  return overlap;
}

std::size_t total(const NgramCounts& c) {
  std::size_t n = 0;
  for (const auto& [gram, count] : c) n += count;
  return n;
}

Prf make_prf(double matched, double hyp_total, double ref_total) {
  Prf out;
  out.precision = hyp_total > 0 ? matched / hyp_total : 0.0;
  out.recall = ref_total > 0 ? matched / ref_total : 0.0;
  const double denom = out.precision + out.recall;
  out.f1 = denom > 0 ? 2.0 * out.precision * out.recall / denom : 0.0;
  return out;
}

std::vector<double> combine_bleu(const std::vector<std::size_t>& matched, const std::vector<std::size_t>& possible,
                                 std::size_t ref_len, std::size_t hyp_len, int max_n) {
  std::vector<double> out(static_cast<std::size_t>(max_n), 0.0);
  if (hyp_len == 0) return out;
  const double bp = hyp_len > ref_len ? 1.0
                                      : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto k = static_cast<std::size_t>(n - 1);
    if (possible[k] == 0 || matched[k] == 0) break;  // this and every higher order is zero
    log_sum += std::log(static_cast<double>(matched[k]) / static_cast<double>(possible[k]));
    out[k] = bp * std::exp(log_sum / n);
  }
  return out;
}

}  // namespace

Prf rouge_n(std::span<const TokenId> ref, std::span<const TokenId> hyp, int n) {
  if (n < 1) throw std::invalid_argument("rouge_n: n must be at least 1");
  if (hyp.empty()) return {};
  const auto r = ngrams(ref, n);
  const auto h = ngrams(hyp, n);
  return make_prf(static_cast<double>(clipped_overlap(r, h)), static_cast<double>(total(h)),
                  static_cast<double>(total(r)));
}

std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

Prf rouge_l(std::span<const TokenId> ref, std::span<const TokenId> hyp) {
  if (hyp.empty() || ref.empty()) return {};
  return make_prf(static_cast<double>(lcs_length(ref, hyp)), static_cast<double>(hyp.size()),
                  static_cast<double>(ref.size()));
}

std::vector<double> bleu(std::span<const TokenId> ref, std::span<const TokenId> hyp, int max_n) {
  if (max_n < 1 || max_n > 4) throw std::invalid_argument("bleu: max_n must lie in [1, 4]");
  std::vector<std::size_t> matched(static_cast<std::size_t>(max_n));
  std::vector<std::size_t> possible(static_cast<std::size_t>(max_n));
  for (int n = 1; n <= max_n; ++n) {
    const auto h = ngrams(hyp, n);
    matched[static_cast<std::size_t>(n - 1)] = clipped_overlap(ngrams(ref, n), h);
    possible[static_cast<std::size_t>(n - 1)] = total(h);
  }
  return combine_bleu(matched, possible, ref.size(), hyp.size(), max_n);
}

std::vector<double> corpus_bleu(const std::vector<std::vector<TokenId>>& refs,
                                const std::vector<std::vector<TokenId>>& hyps, int max_n) {
  if (refs.size() != hyps.size()) throw std::invalid_argument("corpus_bleu: reference/hypothesis count mismatch");
  if (max_n < 1 || max_n > 4) throw std::invalid_argument("bleu: max_n must lie in [1, 4]");
  std::vector<std::size_t> matched(static_cast<std::size_t>(max_n), 0);
  std::vector<std::size_t> possible(static_cast<std::size_t>(max_n), 0);
  std::size_t ref_len = 0;
  std::size_t hyp_len = 0;
  for (std::size_t s = 0; s < refs.size(); ++s) {
    ref_len += refs[s].size();
    hyp_len += hyps[s].size();
    for (int n = 1; n <= max_n; ++n) {
      const auto h = ngrams(hyps[s], n);
      matched[static_cast<std::size_t>(n - 1)] += clipped_overlap(ngrams(refs[s], n), h);
      possible[static_cast<std::size_t>(n - 1)] += total(h);
    }
  }
  return combine_bleu(matched, possible, ref_len, hyp_len, max_n);
}

double image_precision(std::span<const int> annotated, std::span<const int> selected) {
  if (annotated.size() != selected.size()) throw std::invalid_argument("image_precision: length mismatch");
  if (annotated.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < annotated.size(); ++i) hits += annotated[i] == selected[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(annotated.size());
}

Report evaluate(const std::vector<std::vector<TokenId>>& refs, const std::vector<std::vector<TokenId>>& hyps,
                std::span<const int> gold_images, std::span<const int> selected) {
  if (refs.size() != hyps.size()) throw std::invalid_argument("evaluate: reference/hypothesis count mismatch");
  Report r;
  if (!refs.empty()) {
    for (std::size_t s = 0; s < refs.size(); ++s) {
      r.rouge1 += rouge_n(refs[s], hyps[s], 1).f1;
      r.rouge2 += rouge_n(refs[s], hyps[s], 2).f1;
      r.rougel += rouge_l(refs[s], hyps[s]).f1;
    }
    const double n = static_cast<double>(refs.size());
    r.rouge1 /= n;
    r.rouge2 /= n;
    r.rougel /= n;
  }
  const auto b = corpus_bleu(refs, hyps, 4);
  r.bleu1 = b[0];
  r.bleu2 = b[1];
  r.bleu3 = b[2];
  r.bleu4 = b[3];
  r.ip = image_precision(gold_images, selected);
  return r;
}

void write_predictions(const std::vector<PredictionRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write predictions: " + path.string());
  for (const auto& r : records)
    out << nlohmann::json{{"sample_id", r.sample_id}, {"summary", r.summary}, {"image", r.image}}.dump() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open predictions: " + path.string());
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back(PredictionRecord{j.at("sample_id").get<int>(), j.at("summary").get<std::vector<TokenId>>(),
                                     j.at("image").get<int>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace hcscl::metrics
