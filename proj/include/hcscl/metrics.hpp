// ROUGE-1/2/L, BLEU-1..4 and image precision over token ids.
#pragma once

#include "hcscl/datamodel.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace hcscl::metrics {

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Clipped n-gram overlap. An empty hypothesis scores zero.
Prf rouge_n(std::span<const TokenId> ref, std::span<const TokenId> hyp, int n);
/// Longest-common-subsequence precision/recall/F1.
Prf rouge_l(std::span<const TokenId> ref, std::span<const TokenId> hyp);
std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b);

/// Cumulative BLEU-1..max_n for one reference: geometric mean of modified
/// n-gram precisions times the brevity penalty. No smoothing.
std::vector<double> bleu(std::span<const TokenId> ref, std::span<const TokenId> hyp, int max_n = 4);
/// Corpus BLEU: clipped counts and lengths summed before combining.
std::vector<double> corpus_bleu(const std::vector<std::vector<TokenId>>& refs,
                                const std::vector<std::vector<TokenId>>& hyps, int max_n = 4);

/// Fraction of positions where annotated == selected.
double image_precision(std::span<const int> annotated, std::span<const int> selected);

/// One metrics row: R-1, R-2, R-L (mean per-sample F1), B-1..B-4 (corpus BLEU)
/// and IP.
struct Report {
  double rouge1 = 0, rouge2 = 0, rougel = 0;
  double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0;
  double ip = 0;
};

Report evaluate(const std::vector<std::vector<TokenId>>& refs, const std::vector<std::vector<TokenId>>& hyps,
                std::span<const int> gold_images, std::span<const int> selected);

struct PredictionRecord {
  int sample_id = 0;
  std::vector<TokenId> summary;
  int image = 0;
  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

void write_predictions(const std::vector<PredictionRecord>& records, const std::filesystem::path& path);
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);

}  // namespace hcscl::metrics
