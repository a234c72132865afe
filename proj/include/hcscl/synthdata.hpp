// Synthetic corpora with planted word-object and sentence-scene correlations.
//
// Every concept c owns a latent vector and the token id 4 + c. A document is
// built from distinct concept pairs, one pair per sentence, padded with
// filler tokens. The gold image holds objects whose features are noisy
// projections of the document's concept latents; objects from one sentence's
// pair are concentric boxes (planted IOU above the threshold), and different
// pairs sit in disjoint grid cells. Distractor images use the same geometry
// with concepts absent from the document.
#pragma once

#include "hcscl/datamodel.hpp"

#include <json.hpp>

#include <cstdint>
#include <utility>
#include <vector>

namespace hcscl::synth {

struct SynthConfig {
  int n_samples = 600;
  int vocab_size = 200;
  int n_concepts = 12;
  int sentences_per_doc = 3;
  int words_per_sentence = 4;
  int images_per_doc = 3;
  int objects_per_image = 4;
  int d_obj = 16;
  int n_attr = 8;
  double noise_std = 0.1;
  std::uint64_t seed = 7;

  /// Throws ConfigError when the configuration is invalid or infeasible.
  void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);

inline constexpr double kCanvas = 1000.0;
inline constexpr double kPlantedIouMin = 0.4;
inline constexpr double kPlantedIouMax = 0.8;

inline TokenId concept_token(int concept_id) { return kNumSpecialTokens + concept_id; }

struct ImageTruth {
  std::vector<int> object_concept;
  std::vector<std::pair<int, int>> planted_pairs;  // object indices
  int component_count = 0;
};

struct SampleTruth {
  std::vector<int> concepts;  // in order of first appearance
  std::vector<ImageTruth> images;
};

struct SynthResult {
  Corpus corpus;
  std::vector<SampleTruth> truth;
  std::vector<std::vector<double>> concept_latents;
  std::vector<std::vector<double>> projection;  // d_obj x d_obj, row-major rows
};

SynthResult generate_with_truth(const SynthConfig& config);
Corpus generate(const SynthConfig& config);

/// Cosine similarity of the image's mean object feature to the projected mean
/// latent of `concepts`.
double image_affinity(const SynthResult& result, const ImageRecord& image, const std::vector<int>& concepts);

}  // namespace hcscl::synth
