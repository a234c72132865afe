#include "hcscl/synthdata.hpp"

#include "hcscl/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace hcscl::synth {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void SynthConfig::validate() const {
  auto positive = [](long v, const char* name) {
    if (v < 1) throw ConfigError(std::string(name) + " must be at least 1");
  };
  positive(n_samples, "n_samples");
  positive(vocab_size, "vocab_size");
  positive(n_concepts, "n_concepts");
  positive(sentences_per_doc, "sentences_per_doc");
  positive(words_per_sentence, "words_per_sentence");
  positive(images_per_doc, "images_per_doc");
  positive(objects_per_image, "objects_per_image");
  positive(d_obj, "d_obj");
  positive(n_attr, "n_attr");
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");
  if (n_concepts > vocab_size - kNumSpecialTokens) throw ConfigError("n_concepts exceeds vocab_size - 4");
  if (objects_per_image < 2) throw ConfigError("objects_per_image must be at least 2 to plant overlapping pairs");
  if (words_per_sentence < 2) throw ConfigError("words_per_sentence must be at least 2 to hold a concept pair");
  if (words_per_sentence > 2 && vocab_size - kNumSpecialTokens - n_concepts < 1)
    throw ConfigError("no filler tokens left: raise vocab_size or lower n_concepts");
  if (n_concepts < 2 * sentences_per_doc + 2)
    throw ConfigError("n_concepts must cover two concepts per sentence plus at least two absent concepts");
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{{"n_samples", c.n_samples},
                     {"vocab_size", c.vocab_size},
                     {"n_concepts", c.n_concepts},
                     {"sentences_per_doc", c.sentences_per_doc},
                     {"words_per_sentence", c.words_per_sentence},
                     {"images_per_doc", c.images_per_doc},
                     {"objects_per_image", c.objects_per_image},
                     {"d_obj", c.d_obj},
                     {"n_attr", c.n_attr},
                     {"noise_std", c.noise_std},
                     {"seed", c.seed}};
}

namespace {

struct Generator {
  const SynthConfig& cfg;
  std::mt19937_64 rng;
  MatrixXd latents;     // d_obj x n_concepts
  MatrixXd projection;  // d_obj x d_obj

  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

  std::vector<double> object_feature(int concept_id) {
    VectorXd f = projection * latents.col(concept_id);
    std::normal_distribution<double> noise(0.0, cfg.noise_std);
    std::vector<double> out(static_cast<std::size_t>(f.size()));
    for (Eigen::Index r = 0; r < f.size(); ++r)
      out[static_cast<std::size_t>(r)] = f(r) + (cfg.noise_std > 0 ? noise(rng) : 0.0);
    return out;
  }

  ObjectProposal make_object(int concept_id, const Box& box) {
    ObjectProposal o;
    o.feature = object_feature(concept_id);
    o.bbox = box;
    o.attr_class = concept_id % cfg.n_attr;
    o.confidence = uniform(0.5, 1.0);
    return o;
  }

  // Lays out `groups` (each one or two concepts) in disjoint grid cells.
  // Pairs become concentric boxes with IOU drawn from the planted range.
  std::pair<ImageRecord, ImageTruth> make_image(const std::vector<std::vector<int>>& groups) {
    const int cells = static_cast<int>(groups.size());
    const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cells))));
    const double cell = kCanvas / side;
    std::vector<int> slots(static_cast<std::size_t>(side * side));
    std::iota(slots.begin(), slots.end(), 0);
    std::shuffle(slots.begin(), slots.end(), rng);

    ImageRecord image;
    ImageTruth truth;
    for (int gi = 0; gi < cells; ++gi) {
      const int slot = slots[static_cast<std::size_t>(gi)];
      const double x0 = (slot % side) * cell;
      const double y0 = (slot / side) * cell;
      const double size = cell * uniform(0.4, 0.8);
      const double cx = x0 + cell / 2 + uniform(-0.5, 0.5) * (cell - size) * 0.9;
      const double cy = y0 + cell / 2 + uniform(-0.5, 0.5) * (cell - size) * 0.9;
      const Box outer{cx - size / 2, cy - size / 2, cx + size / 2, cy + size / 2};
      const auto& group = groups[static_cast<std::size_t>(gi)];
      const int first = static_cast<int>(image.objects.size());
      image.objects.push_back(make_object(group[0], outer));
      truth.object_concept.push_back(group[0]);
      if (group.size() == 2) {
        const double ratio = uniform(kPlantedIouMin, kPlantedIouMax);
        const double inner = size * std::sqrt(ratio);
        const Box box{cx - inner / 2, cy - inner / 2, cx + inner / 2, cy + inner / 2};
        image.objects.push_back(make_object(group[1], box));
        truth.object_concept.push_back(group[1]);
        truth.planted_pairs.emplace_back(first, first + 1);
      }
    }
    truth.component_count = cells;
    return {std::move(image), std::move(truth)};
  }

  // Groups for one image: pairs drawn from `pairs` (cycled after a shuffle),
  // plus one singleton from `singles` when the object count is odd.
  std::vector<std::vector<int>> image_groups(std::vector<std::pair<int, int>> pairs, const std::vector<int>& singles) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    const int n_pairs = cfg.objects_per_image / 2;
    std::vector<std::vector<int>> groups;
    for (int k = 0; k < n_pairs; ++k) {
      auto [a, b] = pairs[static_cast<std::size_t>(k) % pairs.size()];
      if (uniform(0.0, 1.0) < 0.5) std::swap(a, b);
      groups.push_back({a, b});
    }
    if (cfg.objects_per_image % 2 == 1)
      groups.push_back({singles[static_cast<std::size_t>(uniform_int(0, static_cast<int>(singles.size()) - 1))]});
    return groups;
  }
};

VectorXd mean_feature(const ImageRecord& image) {
  VectorXd m = VectorXd::Zero(static_cast<Eigen::Index>(image.objects.front().feature.size()));
  for (const auto& o : image.objects) m += Eigen::Map<const VectorXd>(o.feature.data(), m.size());
  return m / static_cast<double>(image.objects.size());
}

double cosine(const VectorXd& a, const VectorXd& b) {
  const double denom = a.norm() * b.norm();
  return denom > 0 ? a.dot(b) / denom : 0.0;
}

}  // namespace

double image_affinity(const SynthResult& result, const ImageRecord& image, const std::vector<int>& concepts) {
  const auto d = static_cast<Eigen::Index>(result.projection.size());
  MatrixXd proj(d, d);
  for (Eigen::Index r = 0; r < d; ++r)
    for (Eigen::Index c = 0; c < d; ++c) proj(r, c) = result.projection[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  VectorXd latent = VectorXd::Zero(d);
  for (int c : concepts)
    latent += Eigen::Map<const VectorXd>(result.concept_latents[static_cast<std::size_t>(c)].data(), d);
  latent /= static_cast<double>(concepts.size());
  return cosine(mean_feature(image), proj * latent);
}

SynthResult generate_with_truth(const SynthConfig& cfg) {
  cfg.validate();
  Generator gen{cfg, std::mt19937_64(cfg.seed), MatrixXd(), MatrixXd()};
  std::normal_distribution<double> unit(0.0, 1.0);
  gen.latents.resize(cfg.d_obj, cfg.n_concepts);
  for (Eigen::Index c = 0; c < gen.latents.cols(); ++c)
    for (Eigen::Index r = 0; r < gen.latents.rows(); ++r) gen.latents(r, c) = unit(gen.rng);
  gen.projection.resize(cfg.d_obj, cfg.d_obj);
  for (Eigen::Index c = 0; c < gen.projection.cols(); ++c)
    for (Eigen::Index r = 0; r < gen.projection.rows(); ++r)
      gen.projection(r, c) = unit(gen.rng) / std::sqrt(static_cast<double>(cfg.d_obj));

  SynthResult out;
  out.corpus.vocab = Vocabulary::synthetic(cfg.vocab_size);
  out.corpus.d_obj = cfg.d_obj;
  out.corpus.n_attr = cfg.n_attr;
  for (Eigen::Index c = 0; c < gen.latents.cols(); ++c)
    out.concept_latents.emplace_back(gen.latents.col(c).data(), gen.latents.col(c).data() + gen.latents.rows());
  for (Eigen::Index r = 0; r < gen.projection.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(cfg.d_obj));
    for (Eigen::Index c = 0; c < gen.projection.cols(); ++c) row[static_cast<std::size_t>(c)] = gen.projection(r, c);
    out.projection.push_back(std::move(row));
  }

  const int filler_lo = kNumSpecialTokens + cfg.n_concepts;
  const int filler_hi = cfg.vocab_size - 1;
  std::vector<int> all_concepts(static_cast<std::size_t>(cfg.n_concepts));
  std::iota(all_concepts.begin(), all_concepts.end(), 0);

  for (int s = 0; s < cfg.n_samples; ++s) {
    std::shuffle(all_concepts.begin(), all_concepts.end(), gen.rng);
    const auto doc_count = static_cast<std::size_t>(2 * cfg.sentences_per_doc);
    const std::vector<int> doc(all_concepts.begin(), all_concepts.begin() + static_cast<std::ptrdiff_t>(doc_count));
    const std::vector<int> absent(all_concepts.begin() + static_cast<std::ptrdiff_t>(doc_count), all_concepts.end());

    Sample sample;
    SampleTruth truth;
    std::vector<std::pair<int, int>> doc_pairs;
    for (int i = 0; i < cfg.sentences_per_doc; ++i) {
      const int a = doc[static_cast<std::size_t>(2 * i)];
      const int b = doc[static_cast<std::size_t>(2 * i + 1)];
      doc_pairs.emplace_back(a, b);
      std::vector<TokenId> sentence(static_cast<std::size_t>(cfg.words_per_sentence));
      for (auto& t : sentence) t = gen.uniform_int(filler_lo, std::max(filler_lo, filler_hi));
      std::vector<int> positions(sentence.size());
      std::iota(positions.begin(), positions.end(), 0);
      std::shuffle(positions.begin(), positions.end(), gen.rng);
      sentence[static_cast<std::size_t>(positions[0])] = concept_token(a);
      sentence[static_cast<std::size_t>(positions[1])] = concept_token(b);
      for (TokenId t : sentence)
        if (t < filler_lo) truth.concepts.push_back(t - kNumSpecialTokens);
      sample.sentences.push_back(std::move(sentence));
    }
    sample.summary.push_back(kBos);
    for (int c : truth.concepts) sample.summary.push_back(concept_token(c));
    sample.summary.push_back(kEos);

    sample.gold_image = gen.uniform_int(0, cfg.images_per_doc - 1);
    std::vector<std::pair<int, int>> absent_pairs;
    for (std::size_t k = 0; k + 1 < absent.size(); k += 2) absent_pairs.emplace_back(absent[k], absent[k + 1]);

    auto [gold, gold_truth] = gen.make_image(gen.image_groups(doc_pairs, doc));
    const double gold_affinity = image_affinity(out, gold, doc);
    for (int k = 0; k < cfg.images_per_doc; ++k) {
      if (k == sample.gold_image) {
        sample.images.push_back(gold);
        truth.images.push_back(gold_truth);
        continue;
      }
      // Resample distractors until the gold image is strictly the most
      // affine one; with unit-Gaussian latents this almost never loops.
      bool placed = false;
      for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        auto [img, img_truth] = gen.make_image(gen.image_groups(absent_pairs, absent));
        if (image_affinity(out, img, doc) < gold_affinity) {
          sample.images.push_back(std::move(img));
          truth.images.push_back(std::move(img_truth));
          placed = true;
        }
      }
      if (!placed) throw ConfigError("could not place a distractor image less affine than the gold image");
    }
    out.corpus.samples.push_back(std::move(sample));
    out.truth.push_back(std::move(truth));
  }
  return out;
}

Corpus generate(const SynthConfig& config) { return generate_with_truth(config).corpus; }

}  // namespace hcscl::synth
