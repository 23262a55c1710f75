#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bmeta {

// A reported log-scale treatment effect and its standard error.
struct EffectEstimate {
  double y = 0.0;
  double se = 1.0;

  EffectEstimate() = default;
  EffectEstimate(double y, double se);  // throws ValidationError

  double variance() const { return se * se; }
  bool operator==(const EffectEstimate&) const = default;
};

// Beta(alpha, beta) prior on the biomarker-negative proportion of a study.
struct ProportionPrior {
  double alpha = 1.0;
  double beta = 1.0;

  ProportionPrior() = default;
  ProportionPrior(double alpha, double beta);  // throws ValidationError

  double mean() const { return alpha / (alpha + beta); }
  double variance() const {
    const double s = alpha + beta;
    return alpha * beta / (s * s * (s + 1.0));
  }
  bool operator==(const ProportionPrior&) const = default;
};

enum class Block { kPositiveOnly, kBoth, kNegativeOnly, kMixed };

struct StudyRecord {
  std::string study_id;
  std::optional<EffectEstimate> positive;
  std::optional<EffectEstimate> negative;
  std::optional<EffectEstimate> mixed;
  std::optional<ProportionPrior> proportion_prior;

  // Throws ValidationError naming the study when the reporting pattern is
  // inconsistent.
  void validate() const;
  Block block() const;
  bool operator==(const StudyRecord&) const = default;
};

struct BlockCounts {
  std::size_t positive_only = 0;
  std::size_t both = 0;
  std::size_t negative_only = 0;
  std::size_t mixed = 0;

  std::size_t total() const { return positive_only + both + negative_only + mixed; }
  bool operator==(const BlockCounts&) const = default;
};

// Validated, immutable collection of studies. Block counts are always derived
// from the records.
class MetaDataset {
 public:
  MetaDataset() = default;
  explicit MetaDataset(std::vector<StudyRecord> studies);

  const std::vector<StudyRecord>& studies() const { return studies_; }
  std::size_t size() const { return studies_.size(); }
  const StudyRecord& operator[](std::size_t i) const { return studies_[i]; }
  const BlockCounts& block_counts() const { return counts_; }

  bool operator==(const MetaDataset& other) const { return studies_ == other.studies_; }

 private:
  std::vector<StudyRecord> studies_;
  BlockCounts counts_;
};

inline constexpr std::string_view kDatasetHeader =
    "study,y_pos,se_pos,y_neg,se_neg,y_mix,se_mix,prop_alpha,prop_beta";

// Lines starting with '#' and blank lines are skipped. Empty cells and NA
// mean absent.
MetaDataset parse_dataset(std::string_view csv_text);
MetaDataset load_dataset(const std::string& path);

// Canonical CSV: header, NA for absent cells, shortest round-trip numbers.
std::string serialize_dataset(const MetaDataset& dataset);

BlockCounts classify_blocks(const MetaDataset& dataset);

}  // namespace bmeta
