#include "bmeta/data_model.hpp"

#include <charconv>
#include <cmath>
#include <set>
#include <system_error>

#include "bmeta/csv.hpp"
#include "bmeta/errors.hpp"

namespace bmeta {

EffectEstimate::EffectEstimate(double y_in, double se_in) : y(y_in), se(se_in) {
  if (!std::isfinite(y)) throw ValidationError("effect estimate must be finite");
  if (!std::isfinite(se) || !(se > 0.0))
    throw ValidationError("standard error must be positive and finite");
}

ProportionPrior::ProportionPrior(double a, double b) : alpha(a), beta(b) {
  if (!std::isfinite(a) || !std::isfinite(b) || !(a > 0.0) || !(b > 0.0))
    throw ValidationError("beta prior shapes must be positive and finite");
  const double m = mean();
  if (!(m > 0.0 && m < 1.0))
    throw ValidationError("beta prior mean must lie strictly inside (0, 1)");
}

void StudyRecord::validate() const {
  if (!positive && !negative && !mixed)
    throw ValidationError("study '" + study_id + "': no estimates");
  if (mixed && (positive || negative))
    throw ValidationError("study '" + study_id +
                          "': mixed estimate reported together with subgroup "
                          "estimates; keep either the mixed or the subgroup results");
  if (mixed && !proportion_prior)
    throw ValidationError("study '" + study_id +
                          "': mixed estimate requires a proportion prior");
}

Block StudyRecord::block() const {
  if (mixed) return Block::kMixed;
  if (positive && negative) return Block::kBoth;
  if (positive) return Block::kPositiveOnly;
  return Block::kNegativeOnly;
}

BlockCounts classify_blocks(const MetaDataset& dataset) {
  BlockCounts counts;
  for (const auto& study : dataset.studies()) {
    switch (study.block()) {
      case Block::kPositiveOnly: ++counts.positive_only; break;
      case Block::kBoth: ++counts.both; break;
      case Block::kNegativeOnly: ++counts.negative_only; break;
      case Block::kMixed: ++counts.mixed; break;
    }
  }
  return counts;
}

MetaDataset::MetaDataset(std::vector<StudyRecord> studies) : studies_(std::move(studies)) {
  std::set<std::string> seen;
  for (const auto& study : studies_) {
    study.validate();
    if (!seen.insert(study.study_id).second)
      throw ValidationError("duplicate study id '" + study.study_id + "'");
  }
  counts_ = classify_blocks(*this);
}

namespace {

std::optional<double> parse_cell(std::string_view raw, int row, int column) {
  const std::string_view cell = csv::trim(raw);
  if (cell.empty() || cell == "NA") return std::nullopt;
  double value = 0.0;
  const char* first = cell.data();
  // from_chars rejects a leading '+'.
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, cell.data() + cell.size(), value);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(value))
    throw ParseError("malformed numeric cell '" + std::string(cell) + "'", row, column);
  return value;
}

std::optional<EffectEstimate> make_estimate(const std::optional<double>& y,
                                            const std::optional<double>& se,
                                            const std::string& study, const char* what) {
  if (!y && !se) return std::nullopt;
  if (!y || !se)
    throw ValidationError("study '" + study + "': " + what +
                          " estimate needs both y and se");
  try {
    return EffectEstimate(*y, *se);
  } catch (const ValidationError& e) {
    throw ValidationError("study '" + study + "': " + what + ": " + e.what());
  }
}

}  // namespace

MetaDataset parse_dataset(std::string_view text) {
  std::vector<StudyRecord> studies;
  bool header_seen = false;
  int row = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = csv::trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++row;
    if (line.empty() || line.front() == '#') continue;

    auto cells = csv::split(line);
    if (!header_seen) {
      std::string normalized;
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) normalized += ',';
        normalized += csv::trim(cells[i]);
      }
      if (normalized != kDatasetHeader)
        throw ParseError("expected header '" + std::string(kDatasetHeader) + "'", row, 1);
      header_seen = true;
      continue;
    }
    if (cells.size() != 9)
      throw ParseError("expected 9 cells, found " + std::to_string(cells.size()), row, 1);

    StudyRecord record;
    record.study_id = std::string(csv::trim(cells[0]));
    if (record.study_id.empty()) throw ParseError("empty study label", row, 1);
    std::optional<double> v[8];
    for (int c = 0; c < 8; ++c) v[c] = parse_cell(cells[c + 1], row, c + 2);
    record.positive = make_estimate(v[0], v[1], record.study_id, "positive");
    record.negative = make_estimate(v[2], v[3], record.study_id, "negative");
    record.mixed = make_estimate(v[4], v[5], record.study_id, "mixed");
    if (v[6] || v[7]) {
      if (!v[6] || !v[7])
        throw ValidationError("study '" + record.study_id +
                              "': proportion prior needs both alpha and beta");
      try {
        record.proportion_prior = ProportionPrior(*v[6], *v[7]);
      } catch (const ValidationError& e) {
        throw ValidationError("study '" + record.study_id + "': " + e.what());
      }
    }
    record.validate();
    studies.push_back(std::move(record));
  }
  if (!header_seen) throw ParseError("missing header", 1, 1);
  return MetaDataset(std::move(studies));
}

MetaDataset load_dataset(const std::string& path) {
  return parse_dataset(csv::read_file(path));
}

std::string serialize_dataset(const MetaDataset& dataset) {
  std::string out(kDatasetHeader);
  out += '\n';
  const auto put = [&](const std::optional<EffectEstimate>& e) {
    out += ',';
    out += e ? csv::format(e->y) : "NA";
    out += ',';
    out += e ? csv::format(e->se) : "NA";
  };
  for (const auto& s : dataset.studies()) {
    out += s.study_id;
    put(s.positive);
    put(s.negative);
    put(s.mixed);
    out += ',';
    out += s.proportion_prior ? csv::format(s.proportion_prior->alpha) : "NA";
    out += ',';
    out += s.proportion_prior ? csv::format(s.proportion_prior->beta) : "NA";
    out += '\n';
  }
  return out;
}

}  // namespace bmeta
