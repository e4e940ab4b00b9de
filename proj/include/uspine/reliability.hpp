#pragma once

#include <string>
#include <vector>

namespace uspine {
namespace metrics {

/// n subjects x k raters (or sessions) of angle measurements; no missing
/// cells, n >= 2 and k >= 2.
struct RatingsTable {
    std::vector<std::string> subject_ids;
    std::vector<std::vector<double>> values;  // [subject][rater]
    std::string region_tag;                   // thoracic | lumbar | free-form

    int n() const { return static_cast<int>(values.size()); }
    int k() const { return values.empty() ? 0 : static_cast<int>(values[0].size()); }
    void validate() const;
};

enum class IccModel { kTwoWayMixed, kTwoWayRandom };
std::string icc_model_name(IccModel m);
IccModel icc_model_from_name(const std::string& name);

struct IccResult {
    double icc = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    IccModel model = IccModel::kTwoWayMixed;
};

/// Single-measure absolute-agreement ICC from the two-way ANOVA
/// decomposition:
///   ICC = (MS_R - MS_E) / (MS_R + (k-1) MS_E + (k/n)(MS_C - MS_E))
/// The point estimate is shared by the mixed and random models; the tag is
/// recorded for interpretation. 95% CI via the standard F-distribution
/// bounds (needs n >= 3). Constant tables (zero between-subject variance)
/// are an error.
IccResult icc_absolute(const RatingsTable& ratings, IccModel model);

/// Mean absolute difference between paired measurements.
double mad(const std::vector<double>& a, const std::vector<double>& b);

/// Standard error of measurement: sd_pooled * sqrt(1 - icc).
double sem(double sd_pooled, double icc);

/// Pooled (population) standard deviation of all cells.
double pooled_sd(const RatingsTable& ratings);

/// MAD averaged over all unordered rater pairs.
double mad_over_pairs(const RatingsTable& ratings);

/// CSV with a header row: subject_id, then one column per rater/session.
RatingsTable read_ratings_csv(const std::string& path);

}  // namespace metrics
}  // namespace uspine
