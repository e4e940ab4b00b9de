#include "uspine/reliability.hpp"

#include <boost/math/distributions/fisher_f.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace uspine {
namespace metrics {

void RatingsTable::validate() const {
    if (n() < 2 || k() < 2)
        throw std::invalid_argument("ratings table needs n >= 2 subjects and k >= 2 raters, got n=" +
                                    std::to_string(n()) + " k=" + std::to_string(k()));
    for (const auto& row : values)
        if (static_cast<int>(row.size()) != k())
            throw std::invalid_argument("ratings table has a ragged row (missing cells)");
    for (const auto& row : values)
        for (double v : row)
            if (!std::isfinite(v)) throw std::invalid_argument("ratings table holds a non-finite value");
}

std::string icc_model_name(IccModel m) {
    return m == IccModel::kTwoWayMixed ? "two_way_mixed" : "two_way_random";
}

IccModel icc_model_from_name(const std::string& name) {
    if (name == "two_way_mixed" || name == "mixed") return IccModel::kTwoWayMixed;
    if (name == "two_way_random" || name == "random") return IccModel::kTwoWayRandom;
    throw std::invalid_argument("unknown ICC model: " + name);
}

namespace {

struct Anova {
    double msr, msc, mse;
    int n, k;
};

Anova two_way_anova(const RatingsTable& t) {
    const int n = t.n(), k = t.k();
    double grand = 0.0;
    for (const auto& row : t.values)
        for (double v : row) grand += v;
    grand /= static_cast<double>(n) * k;

    std::vector<double> row_mean(static_cast<size_t>(n), 0.0), col_mean(static_cast<size_t>(k), 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < k; ++j) {
            row_mean[static_cast<size_t>(i)] += t.values[static_cast<size_t>(i)][static_cast<size_t>(j)];
            col_mean[static_cast<size_t>(j)] += t.values[static_cast<size_t>(i)][static_cast<size_t>(j)];
        }
    }
    for (double& v : row_mean) v /= k;
    for (double& v : col_mean) v /= n;

    double ss_rows = 0.0, ss_cols = 0.0, ss_err = 0.0, scale = 0.0;
    for (int i = 0; i < n; ++i) ss_rows += (row_mean[static_cast<size_t>(i)] - grand) * (row_mean[static_cast<size_t>(i)] - grand);
    ss_rows *= k;
    for (int j = 0; j < k; ++j) ss_cols += (col_mean[static_cast<size_t>(j)] - grand) * (col_mean[static_cast<size_t>(j)] - grand);
    ss_cols *= n;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) {
            double v = t.values[static_cast<size_t>(i)][static_cast<size_t>(j)];
            double resid = v - row_mean[static_cast<size_t>(i)] - col_mean[static_cast<size_t>(j)] + grand;
            ss_err += resid * resid;
            scale += (v - grand) * (v - grand);
        }

    // Sub-roundoff residual variation counts as exact agreement, so a
    // perfect-agreement table yields ICC = 1 exactly.
    double dust = 1e-12 * std::max(scale, 1.0);
    if (ss_err < dust) ss_err = 0.0;
    if (ss_cols < dust) ss_cols = 0.0;

    Anova a;
    a.n = n;
    a.k = k;
    a.msr = ss_rows / (n - 1);
    a.msc = ss_cols / (k - 1);
    a.mse = ss_err / (static_cast<double>(n - 1) * (k - 1));
    return a;
}

}  // namespace

IccResult icc_absolute(const RatingsTable& ratings, IccModel model) {
    ratings.validate();
    Anova a = two_way_anova(ratings);
    const int n = a.n, k = a.k;

    double denom = a.msr + (k - 1) * a.mse + (static_cast<double>(k) / n) * (a.msc - a.mse);
    if (denom <= 0.0 || (a.msr == 0.0 && a.msc == 0.0 && a.mse == 0.0))
        throw std::invalid_argument("ICC undefined: no between-subject variance in the ratings");

    IccResult res;
    res.model = model;
    res.icc = (a.msr - a.mse) / denom;

    if (a.mse == 0.0 && a.msc == 0.0) {
        res.icc = 1.0;
        res.ci_lo = 1.0;
        res.ci_hi = 1.0;
        return res;
    }
    if (n < 3) {
        res.ci_lo = -1.0;
        res.ci_hi = 1.0;
        return res;
    }

    // F-based interval for absolute-agreement single measures
    // (Satterthwaite degrees of freedom).
    double r = res.icc;
    double alpha = 0.05;
    double fl, fu;
    {
        double aa = (k * r) / (n * (1.0 - r));
        double bb = 1.0 + (k * r * (n - 1.0)) / (n * (1.0 - r));
        double num = (aa * a.msc + bb * a.mse) * (aa * a.msc + bb * a.mse);
        double den = (aa * a.msc) * (aa * a.msc) / (k - 1.0) +
                     (bb * a.mse) * (bb * a.mse) / ((n - 1.0) * (k - 1.0));
        double v = den > 0.0 ? num / den : 1.0;
        v = std::max(v, 1.0);
        boost::math::fisher_f f1(n - 1.0, v);
        boost::math::fisher_f f2(v, n - 1.0);
        fl = boost::math::quantile(f1, 1.0 - alpha / 2.0);
        fu = boost::math::quantile(f2, 1.0 - alpha / 2.0);
    }
    double lower = n * (a.msr - fl * a.mse) /
                   (fl * (k * a.msc + (static_cast<double>(k) * n - k - n) * a.mse) + n * a.msr);
    double upper = n * (fu * a.msr - a.mse) /
                   (k * a.msc + (static_cast<double>(k) * n - k - n) * a.mse + n * fu * a.msr);
    res.ci_lo = std::clamp(lower, -1.0, 1.0);
    res.ci_hi = std::clamp(upper, -1.0, 1.0);
    return res;
}

double mad(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || a.size() != b.size())
        throw std::invalid_argument("mad needs two equal-length non-empty vectors");
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += std::fabs(a[i] - b[i]);
    return acc / static_cast<double>(a.size());
}

double sem(double sd_pooled, double icc) {
    if (!(icc >= 0.0 && icc <= 1.0)) throw std::invalid_argument("sem needs icc in [0,1]");
    if (sd_pooled < 0.0) throw std::invalid_argument("sem needs a non-negative sd");
    return sd_pooled * std::sqrt(1.0 - icc);
}

double pooled_sd(const RatingsTable& ratings) {
    ratings.validate();
    double mean = 0.0;
    long count = 0;
    for (const auto& row : ratings.values)
        for (double v : row) {
            mean += v;
            ++count;
        }
    mean /= static_cast<double>(count);
    double var = 0.0;
    for (const auto& row : ratings.values)
        for (double v : row) var += (v - mean) * (v - mean);
    return std::sqrt(var / static_cast<double>(count));
}

double mad_over_pairs(const RatingsTable& ratings) {
    ratings.validate();
    const int k = ratings.k();
    double acc = 0.0;
    int pairs = 0;
    for (int a = 0; a < k; ++a)
        for (int b = a + 1; b < k; ++b) {
            std::vector<double> ca, cb;
            for (const auto& row : ratings.values) {
                ca.push_back(row[static_cast<size_t>(a)]);
                cb.push_back(row[static_cast<size_t>(b)]);
            }
            acc += mad(ca, cb);
            ++pairs;
        }
    return acc / pairs;
}

RatingsTable read_ratings_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open ratings file: " + path);
    RatingsTable t;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("ratings file is empty: " + path);
    // header: subject_id,rater1,rater2,...
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        if (!std::getline(ss, cell, ',')) continue;
        t.subject_ids.push_back(cell);
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad rating value '" + cell + "'");
            }
        }
        t.values.push_back(std::move(row));
    }
    t.validate();
    return t;
}

}  // namespace metrics
}  // namespace uspine
