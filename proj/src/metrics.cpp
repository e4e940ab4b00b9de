#include "uspine/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace uspine {
namespace metrics {

using nlohmann::json;

RegionStats region_stats(const Image& img, const SegMask& mask) {
    if (img.rank() != 2 || img.dim(0) != mask.h || img.dim(1) != mask.w)
        throw std::invalid_argument("region_stats: image " + shape_str(img.shape()) + " vs mask " +
                                    std::to_string(mask.h) + "x" + std::to_string(mask.w));
    double sum_s = 0.0, sum_b = 0.0;
    long n_s = 0, n_b = 0;
    for (std::int64_t i = 0; i < img.size(); ++i) {
        if (mask.labels[static_cast<size_t>(i)] == 0) {
            sum_b += img[i];
            ++n_b;
        } else {
            sum_s += img[i];
            ++n_s;
        }
    }
    RegionStats st;
    st.n_signal = n_s;
    st.n_background = n_b;
    if (n_s > 0) st.mean_signal = sum_s / n_s;
    if (n_b > 0) st.mean_background = sum_b / n_b;
    double var_s = 0.0, var_b = 0.0;
    for (std::int64_t i = 0; i < img.size(); ++i) {
        double v = img[i];
        if (mask.labels[static_cast<size_t>(i)] == 0)
            var_b += (v - st.mean_background) * (v - st.mean_background);
        else
            var_s += (v - st.mean_signal) * (v - st.mean_signal);
    }
    if (n_s > 0) st.std_signal = std::sqrt(var_s / n_s);
    if (n_b > 0) st.std_background = std::sqrt(var_b / n_b);
    return st;
}

double snr_db(const Image& img, const SegMask& mask, std::string* warning) {
    RegionStats st = region_stats(img, mask);
    if (st.n_signal == 0 || st.n_background == 0)
        throw std::invalid_argument("snr needs non-empty signal and background regions");
    if (st.std_background == 0.0) {
        if (warning) *warning = "snr: zero background deviation, reporting +inf";
        return std::numeric_limits<double>::infinity();
    }
    return 20.0 * std::log10((1.0 - st.mean_signal) / st.std_background);
}

double cnr_db(const Image& img, const SegMask& mask, std::string* warning) {
    RegionStats st = region_stats(img, mask);
    if (st.n_signal == 0 || st.n_background == 0)
        throw std::invalid_argument("cnr needs non-empty signal and background regions");
    double contrast = std::fabs(st.mean_signal - st.mean_background);
    double denom = std::sqrt(st.std_signal * st.std_signal + st.std_background * st.std_background);
    if (denom == 0.0) {
        if (warning) *warning = "cnr: both regions have zero deviation, reporting +inf";
        return std::numeric_limits<double>::infinity();
    }
    if (contrast == 0.0) {
        if (warning) *warning = "cnr: zero contrast, reporting -inf";
        return -std::numeric_limits<double>::infinity();
    }
    return 20.0 * std::log10(contrast / denom);
}

double psnr_db(const Image& a, const Image& b, double cap_db) {
    check_same_shape(a, b, "psnr");
    double mse = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse == 0.0) return cap_db;
    return std::min(cap_db, 20.0 * std::log10(1.0 / std::sqrt(mse)));
}

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kK1 = 0.01, kK2 = 0.03;
const double kScaleWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

std::vector<double> gaussian_kernel() {
    std::vector<double> k(kWindow);
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        double x = i - (kWindow - 1) / 2.0;
        k[static_cast<size_t>(i)] = std::exp(-x * x / (2.0 * kSigma * kSigma));
        sum += k[static_cast<size_t>(i)];
    }
    for (double& v : k) v /= sum;
    return k;
}

// valid separable convolution with the gaussian window
Image gauss_valid(const Image& img) {
    static const std::vector<double> k = gaussian_kernel();
    const int h = img.dim(0), w = img.dim(1);
    const int oh = h - kWindow + 1, ow = w - kWindow + 1;
    Image tmp({h, ow});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWindow; ++i) acc += k[static_cast<size_t>(i)] * img.at(y, x + i);
            tmp.at(y, x) = acc;
        }
    Image out({oh, ow});
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWindow; ++i) acc += k[static_cast<size_t>(i)] * tmp.at(y + i, x);
            out.at(y, x) = acc;
        }
    return out;
}

Image downsample2(const Image& img) {
    const int h = img.dim(0) / 2, w = img.dim(1) / 2;
    Image out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out.at(y, x) = 0.25 * (img.at(2 * y, 2 * x) + img.at(2 * y, 2 * x + 1) +
                                   img.at(2 * y + 1, 2 * x) + img.at(2 * y + 1, 2 * x + 1));
    return out;
}

struct ScaleTerms {
    double luminance;
    double contrast_structure;
};

ScaleTerms ssim_terms(const Image& a, const Image& b) {
    const double c1 = kK1 * kK1, c2 = kK2 * kK2;  // dynamic range L = 1
    Image mu_a = gauss_valid(a), mu_b = gauss_valid(b);
    Image aa(a.shape()), bb(b.shape()), ab(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    Image e_aa = gauss_valid(aa), e_bb = gauss_valid(bb), e_ab = gauss_valid(ab);
    double lum = 0.0, cs = 0.0;
    for (std::int64_t i = 0; i < mu_a.size(); ++i) {
        double ma = mu_a[i], mb = mu_b[i];
        double va = e_aa[i] - ma * ma;
        double vb = e_bb[i] - mb * mb;
        double cov = e_ab[i] - ma * mb;
        lum += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        cs += (2.0 * cov + c2) / (va + vb + c2);
    }
    double n = static_cast<double>(mu_a.size());
    return {lum / n, cs / n};
}

}  // namespace

MsSsimResult ms_ssim(const Image& a, const Image& b) {
    check_same_shape(a, b, "ms_ssim");
    int min_dim = std::min(a.dim(0), a.dim(1));
    int scales = 0;
    while (scales < 5 && (min_dim >> scales) >= kWindow) ++scales;
    if (scales == 0)
        throw std::invalid_argument("ms_ssim needs min dimension >= " + std::to_string(kWindow));

    double wsum = 0.0;
    for (int s = 0; s < scales; ++s) wsum += kScaleWeights[s];

    Image ca = a, cb = b;
    double value = 1.0;
    for (int s = 0; s < scales; ++s) {
        ScaleTerms t = ssim_terms(ca, cb);
        double w = kScaleWeights[s] / wsum;
        double cs = std::max(t.contrast_structure, 0.0);
        value *= std::pow(cs, w);
        if (s == scales - 1) value *= std::pow(std::max(t.luminance, 0.0), w);
        if (s + 1 < scales) {
            ca = downsample2(ca);
            cb = downsample2(cb);
        }
    }
    return {value, scales};
}

std::string QualityReport::to_json() const {
    auto put = [](json& j, const char* key, const std::optional<double>& v) {
        if (!v) return;
        if (std::isinf(*v))
            j[key] = *v > 0 ? "inf" : "-inf";
        else
            j[key] = *v;
    };
    json j;
    json case_list = json::array();
    std::vector<double> mss, psn, snrs, cnrs;
    for (const auto& c : cases) {
        json cj;
        cj["id"] = c.id;
        put(cj, "ms_ssim", c.ms_ssim);
        if (c.ms_ssim_scales) cj["ms_ssim_scales"] = *c.ms_ssim_scales;
        put(cj, "psnr_db", c.psnr);
        put(cj, "snr_db", c.snr);
        put(cj, "cnr_db", c.cnr);
        if (c.error) cj["error"] = *c.error;
        case_list.push_back(cj);
        if (c.ms_ssim && std::isfinite(*c.ms_ssim)) mss.push_back(*c.ms_ssim);
        if (c.psnr && std::isfinite(*c.psnr)) psn.push_back(*c.psnr);
        if (c.snr && std::isfinite(*c.snr)) snrs.push_back(*c.snr);
        if (c.cnr && std::isfinite(*c.cnr)) cnrs.push_back(*c.cnr);
    }
    j["cases"] = case_list;
    auto agg = [&](const char* key, const std::vector<double>& v) {
        if (v.empty()) return;
        auto [m, sd] = aggregate(v);
        j["aggregate"][key] = {{"mean", m}, {"std", sd}, {"n", v.size()}};
    };
    agg("ms_ssim", mss);
    agg("psnr_db", psn);
    agg("snr_db", snrs);
    agg("cnr_db", cnrs);
    return j.dump(2);
}

std::string QualityReport::to_tsv() const {
    std::ostringstream os;
    os << "id\tms_ssim\tpsnr_db\tsnr_db\tcnr_db\terror\n";
    auto cell = [&](const std::optional<double>& v) {
        if (!v) return std::string("-");
        std::ostringstream c;
        c.precision(10);
        c << *v;
        return c.str();
    };
    for (const auto& c : cases) {
        os << c.id << "\t" << cell(c.ms_ssim) << "\t" << cell(c.psnr) << "\t" << cell(c.snr) << "\t"
           << cell(c.cnr) << "\t" << (c.error ? *c.error : "-") << "\n";
    }
    return os.str();
}

std::pair<double, double> QualityReport::aggregate(const std::vector<double>& values) {
    if (values.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    return {mean, std::sqrt(var)};
}

}  // namespace metrics
}  // namespace uspine
