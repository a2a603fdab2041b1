#include "diffsos/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>

#include "diffsos/error.hpp"

namespace diffsos {

namespace {

void require_same(const Image& a, const Image& b, const char* what) {
    if (!a.same_extent(b) || a.size() == 0) {
        throw ShapeError(std::string(what) + ": image extents differ (" + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) +
                         ")");
    }
}

std::vector<double> gaussian_taps(std::size_t window, double sigma) {
    std::vector<double> g(window);
    const double c = (static_cast<double>(window) - 1.0) / 2.0;
    for (std::size_t i = 0; i < window; ++i) {
        const double d = static_cast<double>(i) - c;
        g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    }
    return g;
}

// Separable Gaussian filter with border truncation; each axis renormalized over in-bounds taps.
Image local_mean(const Image& in, const std::vector<double>& taps) {
    const long h = static_cast<long>(in.height), w = static_cast<long>(in.width);
    const long r = static_cast<long>(taps.size() / 2);
    Image tmp(in.height, in.width), out(in.height, in.width);
    for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
            double s = 0.0, ws = 0.0;
            for (long k = -r; k <= r; ++k) {
                if (x + k < 0 || x + k >= w) continue;
                s += taps[k + r] * in.at(y, x + k);
                ws += taps[k + r];
            }
            tmp.at(y, x) = s / ws;
        }
    }
    for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
            double s = 0.0, ws = 0.0;
            for (long k = -r; k <= r; ++k) {
                if (y + k < 0 || y + k >= h) continue;
                s += taps[k + r] * tmp.at(y + k, x);
                ws += taps[k + r];
            }
            out.at(y, x) = s / ws;
        }
    }
    return out;
}

struct SsimTerms {
    double ssim;
    double cs;
};

SsimTerms ssim_terms(const Image& a, const Image& b, const SsimOptions& opt) {
    const auto taps = gaussian_taps(opt.window, opt.sigma);
    Image aa(a.height, a.width), bb(a.height, a.width), ab(a.height, a.width);
    for (std::size_t i = 0; i < a.size(); ++i) {
        aa.pixels[i] = a.pixels[i] * a.pixels[i];
        bb.pixels[i] = b.pixels[i] * b.pixels[i];
        ab.pixels[i] = a.pixels[i] * b.pixels[i];
    }
    const Image mu_a = local_mean(a, taps), mu_b = local_mean(b, taps);
    const Image e_aa = local_mean(aa, taps), e_bb = local_mean(bb, taps), e_ab = local_mean(ab, taps);
    const double c1 = (opt.k1 * opt.data_range) * (opt.k1 * opt.data_range);
    const double c2 = (opt.k2 * opt.data_range) * (opt.k2 * opt.data_range);
    double ssim_sum = 0.0, cs_sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double ma = mu_a.pixels[i], mb = mu_b.pixels[i];
        const double va = e_aa.pixels[i] - ma * ma, vb = e_bb.pixels[i] - mb * mb, cov = e_ab.pixels[i] - ma * mb;
        const double cs = (2.0 * cov + c2) / (va + vb + c2);
        const double lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        cs_sum += cs;
        ssim_sum += lum * cs;
    }
    const double n = static_cast<double>(a.size());
    return {ssim_sum / n, cs_sum / n};
}

Image avg_pool2(const Image& in) {
    Image out(in.height / 2, in.width / 2);
    for (std::size_t y = 0; y < out.height; ++y) {
        for (std::size_t x = 0; x < out.width; ++x) {
            out.at(y, x) = 0.25 * (in.at(2 * y, 2 * x) + in.at(2 * y + 1, 2 * x) + in.at(2 * y, 2 * x + 1) +
                                   in.at(2 * y + 1, 2 * x + 1));
        }
    }
    return out;
}

MetricRow aggregate(const std::vector<MetricRow>& rows, bool stddev) {
    MetricRow r;
    r.id = stddev ? "std" : "mean";
    if (rows.empty()) return r;
    const double n = static_cast<double>(rows.size());
    auto field = [&](double MetricRow::*f) {
        double s = 0.0;
        for (const auto& row : rows) s += row.*f;
        const double mu = s / n;
        if (!stddev) return mu;
        double v = 0.0;
        for (const auto& row : rows) v += (row.*f - mu) * (row.*f - mu);
        return std::sqrt(v / n);
    };
    r.ms_ssim = field(&MetricRow::ms_ssim);
    r.psnr_db = field(&MetricRow::psnr_db);
    r.mae = field(&MetricRow::mae);
    r.fom = field(&MetricRow::fom);
    return r;
}

std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

} // namespace

double mae(const Image& a, const Image& b) {
    require_same(a, b, "mae");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a.pixels[i] - b.pixels[i]);
    return s / static_cast<double>(a.size());
}

double mse(const Image& a, const Image& b) {
    require_same(a, b, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a.pixels[i] - b.pixels[i]) * (a.pixels[i] - b.pixels[i]);
    return s / static_cast<double>(a.size());
}

double psnr(const Image& a, const Image& b, double data_range) {
    constexpr double kCap = 100.0;
    const double m = mse(a, b);
    if (m == 0.0) return kCap;
    return std::min(kCap, 10.0 * std::log10(data_range * data_range / m));
}

double ssim(const Image& a, const Image& b, const SsimOptions& opt) {
    require_same(a, b, "ssim");
    return ssim_terms(a, b, opt).ssim;
}

std::vector<double> ms_ssim_weights(std::size_t scales) {
    static constexpr std::array<double, 5> kCanonical{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    if (scales == 0 || scales > kCanonical.size()) throw ConfigError("eval.ms_ssim_scales: must be in [1, 5]");
    std::vector<double> w(kCanonical.begin(), kCanonical.begin() + static_cast<long>(scales));
    const double s = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& v : w) v /= s;
    return w;
}

std::size_t ms_ssim_min_extent(std::size_t scales) { return std::size_t{8} << (scales - 1); }

double ms_ssim(const Image& a, const Image& b, std::size_t scales, const SsimOptions& opt) {
    require_same(a, b, "ms_ssim");
    const auto w = ms_ssim_weights(scales);
    const std::size_t need = ms_ssim_min_extent(scales);
    if (a.height < need || a.width < need) {
        throw ConfigError("ms_ssim: " + std::to_string(a.height) + "x" + std::to_string(a.width) + " image too small for " +
                          std::to_string(scales) + " scales; minimum extent is " + std::to_string(need));
    }
    Image x = a, y = b;
    double result = 1.0;
    for (std::size_t s = 0; s < scales; ++s) {
        const SsimTerms t = ssim_terms(x, y, opt);
        const double term = s + 1 == scales ? t.ssim : t.cs;
        result *= std::pow(std::max(term, 0.0), w[s]);
        if (s + 1 < scales) {
            x = avg_pool2(x);
            y = avg_pool2(y);
        }
    }
    return result;
}

std::vector<unsigned char> detect_edges(const Image& img) {
    const long h = static_cast<long>(img.height), w = static_cast<long>(img.width);
    std::vector<double> mag(img.size());
    auto px = [&](long y, long x) { return img.at(std::clamp(y, 0L, h - 1), std::clamp(x, 0L, w - 1)); };
    for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
            const double gx = (px(y - 1, x + 1) + 2.0 * px(y, x + 1) + px(y + 1, x + 1)) -
                              (px(y - 1, x - 1) + 2.0 * px(y, x - 1) + px(y + 1, x - 1));
            const double gy = (px(y + 1, x - 1) + 2.0 * px(y + 1, x) + px(y + 1, x + 1)) -
                              (px(y - 1, x - 1) + 2.0 * px(y - 1, x) + px(y - 1, x + 1));
            mag[static_cast<std::size_t>(y * w + x)] = std::hypot(gx, gy);
        }
    }
    std::vector<unsigned char> edges(img.size(), 0);
    const auto [lo_it, hi_it] = std::minmax_element(mag.begin(), mag.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!(hi > lo) || hi <= 1e-12 * std::max(1.0, std::fabs(hi))) return edges;

    constexpr std::size_t kBins = 256;
    std::array<double, kBins> hist{};
    auto bin = [&](double v) {
        return std::min(kBins - 1, static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(kBins)));
    };
    for (double v : mag) hist[bin(v)] += 1.0;
    const double total = static_cast<double>(mag.size());
    double sum_all = 0.0;
    for (std::size_t i = 0; i < kBins; ++i) sum_all += static_cast<double>(i) * hist[i];
    double w0 = 0.0, sum0 = 0.0, best = -1.0;
    std::size_t best_bin = 0;
    for (std::size_t i = 0; i + 1 < kBins; ++i) {
        w0 += hist[i];
        sum0 += static_cast<double>(i) * hist[i];
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if (between > best) {
            best = between;
            best_bin = i;
        }
    }
    for (std::size_t i = 0; i < mag.size(); ++i) edges[i] = bin(mag[i]) > best_bin ? 1 : 0;
    return edges;
}

double pratt_fom_edges(const std::vector<unsigned char>& detected, const std::vector<unsigned char>& truth,
                       std::size_t height, std::size_t width, double alpha) {
    if (detected.size() != height * width || truth.size() != height * width) {
        throw ShapeError("pratt_fom: edge maps do not match " + std::to_string(height) + "x" + std::to_string(width));
    }
    std::vector<std::pair<double, double>> gt;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i]) gt.emplace_back(static_cast<double>(i / width), static_cast<double>(i % width));
    }
    const std::size_t n_d = static_cast<std::size_t>(std::count(detected.begin(), detected.end(), 1));
    if (n_d == 0 && gt.empty()) return 1.0;
    if (n_d == 0 || gt.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < detected.size(); ++i) {
        if (!detected[i]) continue;
        const double y = static_cast<double>(i / width), x = static_cast<double>(i % width);
        double d2 = std::numeric_limits<double>::infinity();
        for (const auto& [gy, gx] : gt) d2 = std::min(d2, (y - gy) * (y - gy) + (x - gx) * (x - gx));
        sum += 1.0 / (1.0 + alpha * d2);
    }
    return sum / static_cast<double>(std::max(n_d, gt.size()));
}

double pratt_fom(const Image& pred, const Image& truth, double alpha) {
    require_same(pred, truth, "pratt_fom");
    return pratt_fom_edges(detect_edges(pred), detect_edges(truth), pred.height, pred.width, alpha);
}

MetricReport evaluate_set(const std::vector<std::string>& ids, const std::vector<Image>& predictions,
                          const std::vector<Image>& ground_truths, const EvalOptions& opt) {
    if (ids.size() != predictions.size() || ids.size() != ground_truths.size()) {
        throw ShapeError("evaluate_set: ids, predictions and ground truths differ in count");
    }
    MetricReport rep;
    SsimOptions so;
    so.data_range = 1.0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        Image p01 = predictions[i], t01 = ground_truths[i];
        for (double& v : p01.pixels) v = 0.5 * (v + 1.0);
        for (double& v : t01.pixels) v = 0.5 * (v + 1.0);
        MetricRow row;
        row.id = ids[i];
        row.ms_ssim = ms_ssim(p01, t01, opt.ms_ssim_scales, so);
        row.psnr_db = psnr(predictions[i], ground_truths[i], 2.0);
        row.mae = mae(predictions[i], ground_truths[i]);
        row.fom = pratt_fom(predictions[i], ground_truths[i], opt.fom_alpha);
        rep.rows.push_back(row);
    }
    rep.mean = aggregate(rep.rows, false);
    rep.std = aggregate(rep.rows, true);
    return rep;
}

void write_metrics_csv(std::ostream& os, const MetricReport& report) {
    os << "id,ms_ssim,psnr_db,mae,fom\n";
    const auto prec = os.precision();
    os << std::setprecision(10);
    auto line = [&](const MetricRow& r) {
        os << r.id << ',' << r.ms_ssim << ',' << r.psnr_db << ',' << r.mae << ',' << r.fom << '\n';
    };
    for (const auto& r : report.rows) line(r);
    line(report.mean);
    line(report.std);
    os.precision(prec);
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty()) throw ShapeError("spearman: inputs differ in length or are empty");
    const auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

} // namespace diffsos
