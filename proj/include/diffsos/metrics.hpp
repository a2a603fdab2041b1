#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "diffsos/image.hpp"

namespace diffsos {

double mae(const Image& a, const Image& b);
double mse(const Image& a, const Image& b);
/// 10 log10(range^2 / MSE), capped at 100 dB.
double psnr(const Image& a, const Image& b, double data_range);

struct SsimOptions {
    std::size_t window = 11;
    double sigma = 1.5;
    double data_range = 1.0;
    double k1 = 0.01;
    double k2 = 0.03;
};

/// Mean SSIM with a Gaussian window that is truncated at the image border and
/// renormalized over the in-bounds taps.
double ssim(const Image& a, const Image& b, const SsimOptions& opt = {});

/// Exponents for the first `scales` canonical MS-SSIM weights, renormalized to sum 1.
std::vector<double> ms_ssim_weights(std::size_t scales);
/// Smallest extent (rows or columns) accepted for the given scale count.
std::size_t ms_ssim_min_extent(std::size_t scales);

/// Multi-scale SSIM: contrast-structure terms at the finer scales, full SSIM at the
/// coarsest, 2x2 average pooling between scales. Negative terms are clamped to 0.
double ms_ssim(const Image& a, const Image& b, std::size_t scales = 3, const SsimOptions& opt = {});

/// Binary edge map: Sobel magnitude above the Otsu threshold. Flat images have no edges.
std::vector<unsigned char> detect_edges(const Image& img);

/// Pratt's figure of merit from edge maps (1 = edge). Both empty -> 1, one empty -> 0.
double pratt_fom_edges(const std::vector<unsigned char>& detected, const std::vector<unsigned char>& truth,
                       std::size_t height, std::size_t width, double alpha = 1.0 / 9.0);
/// FOM of `pred` edges against `truth` edges. Not symmetric.
double pratt_fom(const Image& pred, const Image& truth, double alpha = 1.0 / 9.0);

struct MetricRow {
    std::string id;
    double ms_ssim = 0.0;
    double psnr_db = 0.0;
    double mae = 0.0;
    double fom = 0.0;
};

struct MetricReport {
    std::vector<MetricRow> rows;
    MetricRow mean;  // id "mean"
    MetricRow std;   // id "std", population standard deviation
};

struct EvalOptions {
    std::size_t ms_ssim_scales = 3;
    double fom_alpha = 1.0 / 9.0;
};

/// Per-image metrics on maps in normalized [-1, 1] units: MS-SSIM on (x + 1) / 2
/// with range 1, PSNR with range 2, MAE in normalized units, FOM.
MetricReport evaluate_set(const std::vector<std::string>& ids, const std::vector<Image>& predictions,
                          const std::vector<Image>& ground_truths, const EvalOptions& opt = {});

/// metrics.csv: header id,ms_ssim,psnr_db,mae,fom then per-image rows, then mean and std rows.
void write_metrics_csv(std::ostream& os, const MetricReport& report);

/// Spearman rank correlation with average ranks for ties; 0 when either side is constant.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

} // namespace diffsos
