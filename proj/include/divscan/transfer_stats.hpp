#pragma once

#include <vector>

#include "divscan/reports.hpp"
#include "divscan/tensor_io.hpp"

namespace divscan {

/// Natural log odds; p must lie strictly inside (0,1).
double logit(double p);

/// Logit-transforms the accuracy grid, centers per dataset across models,
/// and reduces to a per-model mean with a corrected standard error
/// (sample stddev across datasets / sqrt(|D|), scaled by |M|/(|M|-1)).
TransferScores transfer_scores(const AccuracyTable& table);

/// Pearson on raw values, Spearman as Pearson on average-tied ranks,
/// Kendall tau-b with tie correction, and R^2 of the least-squares line of
/// y on x. Vectors must have equal length >= 3 and neither may be constant.
CorrelationReport correlate(const std::vector<double>& x, const std::vector<double>& y);

/// Calibrated score: upstream accuracy times feature diversity.
double cis(double accuracy, double diversity);

} // namespace divscan
