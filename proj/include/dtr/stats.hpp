#pragma once

#include <vector>

namespace dtr {

double Mean(const std::vector<double>& x);
// Population standard deviation.
double StdDev(const std::vector<double>& x);

// Ranks starting at 1; tied values share their average rank.
std::vector<double> AverageRanks(const std::vector<double>& x);

// Pearson correlation of the average ranks. Throws InvalidArgument when the
// inputs differ in length, have fewer than two entries or one is constant.
double Spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace dtr
