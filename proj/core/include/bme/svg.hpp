#pragma once

#include <string>
#include <vector>

namespace bme::svg {

struct Series {
  std::string label;
  std::vector<double> values;  // x is the sample index
};

/// Indexed line chart with axes, min/max labels and a legend. The optional
/// reference series is drawn dashed.
std::string line_chart(const std::string& title, const std::vector<Series>& series,
                       const std::vector<double>& reference = {});

struct Box {
  std::string label;
  double whisker_lo = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double whisker_hi = 0.0;
};

std::string box_plot(const std::string& title, const std::vector<Box>& boxes);

void write_file(const std::string& path, const std::string& content);

}  // namespace bme::svg
