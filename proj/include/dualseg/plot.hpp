#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dualseg/tensor.hpp"

namespace dualseg {

struct PlotSeries {
  std::string label;
  std::vector<real> x;
  std::vector<real> y;
};

// Minimal deterministic SVG renderers; identical inputs give identical bytes.
void svg_line_chart(const std::filesystem::path& path, const std::string& title,
                    const std::string& x_label, const std::string& y_label,
                    const std::vector<PlotSeries>& series);

void svg_bar_chart(const std::filesystem::path& path, const std::string& title,
                   const std::vector<std::pair<std::string, real>>& bars);

std::string format_real(real v);  // fixed formatting shared by CSV/SVG output

}  // namespace dualseg
