#pragma once
// Static SVG/CSV rendering of design reports: property-space scatter,
// microstructure rasters, aggregate tables. No interactive dependencies.

#include "microdesign/common.hpp"

namespace md::plots {

// Reads report.json/designs.u8 from report_dir (and kappa.f32 from data_dir
// when given) and writes scatter.svg, designs.svg, aggregates.csv to out_dir.
void render_report(const std::filesystem::path& report_dir,
                   const std::filesystem::path& data_dir,  // may be empty
                   const std::filesystem::path& out_dir);

}  // namespace md::plots
