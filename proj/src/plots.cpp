#include "microdesign/plots.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

namespace md::plots {

namespace {

struct AxisScale {
  double lo = 0, hi = 1;   // data range mapped to the pixel range
  double px0 = 0, px1 = 1; // pixel range (px1 < px0 allowed for flipped y)
  double tick = 1;         // tick spacing in data units

  double map(double v) const { return px0 + (v - lo) / (hi - lo) * (px1 - px0); }
};

// Expand [lo, hi] slightly and pick a 1/2/5 tick spacing with ~5 ticks.
AxisScale make_scale(double lo, double hi, double px0, double px1) {
  if (!(hi > lo)) {
    hi = lo + 1.0;
    lo -= 1.0;
  }
  const double pad = 0.06 * (hi - lo);
  lo -= pad;
  hi += pad;
  const double raw = (hi - lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (mag * m >= raw) {
      step = mag * m;
      break;
    }
  return {lo, hi, px0, px1, step};
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << v;
  return ss.str();
}

void draw_axes(std::ostringstream& svg, const AxisScale& xs, const AxisScale& ys,
               const std::string& xlabel, const std::string& ylabel) {
  svg << "<rect x='" << xs.px0 << "' y='" << ys.px1 << "' width='" << (xs.px1 - xs.px0)
      << "' height='" << (ys.px0 - ys.px1)
      << "' fill='none' stroke='#333' stroke-width='1'/>\n";
  const double x_first = std::ceil(xs.lo / xs.tick) * xs.tick;
  for (double v = x_first; v <= xs.hi + 1e-12 * xs.tick; v += xs.tick) {
    const double px = xs.map(v);
    svg << "<line x1='" << px << "' y1='" << ys.px0 << "' x2='" << px << "' y2='"
        << (ys.px0 + 5) << "' stroke='#333'/>\n";
    svg << "<text x='" << px << "' y='" << (ys.px0 + 18)
        << "' font-size='11' text-anchor='middle' fill='#333'>" << fmt(v) << "</text>\n";
  }
  const double y_first = std::ceil(ys.lo / ys.tick) * ys.tick;
  for (double v = y_first; v <= ys.hi + 1e-12 * ys.tick; v += ys.tick) {
    const double py = ys.map(v);
    svg << "<line x1='" << (xs.px0 - 5) << "' y1='" << py << "' x2='" << xs.px0
        << "' y2='" << py << "' stroke='#333'/>\n";
    svg << "<text x='" << (xs.px0 - 8) << "' y='" << (py + 4)
        << "' font-size='11' text-anchor='end' fill='#333'>" << fmt(v) << "</text>\n";
  }
  svg << "<text x='" << (0.5 * (xs.px0 + xs.px1)) << "' y='" << (ys.px0 + 34)
      << "' font-size='12' text-anchor='middle' fill='#111'>" << xlabel << "</text>\n";
  svg << "<text x='16' y='" << (0.5 * (ys.px0 + ys.px1))
      << "' font-size='12' text-anchor='middle' fill='#111' transform='rotate(-90 16 "
      << (0.5 * (ys.px0 + ys.px1)) << ")'>" << ylabel << "</text>\n";
}

void write_scatter(const std::filesystem::path& path, const nlohmann::json& rep,
                   const std::vector<std::pair<double, double>>& training) {
  std::vector<std::pair<double, double>> designs;
  for (const auto& r : rep.at("restarts"))
    designs.emplace_back(r.at("oracle").at("kh").get<double>(),
                         r.at("oracle").at("kv").get<double>());
  double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
  auto grow = [&](double x, double y) {
    lo_x = std::min(lo_x, x);
    hi_x = std::max(hi_x, x);
    lo_y = std::min(lo_y, y);
    hi_y = std::max(hi_y, y);
  };
  for (auto [x, y] : training) grow(x, y);
  for (auto [x, y] : designs) grow(x, y);
  std::vector<double> box;
  if (rep.at("variant") == "p1") {
    box = rep.at("target").at("box").get<std::vector<double>>();
    grow(box[0], box[2]);
    grow(box[1], box[3]);
  }
  if (designs.empty() && training.empty()) grow(0, 0);

  const double W = 640, H = 480;
  AxisScale xs = make_scale(lo_x, hi_x, 70, W - 20);
  AxisScale ys = make_scale(lo_y, hi_y, H - 50, 20);

  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H
      << "' viewBox='0 0 " << W << " " << H << "'>\n";
  svg << "<rect width='" << W << "' height='" << H << "' fill='white'/>\n";
  draw_axes(svg, xs, ys, "effective conductivity (horizontal)",
            "effective conductivity (vertical)");
  for (auto [x, y] : training)
    svg << "<circle cx='" << xs.map(x) << "' cy='" << ys.map(y)
        << "' r='2' fill='#888' fill-opacity='0.35'/>\n";
  if (!box.empty()) {
    const double bx = xs.map(box[0]), by = ys.map(box[3]);
    svg << "<rect x='" << bx << "' y='" << by << "' width='" << (xs.map(box[1]) - bx)
        << "' height='" << (ys.map(box[2]) - by)
        << "' fill='none' stroke='#1f77b4' stroke-width='1.5' stroke-dasharray='5,3'/>\n";
  }
  for (auto [x, y] : designs)
    svg << "<circle cx='" << xs.map(x) << "' cy='" << ys.map(y)
        << "' r='4' fill='#d62728' fill-opacity='0.85' stroke='#7f1010'/>\n";
  svg << "<text x='" << (W - 24) << "' y='20' font-size='12' text-anchor='end' "
         "fill='#555'>grey: training set, red: verified designs</text>\n";
  svg << "</svg>\n";
  write_text(path, svg.str());
}

// Row-wise run-length encoded black/white rasters, one tile per design.
void write_designs_svg(const std::filesystem::path& path,
                       const std::vector<uint8_t>& blob, int K, int n) {
  const int cols = std::max(1, (int)std::ceil(std::sqrt((double)n)));
  const int rows = (n + cols - 1) / cols;
  const int tile = 96, gap = 12, label_h = 14;
  const int W = cols * (tile + gap) + gap;
  const int H = rows * (tile + gap + label_h) + gap;
  const double cell = (double)tile / K;

  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H
      << "' viewBox='0 0 " << W << " " << H << "' shape-rendering='crispEdges'>\n";
  svg << "<rect width='" << W << "' height='" << H << "' fill='#f4f4f4'/>\n";
  for (int d = 0; d < n; ++d) {
    const int gx = gap + (d % cols) * (tile + gap);
    const int gy = gap + (d / cols) * (tile + gap + label_h);
    svg << "<g transform='translate(" << gx << "," << gy << ")'>\n";
    svg << "<rect width='" << tile << "' height='" << tile
        << "' fill='white' stroke='#999'/>\n";
    const uint8_t* ph = blob.data() + (size_t)d * K * K;
    for (int i = 0; i < K; ++i) {
      int j = 0;
      while (j < K) {
        if (!ph[i * K + j]) {
          ++j;
          continue;
        }
        int j2 = j;
        while (j2 < K && ph[i * K + j2]) ++j2;
        svg << "<rect x='" << j * cell << "' y='" << i * cell << "' width='"
            << (j2 - j) * cell << "' height='" << cell << "' fill='#222'/>\n";
        j = j2;
      }
    }
    svg << "<text x='2' y='" << (tile + 11)
        << "' font-size='10' fill='#333'>design " << d << "</text>\n";
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  write_text(path, svg.str());
}

void write_aggregates(const std::filesystem::path& path, const nlohmann::json& rep) {
  std::ostringstream csv;
  csv.precision(17);
  csv << "metric,restart,value\n";
  const std::string variant = rep.at("variant");
  const auto& agg = rep.at("aggregates");
  csv << "variant,," << variant << "\n";
  csv << "n_restarts,," << rep.at("restarts").size() << "\n";
  if (variant == "p1") csv << "success_rate,," << agg.at("success_rate").get<double>() << "\n";
  if (variant == "p2") csv << "best_icorr,," << agg.at("best_icorr").get<double>() << "\n";
  if (variant == "p3") csv << "mean_ratio,," << agg.at("mean_ratio").get<double>() << "\n";
  for (const auto& r : rep.at("restarts")) {
    const int idx = r.at("restart").get<int>();
    csv << "objective," << idx << "," << r.at("objective").get<double>() << "\n";
    csv << "oracle_kh," << idx << "," << r.at("oracle").at("kh").get<double>() << "\n";
    csv << "oracle_kv," << idx << "," << r.at("oracle").at("kv").get<double>() << "\n";
    if (r.contains("inside_box"))
      csv << "inside_box," << idx << "," << (r.at("inside_box").get<bool>() ? 1 : 0) << "\n";
    if (r.contains("icorr")) csv << "icorr," << idx << "," << r.at("icorr").get<double>() << "\n";
    if (r.contains("ratio")) csv << "ratio," << idx << "," << r.at("ratio").get<double>() << "\n";
  }
  write_text(path, csv.str());
}

}  // namespace

void render_report(const std::filesystem::path& report_dir,
                   const std::filesystem::path& data_dir,
                   const std::filesystem::path& out_dir) {
  auto rep = nlohmann::json::parse(read_text(report_dir / "report.json"));
  const int K = rep.at("k").get<int>();
  const int n = (int)rep.at("restarts").size();
  auto blob = read_bytes(report_dir / "designs.u8");
  if ((int)blob.size() != n * K * K)
    throw std::runtime_error("render_report: designs.u8 size mismatch");

  std::vector<std::pair<double, double>> training;
  if (!data_dir.empty()) {
    auto kap = read_f32(data_dir / "kappa.f32");
    if (kap.size() % 2 != 0)
      throw std::runtime_error("render_report: kappa.f32 has odd length");
    training.reserve(kap.size() / 2);
    for (size_t i = 0; i + 1 < kap.size(); i += 2)
      training.emplace_back((double)kap[i], (double)kap[i + 1]);
  }

  std::filesystem::create_directories(out_dir);
  write_scatter(out_dir / "scatter.svg", rep, training);
  write_designs_svg(out_dir / "designs.svg", blob, K, n);
  write_aggregates(out_dir / "aggregates.csv", rep);
}

}  // namespace md::plots
