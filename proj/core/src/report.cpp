#include "pbact/report.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pbact/errors.hpp"
#include "pbact/io.hpp"
#include "pbact/numerics.hpp"

namespace pbact {

namespace {

std::string fmt2(double v) { return format_fixed(v, 2); }

// Minimal deterministic SVG assembly.
class Svg {
 public:
  Svg(int width, int height) : width_(width), height_(height) {
    out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
         << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
         << height << "\">\n";
    out_ << "<rect width=\"" << width << "\" height=\"" << height
         << "\" fill=\"white\"/>\n";
  }

  void rect(double x, double y, double w, double h, const std::string& fill) {
    out_ << "<rect x=\"" << fmt2(x) << "\" y=\"" << fmt2(y) << "\" width=\""
         << fmt2(w) << "\" height=\"" << fmt2(h) << "\" fill=\"" << fill
         << "\"/>\n";
  }

  void circle(double cx, double cy, double r, const std::string& fill) {
    out_ << "<circle cx=\"" << fmt2(cx) << "\" cy=\"" << fmt2(cy) << "\" r=\""
         << fmt2(r) << "\" fill=\"" << fill << "\"/>\n";
  }

  void line(double x1, double y1, double x2, double y2, const std::string& stroke) {
    out_ << "<line x1=\"" << fmt2(x1) << "\" y1=\"" << fmt2(y1) << "\" x2=\""
         << fmt2(x2) << "\" y2=\"" << fmt2(y2) << "\" stroke=\"" << stroke
         << "\" stroke-width=\"0.8\"/>\n";
  }

  void text(double x, double y, const std::string& s, int size = 11) {
    out_ << "<text x=\"" << fmt2(x) << "\" y=\"" << fmt2(y)
         << "\" font-family=\"monospace\" font-size=\"" << size << "\">" << s
         << "</text>\n";
  }

  std::string finish() {
    out_ << "</svg>\n";
    return out_.str();
  }

 private:
  int width_, height_;
  std::ostringstream out_;
};

std::string class_color(const std::string& cls) {
  if (cls == "success") return "#d62728";  // red, matching the convention
  if (cls == "failure") return "#1f77b4";  // blue
  if (cls == "query") return "#2ca02c";
  return "#7f7f7f";
}

std::filesystem::path write_success_table(const std::vector<EvalReport>& reports,
                                          const std::filesystem::path& out_dir) {
  std::ostringstream csv;
  csv << "condition,seeds,rollouts_per_seed,mean_rate,stddev_rate,success_rate_percent,per_seed_rates\n";
  for (const auto& r : reports) {
    csv << r.condition << "," << r.per_seed_rates.size() << ","
        << r.rollouts_per_seed << "," << format_double(r.mean_rate) << ","
        << format_double(r.stddev_rate) << "," << format_fixed(100.0 * r.mean_rate, 1)
        << " +- " << format_fixed(100.0 * r.stddev_rate, 2) << ",";
    for (size_t i = 0; i < r.per_seed_rates.size(); ++i)
      csv << (i ? ";" : "") << format_double(r.per_seed_rates[i].second);
    csv << "\n";
  }
  const auto path = out_dir / "success_table.csv";
  write_text_file(path, csv.str());
  return path;
}

std::vector<std::filesystem::path> write_kbar(
    const std::vector<FailureScore>& scores,
    const std::map<std::string, std::string>& failure_modes,
    const std::filesystem::path& out_dir) {
  auto ranked = scores;
  std::sort(ranked.begin(), ranked.end(),
            [](const FailureScore& a, const FailureScore& b) {
              return a.rank < b.rank;
            });
  double min_mean = ranked.front().mean;
  double max_mean = ranked.back().mean;

  std::ostringstream csv;
  csv << "rank,demo_id,failure_mode,kbar,kbar_minus_min\n";
  for (const auto& s : ranked) {
    auto mode = failure_modes.find(s.demo_id);
    csv << s.rank << "," << s.demo_id << ","
        << (mode != failure_modes.end() ? mode->second : "") << ","
        << format_double(s.mean) << "," << format_double(s.mean - min_mean)
        << "\n";
  }
  const auto csv_path = out_dir / "kbar.csv";
  write_text_file(csv_path, csv.str());

  // Ascending bars, height relative to the minimum.
  const int width = 640, height = 360, margin = 40;
  Svg svg(width, height);
  const double span = std::max(max_mean - min_mean, 1e-12);
  const double bar_w =
      static_cast<double>(width - 2 * margin) / static_cast<double>(ranked.size());
  for (size_t i = 0; i < ranked.size(); ++i) {
    const double h =
        (ranked[i].mean - min_mean) / span * (height - 2 * margin);
    const auto mode = failure_modes.find(ranked[i].demo_id);
    const std::string color =
        mode != failure_modes.end() && mode->second == "wander" ? "#2ca02c"
                                                                : "#1f77b4";
    svg.rect(margin + i * bar_w, height - margin - h, std::max(bar_w - 1.0, 0.5),
             h, color);
  }
  svg.line(margin, height - margin, width - margin, height - margin, "#000000");
  svg.text(margin, 20, "K-metric per failure demo, ascending (relative to min)");
  svg.text(margin, height - 10,
           "min " + format_fixed(min_mean, 4) + "  max " + format_fixed(max_mean, 4));
  const auto svg_path = out_dir / "kbar.svg";
  write_text_file(svg_path, svg.finish());
  return {csv_path, svg_path};
}

std::vector<std::filesystem::path> write_scatter(const PcaScatter& scatter,
                                                 const std::filesystem::path& out_dir) {
  if (scatter.pca.points.empty() || scatter.pca.points.front().second.size() < 2)
    throw ConfigError("emit_report: scatter '" + scatter.name + "' is not 2-D");

  std::ostringstream csv;
  csv << "id,class,x,y\n";
  for (const auto& [id, coords] : scatter.pca.points) {
    const auto cls = scatter.point_class.find(id);
    csv << id << "," << (cls != scatter.point_class.end() ? cls->second : "")
        << "," << format_double(coords[0]) << "," << format_double(coords[1])
        << "\n";
  }
  const auto csv_path = out_dir / (scatter.name + ".csv");
  write_text_file(csv_path, csv.str());

  const int width = 480, height = 480, margin = 42;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& [id, c] : scatter.pca.points) {
    xmin = std::min(xmin, c[0]);
    xmax = std::max(xmax, c[0]);
    ymin = std::min(ymin, c[1]);
    ymax = std::max(ymax, c[1]);
  }
  const double xspan = std::max(xmax - xmin, 1e-12);
  const double yspan = std::max(ymax - ymin, 1e-12);
  auto px = [&](double x) {
    return margin + (x - xmin) / xspan * (width - 2 * margin);
  };
  auto py = [&](double y) {
    return height - margin - (y - ymin) / yspan * (height - 2 * margin);
  };

  Svg svg(width, height);
  std::map<std::string, std::pair<double, double>> pos;
  for (const auto& [id, c] : scatter.pca.points) pos[id] = {px(c[0]), py(c[1])};
  for (const auto& [from, to] : scatter.edges) {
    auto a = pos.find(from), b = pos.find(to);
    if (a != pos.end() && b != pos.end())
      svg.line(a->second.first, a->second.second, b->second.first,
               b->second.second, "#bbbbbb");
  }
  for (const auto& [id, c] : scatter.pca.points) {
    const auto cls = scatter.point_class.find(id);
    svg.circle(px(c[0]), py(c[1]), 3.2,
               class_color(cls != scatter.point_class.end() ? cls->second : ""));
  }
  std::string evr = "evr";
  for (size_t i = 0; i < scatter.pca.explained_variance_ratio.size() && i < 2; ++i)
    evr += " " + format_fixed(scatter.pca.explained_variance_ratio[i], 3);
  svg.text(margin, 20, scatter.name + " (" + evr + ")");
  const auto svg_path = out_dir / (scatter.name + ".svg");
  write_text_file(svg_path, svg.finish());
  return {csv_path, svg_path};
}

}  // namespace

std::vector<std::filesystem::path> emit_report(
    const std::vector<EvalReport>& eval_reports,
    const std::vector<FailureScore>& scores,
    const std::map<std::string, std::string>& failure_modes,
    const std::vector<PcaScatter>& pca_outputs,
    const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (!std::filesystem::is_directory(out_dir))
    throw IoError("emit_report: cannot create " + out_dir.string());

  std::vector<std::filesystem::path> written;
  written.push_back(write_success_table(eval_reports, out_dir));
  if (!scores.empty()) {
    auto paths = write_kbar(scores, failure_modes, out_dir);
    written.insert(written.end(), paths.begin(), paths.end());
  }
  for (const auto& scatter : pca_outputs) {
    auto paths = write_scatter(scatter, out_dir);
    written.insert(written.end(), paths.begin(), paths.end());
  }
  return written;
}

}  // namespace pbact
