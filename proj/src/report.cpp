#include "cbpnet/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cbpnet/errors.hpp"

namespace cbpnet {

void finalize_metrics(MetricsReport& report) {
  report.avg_accuracy = avg_accuracy(report.matrix);
  report.forgetting.reset();
  if (report.matrix.tasks() >= 2) report.forgetting = forgetting(report.matrix);
  report.learning_curve = report.matrix.diagonal();
  report.average_curve = report.matrix.running_average();
}

nlohmann::json to_json(const MetricsReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < report.matrix.tasks(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t t = 0; t <= i; ++t) {
      row.push_back(report.matrix.filled(i, t) ? nlohmann::json(report.matrix.at(i, t)) : nlohmann::json());
    }
    rows.push_back(std::move(row));
  }
  nlohmann::json j;
  j["variant"] = report.variant;
  j["tasks"] = report.matrix.tasks();
  j["accuracy_matrix"] = std::move(rows);
  j["avg_accuracy"] = report.avg_accuracy;
  j["forgetting"] = report.forgetting ? nlohmann::json(*report.forgetting) : nlohmann::json();
  j["curves"] = {{"learning_accuracy", report.learning_curve},
                 {"average_accuracy", report.average_curve}};
  j["loss_traces"] = report.loss_traces;
  j["cbp_steps"] = report.cbp_steps;
  j["units_reinitialized"] = report.units_reinitialized;
  j["backbone_checksum"] = report.backbone_checksum;
  j["config"] = report.config;
  j["seed"] = report.seed;
  j["wall_clock_seconds"] = report.wall_clock_seconds;
  return j;
}

std::string matrix_csv(const AccuracyMatrix& mx) {
  std::string out = "after_task,task,accuracy\n";
  char buf[64];
  for (std::size_t i = 0; i < mx.tasks(); ++i) {
    for (std::size_t t = 0; t <= i; ++t) {
      if (!mx.filled(i, t)) continue;
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g\n", i + 1, t + 1, mx.at(i, t));
      out += buf;
    }
  }
  return out;
}

AccuracyMatrix parse_matrix_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || (line != "after_task,task,accuracy" && line != "after_task,task,accuracy\r")) {
    throw FormatError("matrix csv: missing header \"after_task,task,accuracy\"");
  }
  struct Cell {
    std::size_t i, t;
    double v;
  };
  std::vector<Cell> cells;
  std::size_t tasks = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t i = 0, t = 0;
    double v = 0.0;
    int consumed = 0;
    if (std::sscanf(line.c_str(), "%zu,%zu,%lf%n", &i, &t, &v, &consumed) != 3 ||
        static_cast<std::size_t>(consumed) != line.size() || i == 0 || t == 0 || t > i) {
      throw FormatError("matrix csv: malformed row " + std::to_string(line_no) + ": " + line);
    }
    cells.push_back({i - 1, t - 1, v});
    tasks = std::max(tasks, i);
  }
  if (cells.empty()) throw FormatError("matrix csv: no rows");
  AccuracyMatrix mx(tasks);
  for (const Cell& c : cells) mx.set(c.i, c.t, c.v);
  return mx;
}

AccuracyMatrix read_matrix_csv(const std::filesystem::path& path) {
  return parse_matrix_csv(read_text(path));
}

namespace {

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

}  // namespace

std::string curves_svg(const std::vector<Curve>& curves, const std::string& title) {
  constexpr double width = 640, height = 400, left = 60, right = 170, top = 40, bottom = 50;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  std::size_t points = 1;
  for (const auto& c : curves) points = std::max(points, c.values.size());
  auto px = [&](std::size_t k) {
    return points <= 1 ? left + plot_w / 2 : left + plot_w * static_cast<double>(k) / static_cast<double>(points - 1);
  };
  auto py = [&](double acc) { return top + plot_h * (1.0 - std::clamp(acc, 0.0, 1.0)); };

  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(2);
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << left << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\">"
    << escape_xml(title) << "</text>\n";
  s << "<g stroke=\"#cccccc\" stroke-width=\"1\">\n";
  for (int tick = 0; tick <= 10; tick += 2) {
    const double y = py(tick / 10.0);
    s << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << left + plot_w << "\" y2=\"" << y << "\"/>\n";
  }
  s << "</g>\n<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333333\">\n";
  for (int tick = 0; tick <= 10; tick += 2) {
    s << "<text x=\"" << left - 8 << "\" y=\"" << py(tick / 10.0) + 4 << "\" text-anchor=\"end\">"
      << tick * 10 << "</text>\n";
  }
  for (std::size_t k = 0; k < points; ++k) {
    s << "<text x=\"" << px(k) << "\" y=\"" << top + plot_h + 18 << "\" text-anchor=\"middle\">" << k + 1
      << "</text>\n";
  }
  s << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 12
    << "\" text-anchor=\"middle\">task</text>\n"
    << "<text x=\"16\" y=\"" << top + plot_h / 2 << "\" transform=\"rotate(-90 16 " << top + plot_h / 2
    << ")\" text-anchor=\"middle\">accuracy (%)</text>\n</g>\n";
  s << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << plot_w << "\" height=\"" << plot_h
    << "\" fill=\"none\" stroke=\"#333333\"/>\n";

  for (std::size_t c = 0; c < curves.size(); ++c) {
    const char* color = kPalette[c % std::size(kPalette)];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < curves[c].values.size(); ++k) {
      s << (k ? " " : "") << px(k) << ',' << py(curves[c].values[k]);
    }
    s << "\"><title>" << escape_xml(curves[c].label) << "</title></polyline>\n";
    const double ly = top + 14 + 18 * static_cast<double>(c);
    s << "<line x1=\"" << left + plot_w + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << left + plot_w + 32
      << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
      << "<text x=\"" << left + plot_w + 38 << "\" y=\"" << ly
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape_xml(curves[c].label) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void emit_report(const MetricsReport& report, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());
  write_text(out_dir / "metrics.json", to_json(report).dump(2) + "\n");
  write_text(out_dir / "matrix.csv", matrix_csv(report.matrix));
  write_text(out_dir / "curves.svg",
             curves_svg({{report.variant, report.average_curve}}, report.variant + ": average accuracy"));
}

}  // namespace cbpnet
