#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "djscc/error.hpp"
#include "djscc/experiment.hpp"

namespace djscc {

std::string format_fixed(double v) {
  if (!std::isfinite(v)) throw NumericError("cannot serialize non-finite value");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s = buf;
  if (s == "-0.000000") s = "0.000000";
  return s;
}

std::string eval_csv(const std::vector<EvalRecord>& rows) {
  std::ostringstream os;
  os << kEvalCsvHeader << '\n';
  for (const auto& r : rows) {
    os << r.schedule << ',' << r.decoder << ',' << r.channel << ',' << format_fixed(r.snr_db) << ','
       << format_fixed(r.psnr_db) << ',' << format_fixed(r.ms_ssim) << ',' << r.seed << ',' << r.snapshot << '\n';
  }
  return os.str();
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double csv_double(const std::string& s, std::size_t line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw ConfigError("csv line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

}  // namespace

std::vector<EvalRecord> parse_eval_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kEvalCsvHeader) {
    throw ConfigError("csv header mismatch: expected '" + std::string(kEvalCsvHeader) + "'");
  }
  std::vector<EvalRecord> rows;
  std::size_t n = 1;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 8) {
      throw ConfigError("csv line " + std::to_string(n) + ": expected 8 fields, got " + std::to_string(f.size()));
    }
    EvalRecord r;
    r.schedule = f[0];
    r.decoder = f[1];
    r.channel = f[2];
    r.snr_db = csv_double(f[3], n);
    r.psnr_db = csv_double(f[4], n);
    r.ms_ssim = csv_double(f[5], n);
    try {
      std::size_t used = 0;
      r.seed = std::stoull(f[6], &used);
      if (used != f[6].size()) throw std::invalid_argument("seed");
    } catch (const std::exception&) {
      throw ConfigError("csv line " + std::to_string(n) + ": bad seed '" + f[6] + "'");
    }
    r.snapshot = f[7];
    rows.push_back(r);
  }
  return rows;
}

namespace {

std::string xml_escape(const std::string& s) {
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

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series) {
  const double width = 640, height = 420, left = 70, right = 150, top = 40, bottom = 60;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ShapeError("series '" + s.name + "' has mismatched x and y lengths");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!any) {
        x0 = x1 = s.x[i];
        y0 = y1 = s.y[i];
        any = true;
      }
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (x1 == x0) x1 = x0 + 1;
  const double pad = (y1 - y0) * 0.05 + 1e-9;
  y0 -= pad;
  y1 += pad;
  const double pw = width - left - right, ph = height - top - bottom;
  auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << num(left + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">"
     << xml_escape(title) << "</text>\n";
  os << "<g stroke=\"black\">\n";
  os << "<line x1=\"" << num(left) << "\" y1=\"" << num(top + ph) << "\" x2=\"" << num(left + pw) << "\" y2=\""
     << num(top + ph) << "\"/>\n";
  os << "<line x1=\"" << num(left) << "\" y1=\"" << num(top) << "\" x2=\"" << num(left) << "\" y2=\""
     << num(top + ph) << "\"/>\n";
  os << "</g>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5.0, yv = y0 + (y1 - y0) * i / 5.0;
    os << "<line x1=\"" << num(sx(xv)) << "\" y1=\"" << num(top + ph) << "\" x2=\"" << num(sx(xv)) << "\" y2=\""
       << num(top + ph + 5) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num(sx(xv)) << "\" y=\"" << num(top + ph + 18) << "\" text-anchor=\"middle\">"
       << tick_label(xv) << "</text>\n";
    os << "<line x1=\"" << num(left - 5) << "\" y1=\"" << num(sy(yv)) << "\" x2=\"" << num(left) << "\" y2=\""
       << num(sy(yv)) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num(left - 8) << "\" y=\"" << num(sy(yv) + 4) << "\" text-anchor=\"end\">"
       << tick_label(yv) << "</text>\n";
  }
  os << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(height - 16) << "\" text-anchor=\"middle\">"
     << xml_escape(x_label) << "</text>\n";
  os << "<text x=\"18\" y=\"" << num(top + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
     << num(top + ph / 2) << ")\">" << xml_escape(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % (sizeof kPalette / sizeof kPalette[0])];
    os << "<polyline class=\"series\" data-name=\"" << xml_escape(s.name) << "\" fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) os << (i ? " " : "") << num(sx(s.x[i])) << ',' << num(sy(s.y[i]));
    os << "\"/>\n";
    const double ly = top + 16.0 * static_cast<double>(k);
    os << "<line x1=\"" << num(left + pw + 12) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(left + pw + 32)
       << "\" y2=\"" << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << num(left + pw + 38) << "\" y=\"" << num(ly + 4) << "\">" << xml_escape(s.name)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace djscc
