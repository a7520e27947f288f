#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "asynclab/dynamics.hpp"
#include "asynclab/error.hpp"
#include "asynclab/experiments.hpp"

namespace asynclab {

namespace svg {

inline constexpr double kWidth = 720, kHeight = 460;
inline constexpr double kLeft = 70, kRight = 150, kTop = 30, kBottom = 50;
inline constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                           "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22"};

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline const char* colour(std::size_t i) { return kPalette[i % std::size(kPalette)]; }

/// Linear or log10 mapping of a data interval onto a pixel interval.
struct Axis {
  double lo, hi;
  double px_lo, px_hi;
  bool log = false;

  double operator()(double v) const {
    const double a = log ? std::log10(lo) : lo;
    const double b = log ? std::log10(hi) : hi;
    const double x = log ? std::log10(v) : v;
    const double f = b > a ? (x - a) / (b - a) : 0.5;
    return px_lo + f * (px_hi - px_lo);
  }

  std::vector<double> ticks() const {
    std::vector<double> out;
    if (log) {
      for (double e = std::floor(std::log10(lo)); e <= std::ceil(std::log10(hi)); ++e) {
        const double v = std::pow(10.0, e);
        if (v >= lo * (1 - 1e-12) && v <= hi * (1 + 1e-12)) out.push_back(v);
      }
      return out;
    }
    const double span = hi - lo;
    if (!(span > 0)) return {lo};
    const double raw = span / 5;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
      if (m * mag >= raw) {
        step = m * mag;
        break;
      }
    }
    for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * step; v += step) out.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
    return out;
  }
};

class Canvas {
 public:
  Canvas(Axis x, Axis y, const std::string& xlabel, const std::string& ylabel) : x_(x), y_(y) {
    os_ << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kWidth) << "\" height=\"" << num(kHeight)
        << "\" viewBox=\"0 0 " << num(kWidth) << ' ' << num(kHeight) << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
    os_ << "<rect x=\"" << num(x0) << "\" y=\"" << num(y1) << "\" width=\"" << num(x1 - x0) << "\" height=\""
        << num(y0 - y1) << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (double t : x_.ticks()) {
      const double px = x_(t);
      os_ << "<line x1=\"" << num(px) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(px) << "\" y2=\"" << num(y0 + 5)
          << "\" stroke=\"black\"/>\n<text x=\"" << num(px) << "\" y=\"" << num(y0 + 18)
          << "\" text-anchor=\"middle\">" << label(t) << "</text>\n";
    }
    for (double t : y_.ticks()) {
      const double py = y_(t);
      os_ << "<line x1=\"" << num(x0 - 5) << "\" y1=\"" << num(py) << "\" x2=\"" << num(x0) << "\" y2=\"" << num(py)
          << "\" stroke=\"black\"/>\n<text x=\"" << num(x0 - 8) << "\" y=\"" << num(py + 4)
          << "\" text-anchor=\"end\">" << label(t) << "</text>\n";
    }
    os_ << "<text x=\"" << num((x0 + x1) / 2) << "\" y=\"" << num(kHeight - 12) << "\" text-anchor=\"middle\">"
        << xlabel << "</text>\n";
    os_ << "<text transform=\"translate(16 " << num((y0 + y1) / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
        << ylabel << "</text>\n";
  }

  void band(const std::vector<double>& xs, const std::vector<double>& lo, const std::vector<double>& hi,
            const char* fill) {
    os_ << "<polygon fill=\"" << fill << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) os_ << num(x_(xs[i])) << ',' << num(y_(hi[i])) << ' ';
    for (std::size_t i = xs.size(); i-- > 0;) os_ << num(x_(xs[i])) << ',' << num(y_(lo[i])) << ' ';
    os_ << "\"/>\n";
  }

  void line(const std::vector<double>& xs, const std::vector<double>& ys, const char* stroke) {
    os_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) os_ << num(x_(xs[i])) << ',' << num(y_(ys[i])) << ' ';
    os_ << "\"/>\n";
  }

  void marker(double x, double y, const char* fill) {
    os_ << "<circle cx=\"" << num(x_(x)) << "\" cy=\"" << num(y_(y)) << "\" r=\"4\" fill=\"" << fill << "\"/>\n";
  }

  void legend(std::size_t slot, const std::string& text, const char* stroke) {
    const double x = kWidth - kRight + 15, y = kTop + 10 + 18 * slot;
    os_ << "<line x1=\"" << num(x) << "\" y1=\"" << num(y) << "\" x2=\"" << num(x + 20) << "\" y2=\"" << num(y)
        << "\" stroke=\"" << stroke << "\" stroke-width=\"2\"/>\n<text x=\"" << num(x + 26) << "\" y=\""
        << num(y + 4) << "\">" << text << "</text>\n";
  }

  std::string finish() {
    os_ << "</svg>\n";
    return os_.str();
  }

  static Axis horizontal(double lo, double hi) { return {lo, hi, kLeft, kWidth - kRight}; }
  static Axis vertical(double lo, double hi, bool log) { return {lo, hi, kHeight - kBottom, kTop, log}; }

 private:
  Axis x_, y_;
  std::ostringstream os_;
};

}  // namespace svg

/// Mean error against τ, one curve per μ with a 95% band; a curve with a
/// single completed cell is drawn as a marker without a band. The error axis
/// is logarithmic.
inline std::string render_svg(const TradeoffCurve& curve) {
  struct Series {
    double mu;
    std::vector<double> x, y, lo, hi;
  };
  std::vector<Series> series;
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (std::size_t m = 0; m < curve.mus.size(); ++m) {
    Series s{curve.mus[m], {}, {}, {}, {}};
    for (std::size_t t = 0; t < curve.taus.size(); ++t) {
      const auto& c = curve.cell(m, t);
      if (!c.completed || !(c.mean_err > 0)) continue;
      const double half = std::isnan(c.ci_half) ? 0.0 : c.ci_half;
      s.x.push_back(c.tau);
      s.y.push_back(c.mean_err);
      s.hi.push_back(c.mean_err + half);
      s.lo.push_back(std::max(c.mean_err - half, c.mean_err * 0.5));
      xmin = std::min(xmin, c.tau);
      xmax = std::max(xmax, c.tau);
      ymin = std::min(ymin, s.lo.back());
      ymax = std::max(ymax, s.hi.back());
    }
    if (!s.x.empty()) series.push_back(std::move(s));
  }
  if (series.empty()) throw Error(ErrorCode::kInvalidArgument, "nothing to plot");
  if (xmax == xmin) {
    xmin -= 1;
    xmax += 1;
  }
  ymin = std::pow(10.0, std::floor(std::log10(ymin)));
  ymax = std::pow(10.0, std::ceil(std::log10(ymax)));
  svg::Canvas canvas(svg::Canvas::horizontal(xmin, xmax), svg::Canvas::vertical(ymin, ymax, true), "delay tau",
                     "mean final error 1 - a_K");
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    if (s.x.size() == 1) {
      canvas.marker(s.x[0], s.y[0], svg::colour(i));
    } else {
      canvas.band(s.x, s.lo, s.hi, svg::colour(i));
      canvas.line(s.x, s.y, svg::colour(i));
    }
    canvas.legend(i, "mu=" + svg::label(s.mu), svg::colour(i));
  }
  return canvas.finish();
}

/// a_i = (h_i)² against t = kη, one curve per coordinate.
inline std::string render_svg(const Trajectory& traj) {
  if (traj.size() == 0) throw Error(ErrorCode::kInvalidArgument, "nothing to plot");
  const double eta = traj.config.eta > 0 ? traj.config.eta : 1.0;
  std::vector<double> t;
  for (auto k : traj.steps) t.push_back(k * eta);
  double tmax = t.back() > 0 ? t.back() : 1.0;
  svg::Canvas canvas(svg::Canvas::horizontal(0.0, tmax), svg::Canvas::vertical(0.0, 1.0, false),
                     traj.config.eta > 0 ? "time t = k eta" : "step k", "a_i = (h_i)^2");
  for (int i = 0; i < traj.dim; ++i) {
    std::vector<double> y;
    for (std::size_t r = 0; r < traj.size(); ++r) y.push_back(std::min(1.0, traj.coordinate_sq(r, i)));
    if (t.size() == 1) {
      canvas.marker(t[0], y[0], svg::colour(i));
    } else {
      canvas.line(t, y, svg::colour(i));
    }
    canvas.legend(i, "a" + std::to_string(i + 1), svg::colour(i));
  }
  return canvas.finish();
}

/// Writes render_svg(data) to path. Throws IoFailure if the file cannot be written.
template <class Data>
void emit_plot(const Data& data, const std::string& path) {
  const std::string text = render_svg(data);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::kIoFailure, "cannot open " + path);
  os << text;
  os.flush();
  if (!os) throw Error(ErrorCode::kIoFailure, "write failed: " + path);
}

}  // namespace asynclab
