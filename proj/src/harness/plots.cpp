// SPDX-License-Identifier: Apache-2.0

#include "sag/harness.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

namespace sag {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct Chart {
  std::string file;
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;
  std::vector<Series> series;
  std::vector<std::pair<double, std::string>> x_ticks;  // empty: numeric ticks
};

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 160, kTop = 40, kBottom = 50;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string tick_text(double v) {
  if (v == 0.0) return "0";
  const double a = std::abs(v);
  if (a >= 1e4 || a < 1e-2) return fmt::format("{:.1e}", v);
  return fmt::format("{:.3g}", v);
}

std::pair<double, double> padded(double lo, double hi) {
  if (!(lo < hi)) {
    const double pad = lo == 0.0 ? 1.0 : 0.5 * std::abs(lo);
    return {lo - pad, hi + pad};
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

std::string render_chart(const Chart& chart) {
  auto ty = [&](double y) { return chart.log_y ? std::log10(y) : y; };
  auto usable = [&](double x, double y) {
    return std::isfinite(x) && std::isfinite(y) && (!chart.log_y || y > 0.0);
  };

  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo;
  double y_lo = x_lo, y_hi = -x_lo;
  for (const auto& s : chart.series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      x_lo = std::min(x_lo, s.x[i]);
      x_hi = std::max(x_hi, s.x[i]);
      y_lo = std::min(y_lo, ty(s.y[i]));
      y_hi = std::max(y_hi, ty(s.y[i]));
    }
  }
  if (!std::isfinite(x_lo)) x_lo = x_hi = y_lo = y_hi = 0.0;
  std::tie(x_lo, x_hi) = padded(x_lo, x_hi);
  std::tie(y_lo, y_hi) = padded(y_lo, y_hi);

  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x_lo) / (x_hi - x_lo) * pw; };
  auto py = [&](double y) { return kTop + ph - (y - y_lo) / (y_hi - y_lo) * ph; };

  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" "
      "viewBox=\"0 0 {0} {1}\" font-family=\"sans-serif\" font-size=\"11\">\n"
      "<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n",
      kWidth, kHeight);
  svg += fmt::format("<text x=\"{:.2f}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
                     kLeft + pw / 2, escape(chart.title));
  svg += fmt::format(
      "<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{2:.2f}\" y2=\"{1:.2f}\" stroke=\"black\"/>\n"
      "<line x1=\"{0:.2f}\" y1=\"{3:.2f}\" x2=\"{0:.2f}\" y2=\"{1:.2f}\" stroke=\"black\"/>\n",
      kLeft, kTop + ph, kLeft + pw, kTop);

  std::vector<std::pair<double, std::string>> xt = chart.x_ticks;
  if (xt.empty()) {
    for (int k = 0; k <= 4; ++k) {
      const double v = x_lo + (x_hi - x_lo) * k / 4.0;
      xt.emplace_back(v, tick_text(v));
    }
  }
  for (const auto& [v, label] : xt) {
    svg += fmt::format(
        "<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" stroke=\"black\"/>"
        "<text x=\"{0:.2f}\" y=\"{3:.2f}\" text-anchor=\"middle\">{4}</text>\n",
        px(v), kTop + ph, kTop + ph + 4, kTop + ph + 16, escape(label));
  }
  for (int k = 0; k <= 4; ++k) {
    const double v = y_lo + (y_hi - y_lo) * k / 4.0;
    const std::string label = chart.log_y ? "1e" + fmt::format("{:.1f}", v) : tick_text(v);
    svg += fmt::format(
        "<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{2:.2f}\" y2=\"{1:.2f}\" stroke=\"black\"/>"
        "<text x=\"{3:.2f}\" y=\"{4:.2f}\" text-anchor=\"end\">{5}</text>\n",
        kLeft - 4, py(v), kLeft, kLeft - 6, py(v) + 4, label);
  }
  svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{}</text>\n",
                     kLeft + pw / 2, kHeight - 12, escape(chart.x_label));
  svg += fmt::format(
      "<text x=\"16\" y=\"{0:.2f}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0:.2f})\">"
      "{1}</text>\n",
      kTop + ph / 2, escape(chart.y_label + (chart.log_y ? " (log10)" : "")));

  for (std::size_t k = 0; k < chart.series.size(); ++k) {
    const auto& s = chart.series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    std::string points;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      if (!points.empty()) points += ' ';
      points += fmt::format("{:.2f},{:.2f}", px(s.x[i]), py(ty(s.y[i])));
    }
    svg += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                       color, points);
    const double ly = kTop + 10 + 16 * static_cast<double>(k);
    svg += fmt::format(
        "<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{2:.2f}\" y2=\"{1:.2f}\" stroke=\"{3}\" "
        "stroke-width=\"2\"/><text x=\"{4:.2f}\" y=\"{5:.2f}\">{6}</text>\n",
        kWidth - kRight + 12, ly, kWidth - kRight + 32, color, kWidth - kRight + 36, ly + 4,
        escape(s.name));
  }
  svg += "</svg>\n";
  return svg;
}

double num(const json& v) { return v.is_number() ? v.get<double>() : std::nan(""); }

std::vector<Chart> charts_for(const ExperimentReport& report) {
  const json& sm = report.summary;
  std::vector<Chart> charts;

  if (sm.contains("loss_curves")) {
    Chart c{"loss_vs_step.svg", "Guidance loss along the sampling trajectory", "step t",
            "mean loss", true, {}, {}};
    for (const auto& curve : sm["loss_curves"]) {
      Series s{fmt::format("n = {}", curve["n"].get<int>()), {}, {}};
      for (std::size_t i = 0; i < curve["t"].size(); ++i) {
        s.x.push_back(num(curve["t"][i]));
        s.y.push_back(num(curve["mean_loss"][i]));
      }
      c.series.push_back(std::move(s));
    }
    charts.push_back(std::move(c));
  }
  if (sm.contains("by_n")) {
    Chart c{"loss_vs_n.svg", "Final guidance loss vs estimate steps", "n", "mean final loss",
            false, {}, {}};
    Series s{"mean final loss", {}, {}};
    for (const auto& g : sm["by_n"]) {
      s.x.push_back(num(g["n"]));
      s.y.push_back(num(g["mean_final_loss"]));
      c.x_ticks.emplace_back(num(g["n"]), fmt::format("{}", g["n"].get<int>()));
    }
    c.series.push_back(std::move(s));
    charts.push_back(std::move(c));
  }
  if (sm.contains("m_curve")) {
    Chart c{"m_curve.svg", "Clean-output estimation error m(n)", "n", "mean error", true, {}, {}};
    Series s{fmt::format("t = {}", sm["m_curve"]["t"].get<int>()), {}, {}};
    for (const auto& p : sm["m_curve"]["points"]) {
      s.x.push_back(num(p["n"]));
      s.y.push_back(num(p["mean_error"]));
      c.x_ticks.emplace_back(num(p["n"]), fmt::format("{}", p["n"].get<int>()));
    }
    c.series.push_back(std::move(s));
    charts.push_back(std::move(c));
  }
  if (sm.contains("by_rho")) {
    Chart c{"loss_vs_rho.svg", "Final guidance loss vs guidance strength", "rho",
            "mean final loss", true, {}, {}};
    Series s{"non-diverged runs", {}, {}};
    double i = 0;
    for (const auto& g : sm["by_rho"]) {
      s.x.push_back(i);
      s.y.push_back(num(g["mean_final_loss"]));
      c.x_ticks.emplace_back(i, fmt::format("{:g} ({}/{} div)", num(g["rho"]),
                                            g["num_diverged"].get<int>(), g["num_runs"].get<int>()));
      i += 1;
    }
    c.series.push_back(std::move(s));
    charts.push_back(std::move(c));
  }
  if (sm.contains("by_group")) {
    Chart c{"loss_by_window.svg", "Final guidance loss by window and repeats", "repeats r",
            "mean final loss", true, {}, {}};
    std::map<std::string, std::size_t> index;
    for (const auto& g : sm["by_group"]) {
      const std::string name = g["fixed_budget"].get<bool>()
                                   ? g["window"].get<std::string>() + " (fixed budget)"
                                   : g["window"].get<std::string>();
      if (!index.count(name)) {
        index[name] = c.series.size();
        c.series.push_back({name, {}, {}});
      }
      auto& s = c.series[index[name]];
      s.x.push_back(num(g["repeats"]));
      s.y.push_back(num(g["mean_final_loss"]));
    }
    charts.push_back(std::move(c));
  }
  if (sm.contains("table")) {
    Chart err{"adjoint_error.svg", "Gradient error vs taped oracle (worst over d)", "n",
              "max relative error", true, {}, {}};
    Chart mem{"adjoint_memory.svg", "Stored vectors per gradient (largest d)", "n", "count",
              false, {}, {}};
    std::map<std::string, std::map<int, double>> worst;
    std::map<std::string, std::map<int, double>> memory;
    std::vector<std::string> err_order, mem_order;
    int d_max = 0;
    for (const auto& row : sm["table"]) d_max = std::max(d_max, row["d"].get<int>());
    for (const auto& row : sm["table"]) {
      const std::string method = row["method"].get<std::string>();
      const std::string model = row["model"].get<std::string>();
      const int n = row["n"].get<int>();
      if (method != "direct_backprop") {
        const std::string name = method + " / " + model;
        if (!worst.count(name)) err_order.push_back(name);
        // Exact zeros sit at the double floor so they stay on a log axis.
        double& w = worst[name][n];
        w = std::max({w, num(row["max_rel_error"]), 1e-17});
      }
      if (row["d"].get<int>() == d_max) {
        if (method == "symplectic_euler") {
          const std::string name = "symplectic checkpoints / " + model;
          if (!memory.count(name)) mem_order.push_back(name);
          memory[name][n] = num(row["checkpoints_stored"]);
        } else if (method == "direct_backprop") {
          const std::string name = "oracle activations / " + model;
          if (!memory.count(name)) mem_order.push_back(name);
          memory[name][n] = num(row["stored_activations"]);
        }
      }
    }
    for (const auto& name : err_order) {
      Series s{name, {}, {}};
      for (const auto& [n, v] : worst[name]) {
        s.x.push_back(n);
        s.y.push_back(v);
      }
      err.series.push_back(std::move(s));
    }
    for (const auto& name : mem_order) {
      Series s{name, {}, {}};
      for (const auto& [n, v] : memory[name]) {
        s.x.push_back(n);
        s.y.push_back(v);
      }
      mem.series.push_back(std::move(s));
    }
    charts.push_back(std::move(err));
    charts.push_back(std::move(mem));
  }
  return charts;
}

}  // namespace

std::vector<SvgFile> render_plots(const ExperimentReport& report) {
  if (report.rows.empty()) {
    throw std::invalid_argument(
        fmt::format("report \"{}\" has no rows; nothing to plot", report.kind));
  }
  std::vector<SvgFile> files;
  for (const auto& chart : charts_for(report)) files.push_back({chart.file, render_chart(chart)});
  return files;
}

std::vector<fs::path> emit_plots(const ExperimentReport& report, const fs::path& out_dir) {
  const auto files = render_plots(report);
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  for (const auto& f : files) {
    const fs::path p = out_dir / f.name;
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", p.string()));
    out << f.content;
    written.push_back(p);
  }
  return written;
}

}  // namespace sag
