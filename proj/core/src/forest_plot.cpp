#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "cdiff/error.hpp"
#include "cdiff/pipeline.hpp"

namespace cdiff {

using nlohmann::json;

namespace {

constexpr double kPanelWidth = 300.0;
constexpr double kPanelHeight = 260.0;
constexpr double kLeft = 56.0;  // room for y tick labels
constexpr double kTop = 40.0;
constexpr double kGap = 24.0;
constexpr double kBottom = 56.0;

struct PanelDef {
    const char* kind;
    const char* title;
};

constexpr PanelDef kPanels[] = {
    {"placebo", "Placebo tests"}, {"main", "Main estimates"}, {"bias_corrected", "Bias-corrected estimates"}};

std::string num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick_label(double v)
{
    if (std::abs(v) < 1e-12) v = 0.0;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string escape(const std::string& s)
{
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

double nice_step(double range, int target)
{
    const double raw = range / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
        if (m * mag >= raw) return m * mag;
    return 10.0 * mag;
}

struct Cell {
    bool present = false;
    bool failed = false;
    double point = 0.0, lo = 0.0, hi = 0.0;
    std::string error;
};

} // namespace

std::string forest_plot_svg(const json& report)
{
    if (!report.is_object() || !report.contains("estimates") || !report.at("estimates").is_array())
        throw DataError("forest plot: report has no estimates array");

    std::vector<std::string> labels;
    if (report.contains("control_sets"))
        for (const auto& s : report.at("control_sets")) labels.push_back(s.at("label").get<std::string>());
    std::size_t usable = 0;
    for (const auto& r : report.at("estimates")) {
        const std::string kind = r.value("kind", "");
        if (std::none_of(std::begin(kPanels), std::end(kPanels), [&](const PanelDef& p) { return kind == p.kind; }))
            continue;
        ++usable;
        const std::string label = r.value("label", "");
        if (std::find(labels.begin(), labels.end(), label) == labels.end()) labels.push_back(label);
    }
    if (usable == 0) throw DataError("forest plot: report contains no estimate records");

    const std::size_t n_panels = std::size(kPanels);
    std::vector<std::vector<Cell>> cells(n_panels, std::vector<Cell>(labels.size()));
    for (const auto& r : report.at("estimates")) {
        const std::string kind = r.value("kind", "");
        const std::string label = r.value("label", "");
        for (std::size_t p = 0; p < n_panels; ++p) {
            if (kind != kPanels[p].kind) continue;
            const auto pos = std::find(labels.begin(), labels.end(), label) - labels.begin();
            Cell& c = cells[p][static_cast<std::size_t>(pos)];
            c.present = true;
            if (r.value("status", "ok") != "ok") {
                c.failed = true;
                c.error = r.contains("error") ? r.at("error").value("kind", "error") : "error";
            } else {
                c.point = r.at("point").get<double>();
                c.lo = r.at("ci_low").get<double>();
                c.hi = r.at("ci_high").get<double>();
            }
        }
    }

    const double width = kLeft + n_panels * kPanelWidth + (n_panels - 1) * kGap + 16.0;
    const double height = kTop + kPanelHeight + kBottom;
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
        << "\" viewBox=\"0 0 " << num(width) << ' ' << num(height)
        << "\" font-family=\"Helvetica, Arial, sans-serif\" font-size=\"11\">\n";
    svg << "<rect x=\"0\" y=\"0\" width=\"" << num(width) << "\" height=\"" << num(height) << "\" fill=\"white\"/>\n";

    for (std::size_t p = 0; p < n_panels; ++p) {
        const double x0 = kLeft + p * (kPanelWidth + kGap);
        const double y0 = kTop;
        double lo = 0.0, hi = 0.0;
        for (const Cell& c : cells[p]) {
            if (!c.present || c.failed) continue;
            lo = std::min({lo, c.lo, c.point});
            hi = std::max({hi, c.hi, c.point});
        }
        if (!(hi - lo > 0.0) || !std::isfinite(hi - lo)) {
            lo = -1.0;
            hi = 1.0;
        }
        const double step = nice_step(hi - lo, 5);
        lo = std::floor(lo / step) * step;
        hi = std::ceil(hi / step) * step;
        auto ymap = [&](double v) { return y0 + kPanelHeight * (hi - v) / (hi - lo); };
        const double slot = kPanelWidth / static_cast<double>(std::max<std::size_t>(labels.size(), 1));

        svg << "<g class=\"panel\" data-kind=\"" << kPanels[p].kind << "\">\n";
        svg << "  <text class=\"title\" x=\"" << num(x0 + kPanelWidth / 2) << "\" y=\"" << num(y0 - 14)
            << "\" text-anchor=\"middle\" font-size=\"13\">" << kPanels[p].title << "</text>\n";
        svg << "  <rect class=\"frame\" x=\"" << num(x0) << "\" y=\"" << num(y0) << "\" width=\"" << num(kPanelWidth)
            << "\" height=\"" << num(kPanelHeight) << "\" fill=\"none\" stroke=\"#444\"/>\n";
        const int n_ticks = static_cast<int>(std::llround((hi - lo) / step));
        for (int t = 0; t <= n_ticks; ++t) {
            const double v = lo + t * step;
            const double y = ymap(v);
            svg << "  <line class=\"grid\" x1=\"" << num(x0) << "\" y1=\"" << num(y) << "\" x2=\"" << num(x0 + kPanelWidth)
                << "\" y2=\"" << num(y) << "\" stroke=\"#e4e4e4\"/>\n";
            svg << "  <text class=\"tick\" x=\"" << num(x0 - 4) << "\" y=\"" << num(y + 4)
                << "\" text-anchor=\"end\">" << tick_label(v) << "</text>\n";
        }
        svg << "  <line class=\"zero\" x1=\"" << num(x0) << "\" y1=\"" << num(ymap(0.0)) << "\" x2=\""
            << num(x0 + kPanelWidth) << "\" y2=\"" << num(ymap(0.0)) << "\" stroke=\"#b22222\" stroke-dasharray=\"4 3\"/>\n";

        for (std::size_t k = 0; k < labels.size(); ++k) {
            const double cx = x0 + slot * (k + 0.5);
            const Cell& c = cells[p][k];
            const std::string label = escape(labels[k]);
            if (c.present && c.failed) {
                svg << "  <g class=\"failed\" data-label=\"" << label << "\"><text x=\"" << num(cx) << "\" y=\""
                    << num(y0 + kPanelHeight / 2) << "\" text-anchor=\"middle\" fill=\"#888\" font-style=\"italic\">"
                    << "failed (" << escape(c.error) << ")</text></g>\n";
            } else if (c.present) {
                svg << "  <g class=\"estimate\" data-label=\"" << label << "\">"
                    << "<line class=\"whisker\" x1=\"" << num(cx) << "\" y1=\"" << num(ymap(c.lo)) << "\" x2=\""
                    << num(cx) << "\" y2=\"" << num(ymap(c.hi)) << "\" stroke=\"black\" stroke-width=\"1.5\"/>";
                for (double v : {c.lo, c.hi}) {
                    svg << "<line class=\"cap\" x1=\"" << num(cx - 5) << "\" y1=\"" << num(ymap(v)) << "\" x2=\""
                        << num(cx + 5) << "\" y2=\"" << num(ymap(v)) << "\" stroke=\"black\"/>";
                }
                svg << "<circle class=\"marker\" cx=\"" << num(cx) << "\" cy=\"" << num(ymap(c.point))
                    << "\" r=\"4\" fill=\"black\"/></g>\n";
            }
            svg << "  <text class=\"slot\" x=\"" << num(cx) << "\" y=\"" << num(y0 + kPanelHeight + 18)
                << "\" text-anchor=\"middle\">" << label << "</text>\n";
        }
        svg << "</g>\n";
    }
    svg << "<text x=\"" << num(width / 2) << "\" y=\"" << num(height - 14)
        << "\" text-anchor=\"middle\">Control set (bars: 95% confidence intervals)</text>\n";
    svg << "</svg>\n";
    return svg.str();
}

void emit_forest_plot(const json& report, const std::string& path) { write_text(path, forest_plot_svg(report)); }

} // namespace cdiff
