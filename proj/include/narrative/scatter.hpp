/*
 * Copyright (c) 2026, The narrative-pipeline authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "common.hpp"
#include "density.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <string>

/**
 * @file scatter.hpp
 *
 * @brief 2-D cluster scatter plot as a standalone SVG document.
 */

namespace narrative::scatter {

inline constexpr std::string_view kNoiseColor = "#b0b0b0";

inline std::string_view cluster_color(int cluster) {
    static constexpr std::array<std::string_view, 20> palette{
        "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#bcbd22", "#17becf", "#393b79",
        "#637939", "#8c6d31", "#843c39", "#7b4173", "#3182bd", "#e6550d", "#31a354", "#756bb1", "#636363", "#9c9ede"};
    return cluster < 0 ? kNoiseColor : palette[static_cast<std::size_t>(cluster) % palette.size()];
}

inline std::string xml_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        case '\'': out += "&apos;"; break;
        default: out += c;
        }
    }
    return out;
}

/// Cuts to at most `max_chars` code points, marking the cut with "...".
inline std::string truncate_label(std::string_view s, std::size_t max_chars = 48) {
    std::size_t chars = 0, i = 0;
    while (i < s.size()) {
        if (chars == max_chars) return std::string(s.substr(0, i)) + "...";
        auto b = static_cast<unsigned char>(s[i]);
        i += b < 0x80 ? 1 : (b >> 5) == 0x6 ? 2 : (b >> 4) == 0xE ? 3 : 4;
        ++chars;
    }
    return std::string(s);
}

struct ScatterOptions {
    double width = 900;
    double height = 700;
    double legend_width = 380;
    double radius = 2.0;
    std::size_t label_chars = 48;
};

/**
 * One circle per row of `layout` (its first two columns), colored by cluster;
 * noise is gray. `labels` maps cluster id to legend text.
 */
inline std::string render_svg(const Matrix& layout, const density::ClusterAssignment& assignment,
                              const std::map<int, std::string>& labels, const ScatterOptions& opts = {}) {
    if (layout.cols() < 2) throw InvalidArgument("scatter needs a 2-D layout");
    if (layout.rows() != assignment.labels.size()) throw InvalidArgument("layout and assignment must be aligned");
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (layout.rows() > 0) {
        x0 = x1 = layout(0, 0);
        y0 = y1 = layout(0, 1);
        for (std::size_t i = 0; i < layout.rows(); ++i) {
            x0 = std::min(x0, layout(i, 0));
            x1 = std::max(x1, layout(i, 0));
            y0 = std::min(y0, layout(i, 1));
            y1 = std::max(y1, layout(i, 1));
        }
    }
    const double pad = 20, plot_w = opts.width - 2 * pad, plot_h = opts.height - 2 * pad;
    const double sx = x1 > x0 ? plot_w / (x1 - x0) : 0.0, sy = y1 > y0 ? plot_h / (y1 - y0) : 0.0;
    auto num = [](double v) {
        char buf[32];
        auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 2);
        return std::string(buf, p);
    };

    const double total_w = opts.width + opts.legend_width;
    std::string svg = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                      num(total_w) + "\" height=\"" + num(opts.height) + "\" viewBox=\"0 0 " + num(total_w) + " " +
                      num(opts.height) + "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<g id=\"points\">\n";
    // Noise first so clusters draw on top.
    for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t i = 0; i < layout.rows(); ++i) {
            const int c = assignment.labels[i];
            if ((c < 0) != (pass == 0)) continue;
            const double x = sx > 0 ? pad + (layout(i, 0) - x0) * sx : opts.width / 2;
            const double y = sy > 0 ? opts.height - pad - (layout(i, 1) - y0) * sy : opts.height / 2;
            svg += "<circle class=\"pt\" cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"" + num(opts.radius) +
                   "\" fill=\"" + std::string(cluster_color(c)) + "\"/>\n";
        }
    }
    svg += "</g>\n<g id=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n";
    double ly = pad + 10;
    auto entry = [&](std::string_view color, const std::string& text) {
        svg += "<rect x=\"" + num(opts.width + 10) + "\" y=\"" + num(ly - 9) + "\" width=\"10\" height=\"10\" fill=\"" +
               std::string(color) + "\"/><text x=\"" + num(opts.width + 26) + "\" y=\"" + num(ly) + "\">" +
               xml_escape(text) + "</text>\n";
        ly += 16;
    };
    for (std::size_t c = 0; c < assignment.n_clusters; ++c) {
        const int id = static_cast<int>(c);
        auto it = labels.find(id);
        const std::string text = it == labels.end() ? "cluster " + std::to_string(id) : it->second;
        entry(cluster_color(id), std::to_string(id) + ": " + truncate_label(text, opts.label_chars));
    }
    if (std::count(assignment.labels.begin(), assignment.labels.end(), density::kNoise) > 0) entry(kNoiseColor, "noise");
    svg += "</g>\n</svg>\n";
    return svg;
}

} // namespace narrative::scatter
