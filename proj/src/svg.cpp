#include "cotlab/svg.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

namespace cotlab::svg {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    std::string s = buf;
    if (s.find('.') != std::string::npos) {
        while (s.back() == '0') s.pop_back();
        if (s.back() == '.') s.pop_back();
    }
    if (s == "-0") s = "0";
    return s;
}

std::string escape(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
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

namespace {

int hex_nibble(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw std::invalid_argument("bad hex color digit");
}

void parse_hex(const std::string& hex, int rgb[3]) {
    if (hex.size() != 7 || hex[0] != '#')
        throw std::invalid_argument("expected #rrggbb, got \"" + hex + "\"");
    for (int i = 0; i < 3; ++i)
        rgb[i] = hex_nibble(hex[1 + 2 * i]) * 16 + hex_nibble(hex[2 + 2 * i]);
}

} // namespace

std::string ramp(double t, const std::string& lo_hex, const std::string& hi_hex) {
    t = std::clamp(t, 0.0, 1.0);
    int lo[3], hi[3];
    parse_hex(lo_hex, lo);
    parse_hex(hi_hex, hi);
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x",
                  static_cast<int>(lo[0] + (hi[0] - lo[0]) * t + 0.5),
                  static_cast<int>(lo[1] + (hi[1] - lo[1]) * t + 0.5),
                  static_cast<int>(lo[2] + (hi[2] - lo[2]) * t + 0.5));
    return buf;
}

Canvas::Canvas(double width, double height) : width_(width), height_(height) {}

void Canvas::close_pending() {
    if (open_) {
        body_ += "/>\n";
        open_ = false;
    }
}

void Canvas::begin(const char* tag) {
    close_pending();
    last_tag_ = tag;
    open_ = true;
}

void Canvas::rect(double x, double y, double w, double h, const std::string& fill,
                  const std::string& extra) {
    begin("rect");
    body_ += "<rect x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" width=\"" + fmt(w) +
             "\" height=\"" + fmt(h) + "\" fill=\"" + fill + "\"";
    if (!extra.empty()) body_ += " " + extra;
}

void Canvas::line(double x1, double y1, double x2, double y2, const std::string& stroke,
                  double width) {
    begin("line");
    body_ += "<line x1=\"" + fmt(x1) + "\" y1=\"" + fmt(y1) + "\" x2=\"" + fmt(x2) + "\" y2=\"" +
             fmt(y2) + "\" stroke=\"" + stroke + "\" stroke-width=\"" + fmt(width) + "\"";
}

void Canvas::polyline(std::span<const double> xs, std::span<const double> ys,
                      const std::string& stroke, double width) {
    if (xs.size() != ys.size()) throw std::invalid_argument("polyline xs/ys length mismatch");
    begin("polyline");
    std::string pts;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) pts += " ";
        pts += fmt(xs[i]) + "," + fmt(ys[i]);
    }
    body_ += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + stroke +
             "\" stroke-width=\"" + fmt(width) + "\"";
}

void Canvas::circle(double cx, double cy, double r, const std::string& fill,
                    const std::string& extra) {
    begin("circle");
    body_ += "<circle cx=\"" + fmt(cx) + "\" cy=\"" + fmt(cy) + "\" r=\"" + fmt(r) + "\" fill=\"" +
             fill + "\"";
    if (!extra.empty()) body_ += " " + extra;
}

void Canvas::text(double x, double y, std::string_view s, double size, const std::string& anchor,
                  const std::string& fill) {
    close_pending();
    body_ += "<text x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" font-size=\"" + fmt(size) +
             "\" text-anchor=\"" + anchor + "\" fill=\"" + fill +
             "\" font-family=\"monospace\">" + escape(s) + "</text>\n";
}

void Canvas::tooltip(std::string_view s) {
    if (!open_) throw std::logic_error("tooltip() needs a preceding shape element");
    body_ += "><title>" + escape(s) + "</title></" + last_tag_ + ">\n";
    open_ = false;
}

std::string Canvas::str() const {
    std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " + fmt(width_) +
                      " " + fmt(height_) + "\" width=\"" + fmt(width_) + "\" height=\"" +
                      fmt(height_) + "\">\n";
    out += body_;
    if (open_) out += "/>\n";
    out += "</svg>\n";
    return out;
}

} // namespace cotlab::svg
