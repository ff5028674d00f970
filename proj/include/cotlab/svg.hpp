#pragma once

// Tiny SVG writer for the static report figures. Everything is emitted in
// document order with fixed three-decimal coordinate formatting, so identical
// draw calls yield identical bytes — figure determinism reduces to data
// determinism. Only the handful of primitives the charts need are wrapped.

#include <span>
#include <string>
#include <string_view>

namespace cotlab::svg {

std::string fmt(double v);                 // fixed "%.3f" with trailing zeros trimmed
std::string escape(std::string_view text); // & < > " ' -> entities

// two-stop linear color ramp, t in [0,1] clamped, returns "#rrggbb"
std::string ramp(double t, const std::string& lo_hex, const std::string& hi_hex);

class Canvas {
public:
    Canvas(double width, double height);

    void rect(double x, double y, double w, double h, const std::string& fill,
              const std::string& extra = "");
    void line(double x1, double y1, double x2, double y2, const std::string& stroke,
              double width = 1.0);
    void polyline(std::span<const double> xs, std::span<const double> ys,
                  const std::string& stroke, double width = 1.5);
    void circle(double cx, double cy, double r, const std::string& fill,
                const std::string& extra = "");
    // anchor: "start" | "middle" | "end"
    void text(double x, double y, std::string_view s, double size = 11.0,
              const std::string& anchor = "start", const std::string& fill = "#333");
    // children of the last emitted element render as hover tooltips
    void tooltip(std::string_view s);

    double width() const { return width_; }
    double height() const { return height_; }

    std::string str() const;  // complete <svg> element

private:
    double width_, height_;
    std::string body_;
    std::string last_tag_;
    bool open_ = false;  // last element still accepts a <title> child
    void close_pending();
    void begin(const char* tag);
};

} // namespace cotlab::svg
