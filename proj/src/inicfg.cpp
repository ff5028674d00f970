#include "cotlab/inicfg.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace cotlab::inicfg {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void fail_line(int line_no, const std::string& what) {
    throw std::runtime_error("config line " + std::to_string(line_no) + ": " + what);
}

[[noreturn]] void fail_value(const std::string& sec, const std::string& key,
                             const std::string& what) {
    throw std::runtime_error("config value " + sec + "." + key + ": " + what);
}

const std::string* lookup(const IniDoc& doc, const std::string& sec, const std::string& key) {
    const Section* s = doc.find(sec);
    return s ? s->find(key) : nullptr;
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::string item;
    for (char c : value) {
        if (c == ' ' || c == '\t' || c == ',') {
            if (!item.empty()) out.push_back(std::move(item)), item.clear();
        } else {
            item += c;
        }
    }
    if (!item.empty()) out.push_back(std::move(item));
    return out;
}

long long parse_int_strict(const std::string& sec, const std::string& key, const std::string& v) {
    long long out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size())
        fail_value(sec, key, "expected an integer, got \"" + v + "\"");
    return out;
}

double parse_double_strict(const std::string& sec, const std::string& key, const std::string& v) {
    if (v.empty()) fail_value(sec, key, "expected a number, got an empty value");
    char* end = nullptr;
    const double out = std::strtod(v.c_str(), &end);
    if (end != v.c_str() + v.size())
        fail_value(sec, key, "expected a number, got \"" + v + "\"");
    return out;
}

} // namespace

const std::string* Section::find(const std::string& key) const {
    for (const auto& [k, v] : entries)
        if (k == key) return &v;
    return nullptr;
}

const Section* IniDoc::find(const std::string& name) const {
    for (const auto& s : sections)
        if (s.name == name) return &s;
    return nullptr;
}

Section& IniDoc::get_or_add(const std::string& name) {
    for (auto& s : sections)
        if (s.name == name) return s;
    sections.push_back(Section{name, {}});
    return sections.back();
}

void IniDoc::set(const std::string& section, const std::string& key, const std::string& value) {
    Section& s = get_or_add(section);
    for (auto& [k, v] : s.entries)
        if (k == key) {
            v = value;
            return;
        }
    s.entries.emplace_back(key, value);
}

bool IniDoc::has(const std::string& section, const std::string& key) const {
    return lookup(*this, section, key) != nullptr;
}

std::string IniDoc::serialize() const {
    std::string out;
    bool first = true;
    for (const auto& s : sections) {
        if (!first) out += "\n";
        first = false;
        out += "[" + s.name + "]\n";
        for (const auto& [k, v] : s.entries) out += k + " = " + v + "\n";
    }
    return out;
}

IniDoc parse_ini(const std::string& text) {
    IniDoc doc;
    Section* cur = nullptr;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail_line(line_no, "unterminated section header");
            const std::string name = trim(line.substr(1, line.size() - 2));
            if (name.empty()) fail_line(line_no, "empty section name");
            if (doc.find(name)) fail_line(line_no, "duplicate section [" + name + "]");
            doc.sections.push_back(Section{name, {}});
            cur = &doc.sections.back();
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail_line(line_no, "expected `key = value`: " + line);
        if (!cur) fail_line(line_no, "entry before any [section]");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) fail_line(line_no, "empty key");
        if (cur->find(key))
            fail_line(line_no, "duplicate key " + cur->name + "." + key);
        cur->entries.emplace_back(key, value);
    }
    return doc;
}

std::string get_str(const IniDoc& doc, const std::string& sec, const std::string& key,
                    const std::string& def) {
    const std::string* v = lookup(doc, sec, key);
    return v ? *v : def;
}

long long get_int(const IniDoc& doc, const std::string& sec, const std::string& key,
                  long long def) {
    const std::string* v = lookup(doc, sec, key);
    return v ? parse_int_strict(sec, key, *v) : def;
}

double get_double(const IniDoc& doc, const std::string& sec, const std::string& key, double def) {
    const std::string* v = lookup(doc, sec, key);
    return v ? parse_double_strict(sec, key, *v) : def;
}

bool get_bool(const IniDoc& doc, const std::string& sec, const std::string& key, bool def) {
    const std::string* v = lookup(doc, sec, key);
    if (!v) return def;
    if (*v == "true" || *v == "yes" || *v == "on" || *v == "1") return true;
    if (*v == "false" || *v == "no" || *v == "off" || *v == "0") return false;
    fail_value(sec, key, "expected a boolean, got \"" + *v + "\"");
}

std::vector<int> get_int_list(const IniDoc& doc, const std::string& sec, const std::string& key,
                              std::vector<int> def) {
    const std::string* v = lookup(doc, sec, key);
    if (!v) return def;
    std::vector<int> out;
    for (const auto& item : split_list(*v))
        out.push_back(static_cast<int>(parse_int_strict(sec, key, item)));
    return out;
}

std::vector<std::string> get_str_list(const IniDoc& doc, const std::string& sec,
                                      const std::string& key, std::vector<std::string> def) {
    const std::string* v = lookup(doc, sec, key);
    return v ? split_list(*v) : def;
}

void require_known(const IniDoc& doc, const std::string& sec,
                   std::span<const char* const> allowed) {
    const Section* s = doc.find(sec);
    if (!s) return;
    std::string strays;
    for (const auto& [k, v] : s->entries) {
        if (std::find(allowed.begin(), allowed.end(), std::string_view(k)) == allowed.end())
            strays += (strays.empty() ? "" : ", ") + k;
    }
    if (!strays.empty())
        throw std::runtime_error("unknown key(s) in [" + sec + "]: " + strays);
}

std::string format_double(double v) {
    // shortest decimal that parses back to the same double
    std::string best;
    for (int prec = 1; prec <= 17 && best.empty(); ++prec) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) best = buf;
    }
    if (best.empty()) return std::to_string(v);
    if (best.find('e') == std::string::npos) return best;
    // %g switched to scientific; prefer plain decimal when it is no longer
    for (int prec = 0; prec <= 17; ++prec) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.*f", prec, v);
        std::string fixed = buf;
        if (fixed.find('.') != std::string::npos) {
            fixed.erase(fixed.find_last_not_of('0') + 1);
            if (fixed.back() == '.') fixed.pop_back();
        }
        if (fixed.size() > best.size()) break;
        if (std::strtod(fixed.c_str(), nullptr) == v) return fixed;
    }
    return best;
}

} // namespace cotlab::inicfg
