#pragma once

// Line-oriented INI reader/writer for experiment configs. The dialect is
// deliberately small: `[section]` headers, `key = value` entries, full-line
// comments starting with '#' or ';', no quoting or escapes. Sections and keys
// keep file order so a parse/serialize round-trip is byte-stable, duplicate
// sections or keys are rejected (they are always config mistakes here), and
// typed getters do strict full-string conversions so a typo'd value fails
// loudly instead of truncating.

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cotlab::inicfg {

struct Section {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;  // file order

    const std::string* find(const std::string& key) const;
    bool has(const std::string& key) const { return find(key) != nullptr; }
};

struct IniDoc {
    std::vector<Section> sections;  // file order

    const Section* find(const std::string& name) const;
    Section& get_or_add(const std::string& name);
    // insert or overwrite; used when materializing defaults
    void set(const std::string& section, const std::string& key, const std::string& value);
    bool has(const std::string& section, const std::string& key) const;

    std::string serialize() const;
};

// throws std::runtime_error with "config line N: ..." on malformed input
IniDoc parse_ini(const std::string& text);

// Typed lookups. The default is returned when the section or key is absent;
// present-but-malformed values throw std::runtime_error naming section.key.
std::string get_str(const IniDoc& doc, const std::string& sec, const std::string& key,
                    const std::string& def);
long long get_int(const IniDoc& doc, const std::string& sec, const std::string& key,
                  long long def);
double get_double(const IniDoc& doc, const std::string& sec, const std::string& key, double def);
bool get_bool(const IniDoc& doc, const std::string& sec, const std::string& key, bool def);
// whitespace- or comma-separated
std::vector<int> get_int_list(const IniDoc& doc, const std::string& sec, const std::string& key,
                              std::vector<int> def);
std::vector<std::string> get_str_list(const IniDoc& doc, const std::string& sec,
                                      const std::string& key, std::vector<std::string> def);

// rejects keys outside `allowed` (typo guard); absent sections pass
void require_known(const IniDoc& doc, const std::string& sec,
                   std::span<const char* const> allowed);

std::string format_double(double v);  // shortest round-trip decimal, for serialization

} // namespace cotlab::inicfg
