#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace kdbench {

// Line-oriented key/value config format. Hand-editable and diff-friendly:
//   # comment
//   schema = 1
//   [section]
//   key = value
// Sections may repeat; keys within one section may not. Doubles serialize
// with enough digits to round-trip exactly.

struct KvEntry {
    std::string key;
    std::string value;
    int line = 0;
};

struct KvSection {
    std::string name;  // empty for the global section
    int line = 0;
    std::vector<KvEntry> entries;

    bool has(std::string_view key) const;
    const std::string* find(std::string_view key) const;

    // Missing keys and unparseable values throw ConfigError naming the
    // section, the key, and the line.
    std::string get_string(std::string_view key) const;
    std::string get_string(std::string_view key, std::string fallback) const;
    long long get_int(std::string_view key) const;
    long long get_int(std::string_view key, long long fallback) const;
    std::uint64_t get_u64(std::string_view key) const;
    std::uint64_t get_u64(std::string_view key, std::uint64_t fallback) const;
    double get_double(std::string_view key) const;
    double get_double(std::string_view key, double fallback) const;
    bool get_bool(std::string_view key) const;
    bool get_bool(std::string_view key, bool fallback) const;
    std::vector<double> get_double_list(std::string_view key) const;  // comma separated
    std::vector<int> get_int_list(std::string_view key) const;

    void set(std::string key, std::string value);
    void set_int(std::string key, long long value);
    void set_u64(std::string key, std::uint64_t value);
    void set_double(std::string key, double value);
    void set_bool(std::string key, bool value);
};

struct KvFile {
    KvSection globals;
    std::vector<KvSection> sections;

    static KvFile parse_string(const std::string& text, const std::string& origin = "");
    static KvFile parse_file(const std::string& path);

    std::string serialize() const;
    void save(const std::string& path) const;  // write-then-rename

    const KvSection* section(std::string_view name) const;  // first match or nullptr
    std::vector<const KvSection*> sections_named(std::string_view name) const;
    KvSection& add_section(std::string name);
};

std::string format_double(double value);

}  // namespace kdbench
