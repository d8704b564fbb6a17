#include "kdbench/kvfile.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "kdbench/errors.hpp"

namespace kdbench {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

bool valid_key(std::string_view key) {
    if (key.empty()) return false;
    for (char c : key) {
        const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' ||
                        c == '-' || c == '/';
        if (!ok) return false;
    }
    return true;
}

[[noreturn]] void fail(const KvSection& sec, std::string_view key, const std::string& what, int line) {
    const std::string where = sec.name.empty() ? "top level" : "[" + sec.name + "]";
    throw ConfigError(where + " key '" + std::string(key) + "': " + what, line);
}

const KvEntry* find_entry(const KvSection& sec, std::string_view key) {
    for (const auto& e : sec.entries)
        if (e.key == key) return &e;
    return nullptr;
}

}  // namespace

bool KvSection::has(std::string_view key) const { return find_entry(*this, key) != nullptr; }

const std::string* KvSection::find(std::string_view key) const {
    const auto* e = find_entry(*this, key);
    return e ? &e->value : nullptr;
}

std::string KvSection::get_string(std::string_view key) const {
    const auto* e = find_entry(*this, key);
    if (!e) fail(*this, key, "missing", line);
    return e->value;
}

std::string KvSection::get_string(std::string_view key, std::string fallback) const {
    const auto* v = find(key);
    return v ? *v : std::move(fallback);
}

long long KvSection::get_int(std::string_view key) const {
    const auto* e = find_entry(*this, key);
    if (!e) fail(*this, key, "missing", line);
    long long out = 0;
    const auto [ptr, ec] = std::from_chars(e->value.data(), e->value.data() + e->value.size(), out);
    if (ec != std::errc{} || ptr != e->value.data() + e->value.size())
        fail(*this, key, "expected integer, got '" + e->value + "'", e->line);
    return out;
}

long long KvSection::get_int(std::string_view key, long long fallback) const {
    return has(key) ? get_int(key) : fallback;
}

std::uint64_t KvSection::get_u64(std::string_view key) const {
    const auto* e = find_entry(*this, key);
    if (!e) fail(*this, key, "missing", line);
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(e->value.data(), e->value.data() + e->value.size(), out);
    if (ec != std::errc{} || ptr != e->value.data() + e->value.size())
        fail(*this, key, "expected unsigned integer, got '" + e->value + "'", e->line);
    return out;
}

std::uint64_t KvSection::get_u64(std::string_view key, std::uint64_t fallback) const {
    return has(key) ? get_u64(key) : fallback;
}

double KvSection::get_double(std::string_view key) const {
    const auto* e = find_entry(*this, key);
    if (!e) fail(*this, key, "missing", line);
    try {
        std::size_t pos = 0;
        const double out = std::stod(e->value, &pos);
        while (pos < e->value.size() && std::isspace(static_cast<unsigned char>(e->value[pos]))) ++pos;
        if (pos != e->value.size()) throw std::invalid_argument("trailing");
        return out;
    } catch (const std::exception&) {
        fail(*this, key, "expected number, got '" + e->value + "'", e->line);
    }
}

double KvSection::get_double(std::string_view key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

bool KvSection::get_bool(std::string_view key) const {
    const auto* e = find_entry(*this, key);
    if (!e) fail(*this, key, "missing", line);
    if (e->value == "true" || e->value == "1") return true;
    if (e->value == "false" || e->value == "0") return false;
    fail(*this, key, "expected true/false, got '" + e->value + "'", e->line);
}

bool KvSection::get_bool(std::string_view key, bool fallback) const {
    return has(key) ? get_bool(key) : fallback;
}

std::vector<double> KvSection::get_double_list(std::string_view key) const {
    const auto* e = find_entry(*this, key);
    if (!e) fail(*this, key, "missing", line);
    std::vector<double> out;
    std::stringstream ss{e->value};
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto tok = trim(item);
        if (tok.empty()) fail(*this, key, "empty list element", e->line);
        try {
            std::size_t pos = 0;
            out.push_back(std::stod(std::string(tok), &pos));
            if (pos != tok.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            fail(*this, key, "expected number list, got '" + e->value + "'", e->line);
        }
    }
    if (out.empty()) fail(*this, key, "expected a non-empty list", e->line);
    return out;
}

std::vector<int> KvSection::get_int_list(std::string_view key) const {
    const auto doubles = get_double_list(key);
    std::vector<int> out;
    out.reserve(doubles.size());
    for (double v : doubles) {
        const int i = static_cast<int>(v);
        if (static_cast<double>(i) != v) fail(*this, key, "expected integer list", line);
        out.push_back(i);
    }
    return out;
}

void KvSection::set(std::string key, std::string value) {
    for (auto& e : entries)
        if (e.key == key) {
            e.value = std::move(value);
            return;
        }
    entries.push_back(KvEntry{std::move(key), std::move(value), 0});
}

void KvSection::set_int(std::string key, long long value) { set(std::move(key), std::to_string(value)); }

void KvSection::set_u64(std::string key, std::uint64_t value) { set(std::move(key), std::to_string(value)); }

void KvSection::set_double(std::string key, double value) { set(std::move(key), format_double(value)); }

void KvSection::set_bool(std::string key, bool value) { set(std::move(key), value ? "true" : "false"); }

std::string format_double(double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    // Prefer the shortest representation that still round-trips. stod throws
    // out_of_range on subnormal probes, which just means "not this one".
    for (int prec = 1; prec < 17; ++prec) {
        char probe[64];
        std::snprintf(probe, sizeof probe, "%.*g", prec, value);
        try {
            if (std::stod(probe) == value) return probe;
        } catch (const std::out_of_range&) {
        }
    }
    return buf;
}

KvFile KvFile::parse_string(const std::string& text, const std::string& origin) {
    KvFile file;
    KvSection* current = &file.globals;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    const std::string where = origin.empty() ? "" : origin + ": ";
    while (std::getline(in, raw)) {
        ++line_no;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        const auto line = trim(raw);
        if (line.empty() || line.front() == '#' || line.front() == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(where + "unterminated section header", line_no);
            const auto name = trim(line.substr(1, line.size() - 2));
            if (!valid_key(name)) throw ConfigError(where + "invalid section name", line_no);
            file.sections.push_back(KvSection{std::string(name), line_no, {}});
            current = &file.sections.back();
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError(where + "expected 'key = value' or '[section]'", line_no);
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (!valid_key(key)) throw ConfigError(where + "invalid key '" + std::string(key) + "'", line_no);
        if (current->has(key))
            throw ConfigError(where + "duplicate key '" + std::string(key) + "'", line_no);
        current->entries.push_back(KvEntry{std::string(key), std::string(value), line_no});
    }
    return file;
}

KvFile KvFile::parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open: " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_string(buf.str(), path);
}

std::string KvFile::serialize() const {
    std::string out;
    const auto emit = [&out](const KvSection& sec) {
        for (const auto& e : sec.entries) {
            out += e.key;
            out += " = ";
            out += e.value;
            out += '\n';
        }
    };
    emit(globals);
    for (const auto& sec : sections) {
        if (!out.empty()) out += '\n';
        out += '[' + sec.name + "]\n";
        emit(sec);
    }
    return out;
}

void KvFile::save(const std::string& path) const {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::trunc);
        if (!os) throw ConfigError("cannot open for writing: " + tmp.string());
        os << serialize();
        if (!os) throw ConfigError("write failed: " + tmp.string());
    }
    fs::rename(tmp, target);
}

const KvSection* KvFile::section(std::string_view name) const {
    for (const auto& sec : sections)
        if (sec.name == name) return &sec;
    return nullptr;
}

std::vector<const KvSection*> KvFile::sections_named(std::string_view name) const {
    std::vector<const KvSection*> out;
    for (const auto& sec : sections)
        if (sec.name == name) out.push_back(&sec);
    return out;
}

KvSection& KvFile::add_section(std::string name) {
    sections.push_back(KvSection{std::move(name), 0, {}});
    return sections.back();
}

}  // namespace kdbench
