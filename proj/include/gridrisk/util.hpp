#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace gridrisk {

// Input text could not be tokenized; `line` is 1-based.
class ParseError : public std::runtime_error {
public:
    ParseError(int line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

// Well-formed input that violates a model invariant (no slack bus, x=0 branch, ...).
class SemanticError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad arguments, bad configuration, or missing/stale upstream artifacts.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Numerical failure that is a hard error (singular matrix, unbracketable target).
class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Training diverged; carries the epoch at which it happened.
class TrainingError : public std::runtime_error {
public:
    TrainingError(int epoch, const std::string& what)
        : std::runtime_error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
    int epoch() const { return epoch_; }

private:
    int epoch_;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

inline std::string to_hex(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (!in.good() && !in.eof()) throw IoError("read failed: " + path.string());
    return ss.str();
}

// Write via temp file + rename so readers never observe a partial file.
inline void atomic_write_file(const std::filesystem::path& path, std::string_view content) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out.good()) throw IoError("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::string file_checksum_hex(const std::filesystem::path& path) {
    return to_hex(fnv1a64(read_file(path)));
}

}  // namespace gridrisk
