#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "gridrisk/util.hpp"

namespace gridrisk {

// RFC 4180 writer: CRLF records, minimal quoting, header row first.
// Content accumulates in memory and lands via atomic rename on save().
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) : n_cols_(header.size()) {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (i) buf_ += ',';
            buf_ += quote(header[i]);
        }
        buf_ += "\r\n";
    }

    class RowRef {
    public:
        explicit RowRef(CsvWriter& w) : w_(w) {}
        ~RowRef() {
            w_.buf_ += "\r\n";
            w_.cells_ = 0;
        }
        RowRef& cell(std::string_view s) {
            w_.push(CsvWriter::quote(s));
            return *this;
        }
        RowRef& cell(double v) {
            w_.push(format_double(v));
            return *this;
        }
        RowRef& cell(std::int64_t v) {
            w_.push(std::to_string(v));
            return *this;
        }
        RowRef& cell(int v) { return cell(static_cast<std::int64_t>(v)); }
        RowRef& cell(std::size_t v) { return cell(static_cast<std::int64_t>(v)); }
        RowRef& empty() {
            w_.push("");
            return *this;
        }

    private:
        CsvWriter& w_;
    };

    RowRef row() { return RowRef(*this); }

    // Shortest representation that round-trips; locale independent.
    static std::string format_double(double v) {
        if (std::isnan(v)) return "nan";
        char tmp[64];
        auto [ptr, ec] = std::to_chars(tmp, tmp + sizeof(tmp), v);
        (void)ec;
        return std::string(tmp, ptr);
    }

    const std::string& content() const { return buf_; }

    void save(const std::filesystem::path& path) const { atomic_write_file(path, buf_); }

private:
    friend class RowRef;

    static std::string quote(std::string_view s) {
        bool needs = s.find_first_of(",\"\r\n") != std::string_view::npos;
        if (!needs) return std::string(s);
        std::string out = "\"";
        for (char c : s) {
            if (c == '"') out += '"';
            out += c;
        }
        out += '"';
        return out;
    }

    void push(std::string_view cell) {
        if (cells_ >= n_cols_)
            throw ValidationError("csv row wider than header (" + std::to_string(n_cols_) + " columns)");
        if (cells_) buf_ += ',';
        buf_ += cell;
        ++cells_;
    }

    std::string buf_;
    std::size_t n_cols_ = 0;
    std::size_t cells_ = 0;
};

// Minimal reader for tests and resume checks; handles the quoting the writer emits.
inline std::vector<std::vector<std::string>> csv_parse(std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string cell;
    bool in_quotes = false;
    bool had_any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    cell += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                cell += c;
            }
            continue;
        }
        switch (c) {
            case '"': in_quotes = true; had_any = true; break;
            case ',':
                row.push_back(std::move(cell));
                cell.clear();
                had_any = true;
                break;
            case '\r': break;
            case '\n':
                if (had_any || !cell.empty() || !row.empty()) {
                    row.push_back(std::move(cell));
                    cell.clear();
                    rows.push_back(std::move(row));
                    row.clear();
                    had_any = false;
                }
                break;
            default: cell += c; had_any = true;
        }
    }
    if (had_any || !cell.empty() || !row.empty()) {
        row.push_back(std::move(cell));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace gridrisk
