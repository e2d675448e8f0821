#pragma once

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "rfae/core.hpp"

namespace rfae {

enum class ColumnKind { Continuous, Categorical };

struct Column {
    std::string name;
    ColumnKind kind = ColumnKind::Continuous;
    std::vector<std::string> levels;  // categorical only, in first-appearance order

    bool categorical() const { return kind == ColumnKind::Categorical; }

    bool operator==(const Column&) const = default;
};

/// Typed column list. Validated on construction.
class Schema {
public:
    Schema() = default;

    explicit Schema(std::vector<Column> columns) : columns_(std::move(columns)) { validate(); }

    std::size_t size() const { return columns_.size(); }
    const Column& operator[](std::size_t j) const { return columns_[j]; }
    const std::vector<Column>& columns() const { return columns_; }

    std::optional<std::size_t> index_of(const std::string& name) const {
        for (std::size_t j = 0; j < columns_.size(); ++j)
            if (columns_[j].name == name) return j;
        return std::nullopt;
    }

    std::size_t continuous_count() const {
        std::size_t c = 0;
        for (const auto& col : columns_) c += col.categorical() ? 0 : 1;
        return c;
    }

    bool operator==(const Schema&) const = default;

    nlohmann::json to_json() const {
        nlohmann::json cols = nlohmann::json::array();
        for (const auto& c : columns_) {
            nlohmann::json jc{{"name", c.name}, {"kind", c.categorical() ? "categorical" : "continuous"}};
            if (c.categorical()) jc["levels"] = c.levels;
            cols.push_back(std::move(jc));
        }
        return nlohmann::json{{"columns", std::move(cols)}};
    }

    static Schema from_json(const nlohmann::json& j) {
        std::vector<Column> cols;
        for (const auto& jc : j.at("columns")) {
            Column c;
            c.name = jc.at("name").get<std::string>();
            const auto kind = jc.at("kind").get<std::string>();
            if (kind == "categorical") {
                c.kind = ColumnKind::Categorical;
                c.levels = jc.at("levels").get<std::vector<std::string>>();
            } else if (kind != "continuous") {
                throw Error("data", "unknown column kind '" + kind + "'");
            }
            cols.push_back(std::move(c));
        }
        return Schema(std::move(cols));
    }

private:
    void validate() const {
        std::set<std::string> names;
        for (const auto& c : columns_) {
            if (!names.insert(c.name).second) throw Error("data", "duplicate column name '" + c.name + "'");
            if (c.categorical()) {
                if (c.levels.empty()) throw Error("data", "categorical column '" + c.name + "' has no levels");
                std::set<std::string> lv(c.levels.begin(), c.levels.end());
                if (lv.size() != c.levels.size())
                    throw Error("data", "categorical column '" + c.name + "' has duplicate levels");
            } else if (!c.levels.empty()) {
                throw Error("data", "continuous column '" + c.name + "' carries levels");
            }
        }
    }

    std::vector<Column> columns_;
};

/// Row-major n x d grid. Continuous cells hold finite reals, categorical
/// cells hold level indices stored as doubles. Immutable after construction.
class Table {
public:
    Table() = default;

    Table(Schema schema, std::vector<double> cells) : schema_(std::move(schema)), cells_(std::move(cells)) {
        const std::size_t d = schema_.size();
        if (d == 0) {
            if (!cells_.empty()) throw Error("data", "cells given for a table without columns");
            n_ = 0;
        } else {
            if (cells_.size() % d != 0) throw Error("data", "cell count is not a multiple of the column count");
            n_ = cells_.size() / d;
        }
        validate();
    }

    const Schema& schema() const { return schema_; }
    std::size_t rows() const { return n_; }
    std::size_t cols() const { return schema_.size(); }
    bool empty() const { return n_ == 0; }

    double operator()(std::size_t i, std::size_t j) const { return cells_[i * cols() + j]; }

    std::span<const double> row(std::size_t i) const { return {cells_.data() + i * cols(), cols()}; }

    const std::vector<double>& cells() const { return cells_; }

    std::vector<double> column(std::size_t j) const {
        std::vector<double> out(n_);
        for (std::size_t i = 0; i < n_; ++i) out[i] = (*this)(i, j);
        return out;
    }

    Table select_rows(std::span<const std::size_t> idx) const {
        std::vector<double> out;
        out.reserve(idx.size() * cols());
        for (auto i : idx) {
            if (i >= n_) throw Error("data", "row index out of range");
            auto r = row(i);
            out.insert(out.end(), r.begin(), r.end());
        }
        return Table(schema_, std::move(out));
    }

    Table drop_column(std::size_t j) const {
        std::vector<Column> cols_left;
        for (std::size_t c = 0; c < cols(); ++c)
            if (c != j) cols_left.push_back(schema_[c]);
        std::vector<double> out;
        out.reserve(n_ * (cols() - 1));
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t c = 0; c < cols(); ++c)
                if (c != j) out.push_back((*this)(i, c));
        return Table(Schema(std::move(cols_left)), std::move(out));
    }

    /// Stack rows of two tables with identical schemas.
    static Table vstack(const Table& a, const Table& b) {
        if (!(a.schema() == b.schema())) throw Error("data", "cannot stack tables with different schemas");
        std::vector<double> out = a.cells_;
        out.insert(out.end(), b.cells_.begin(), b.cells_.end());
        return Table(a.schema(), std::move(out));
    }

    bool operator==(const Table& o) const { return schema_ == o.schema_ && cells_ == o.cells_; }

private:
    void validate() const {
        for (std::size_t j = 0; j < cols(); ++j) {
            const auto& c = schema_[j];
            for (std::size_t i = 0; i < n_; ++i) {
                const double v = (*this)(i, j);
                if (!std::isfinite(v)) throw Error("data", "non-finite value in column '" + c.name + "'");
                if (c.categorical()) {
                    if (v < 0 || v != std::floor(v) || v >= static_cast<double>(c.levels.size()))
                        throw Error("data", "invalid level index in column '" + c.name + "'");
                }
            }
        }
    }

    Schema schema_;
    std::size_t n_ = 0;
    std::vector<double> cells_;
};

/// Per-column override used when reading CSV. Categorical hints with an
/// empty level list have their levels inferred in first-appearance order.
struct ColumnHint {
    std::string name;
    ColumnKind kind = ColumnKind::Continuous;
    std::vector<std::string> levels;
};

struct CsvOptions {
    std::vector<ColumnHint> hints;
    /// Accept a header-only file (query files may be empty).
    bool allow_empty = false;
    /// Append categorical tokens missing from hinted levels instead of failing.
    bool extend_levels = false;
};

struct LoadResult {
    Table table;
    std::size_t dropped_rows = 0;
    /// Categorical cells whose level was appended because it was not hinted.
    std::size_t unseen_levels = 0;
};

inline std::vector<ColumnHint> hints_from_schema(const Schema& s) {
    std::vector<ColumnHint> h;
    for (const auto& c : s.columns()) h.push_back({c.name, c.kind, c.levels});
    return h;
}

namespace detail {

/// RFC-4180 record splitter. Returns false at end of input.
inline bool read_csv_record(std::istream& in, std::vector<std::string>& fields) {
    fields.clear();
    std::string field;
    bool in_quotes = false, any = false;
    char ch;
    while (in.get(ch)) {
        any = true;
        if (in_quotes) {
            if (ch == '"') {
                if (in.peek() == '"') {
                    field.push_back('"');
                    in.get();
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(ch);
            }
        } else if (ch == '"') {
            in_quotes = true;
        } else if (ch == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (ch == '\n') {
            fields.push_back(std::move(field));
            return true;
        } else if (ch != '\r') {
            field.push_back(ch);
        }
    }
    if (in_quotes) throw Error("data", "unterminated quoted field");
    if (!any) return false;
    fields.push_back(std::move(field));
    return true;
}

inline bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    const char* b = s.c_str();
    char* e = nullptr;
    errno = 0;
    out = std::strtod(b, &e);
    if (e == b) return false;
    while (*e == ' ' || *e == '\t') ++e;
    return *e == '\0';
}

inline bool is_missing(const std::string& s) {
    return s.empty() || s == "NA" || s == "?";
}

inline std::string quote_csv(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

/// Parse CSV with a header row. Columns whose tokens are all numeric are
/// inferred Continuous, others Categorical, unless a hint overrides. Rows
/// with any missing cell are dropped and counted.
inline LoadResult read_csv(std::istream& in, const CsvOptions& opts = {}) {
    std::vector<std::string> header;
    if (!detail::read_csv_record(in, header)) throw Error("data", "missing header row");
    const std::size_t d = header.size();

    std::vector<std::vector<std::string>> raw;
    std::size_t dropped = 0;
    std::vector<std::string> rec;
    std::size_t line = 1;
    while (detail::read_csv_record(in, rec)) {
        ++line;
        if (rec.size() == 1 && rec[0].empty()) continue;  // blank line
        if (rec.size() != d)
            throw Error("data", "row " + std::to_string(line) + " has " + std::to_string(rec.size()) +
                                    " cells, expected " + std::to_string(d));
        bool missing = false;
        for (const auto& f : rec) missing = missing || detail::is_missing(f);
        if (missing) {
            ++dropped;
            continue;
        }
        raw.push_back(rec);
    }
    if (raw.empty() && !opts.allow_empty) throw Error("data", "table is empty after dropping missing rows");

    std::vector<Column> cols(d);
    std::size_t unseen = 0;
    std::vector<double> cells(raw.size() * d);
    for (std::size_t j = 0; j < d; ++j) {
        Column& c = cols[j];
        c.name = header[j];
        const ColumnHint* hint = nullptr;
        for (const auto& h : opts.hints)
            if (h.name == c.name) hint = &h;
        if (hint) {
            c.kind = hint->kind;
        } else {
            double tmp;
            bool numeric = true;
            for (const auto& r : raw) numeric = numeric && detail::parse_double(r[j], tmp);
            c.kind = numeric ? ColumnKind::Continuous : ColumnKind::Categorical;
        }
        if (c.categorical()) {
            std::unordered_map<std::string, std::size_t> lookup;
            const bool fixed = hint && !hint->levels.empty();
            if (hint) {
                c.levels = hint->levels;
                for (std::size_t l = 0; l < c.levels.size(); ++l) lookup.emplace(c.levels[l], l);
            }
            for (std::size_t i = 0; i < raw.size(); ++i) {
                const auto& tok = raw[i][j];
                auto it = lookup.find(tok);
                if (it == lookup.end()) {
                    if (fixed && !opts.extend_levels)
                        throw Error("data", "level '" + tok + "' not declared for column '" + c.name + "'");
                    if (fixed) ++unseen;
                    it = lookup.emplace(tok, c.levels.size()).first;
                    c.levels.push_back(tok);
                }
                cells[i * d + j] = static_cast<double>(it->second);
            }
            if (c.levels.empty()) c.levels.push_back("");  // header-only file, keep schema valid
        } else {
            for (std::size_t i = 0; i < raw.size(); ++i) {
                double v;
                if (!detail::parse_double(raw[i][j], v))
                    throw Error("data", "cell '" + raw[i][j] + "' in column '" + c.name + "' is not numeric");
                if (!std::isfinite(v))
                    throw Error("data", "non-finite value in column '" + c.name + "'");
                cells[i * d + j] = v;
            }
        }
    }
    return LoadResult{Table(Schema(std::move(cols)), std::move(cells)), dropped, unseen};
}

inline LoadResult load_csv(const std::string& path, const CsvOptions& opts = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("data", "cannot read '" + path + "'");
    return read_csv(in, opts);
}

inline LoadResult load_csv(const std::string& path, const Schema& hint) {
    CsvOptions o;
    o.hints = hints_from_schema(hint);
    return load_csv(path, o);
}

inline void write_csv(std::ostream& out, const Table& t) {
    const auto& s = t.schema();
    for (std::size_t j = 0; j < s.size(); ++j) out << (j ? "," : "") << detail::quote_csv(s[j].name);
    out << '\n';
    for (std::size_t i = 0; i < t.rows(); ++i) {
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (j) out << ',';
            const double v = t(i, j);
            if (s[j].categorical())
                out << detail::quote_csv(s[j].levels[static_cast<std::size_t>(v)]);
            else
                out << detail::format_double(v);
        }
        out << '\n';
    }
}

inline void save_csv(const std::string& path, const Table& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("data", "cannot write '" + path + "'");
    write_csv(out, t);
}

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> holdout;
    std::uint64_t seed = 0;
};

/// n draws with replacement; holdout is the out-of-bag complement. Retries
/// with seed+1 (up to 10 times) when the holdout comes out empty.
inline SplitIndices bootstrap_split(std::size_t n, std::uint64_t seed) {
    if (n < 2) throw Error("data", "bootstrap_split needs n >= 2");
    for (std::uint64_t attempt = 0; attempt <= 10; ++attempt) {
        const std::uint64_t s = seed + attempt;
        Rng rng(s);
        SplitIndices out;
        out.seed = s;
        out.train.resize(n);
        std::vector<char> seen(n, 0);
        for (auto& t : out.train) {
            t = rng.index(n);
            seen[t] = 1;
        }
        for (std::size_t i = 0; i < n; ++i)
            if (!seen[i]) out.holdout.push_back(i);
        if (!out.holdout.empty()) return out;
    }
    throw Error("data", "bootstrap produced an empty out-of-bag set after 10 retries");
}

/// Disjoint train/holdout split with ceil(fraction*n) training rows.
inline SplitIndices subsample_split(std::size_t n, double fraction, std::uint64_t seed) {
    if (n < 2) throw Error("data", "subsample_split needs n >= 2");
    if (!(fraction > 0.0 && fraction < 1.0)) throw Error("data", "subsample fraction must lie in (0, 1)");
    Rng rng(seed);
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    std::size_t m = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
    m = std::clamp<std::size_t>(m, 1, n - 1);
    SplitIndices out;
    out.seed = seed;
    out.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(m));
    out.holdout.assign(perm.begin() + static_cast<std::ptrdiff_t>(m), perm.end());
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.holdout.begin(), out.holdout.end());
    return out;
}

/// Resample every column independently (with replacement), which keeps each
/// marginal and destroys inter-column dependence.
inline Table marginal_synthesize(const Table& table, std::uint64_t seed) {
    const std::size_t n = table.rows(), d = table.cols();
    if (n < 2) throw Error("data", "marginal_synthesize needs n >= 2");
    std::vector<double> out(n * d);
    for (std::size_t j = 0; j < d; ++j) {
        Rng rng(derive_seed(seed, j));
        for (std::size_t i = 0; i < n; ++i) out[i * d + j] = table(rng.index(n), j);
    }
    return Table(table.schema(), std::move(out));
}

}  // namespace rfae
