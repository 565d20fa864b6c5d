#pragma once

// Text formats: data CSV, parameter checkpoints (JSON), and the numeric
// formatting shared by every emitted file. Doubles are written in shortest
// round-trip form so every file reads back bit-identically.

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "mhsaem/errors.hpp"
#include "mhsaem/mixture.hpp"

namespace mhsaem {

using Json = nlohmann::json;

inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) throw IoError("cannot format number");
    return std::string(buf, ptr);
}

inline double parse_double(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw ValidationError("not a number: '" + std::string(s) + "'");
    return v;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline Json read_json_file(const std::filesystem::path& path) {
    const auto text = read_text_file(path);
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw ValidationError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

inline void write_json_file(const std::filesystem::path& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Data CSV: one row per datapoint, D numeric columns. When labels are written
// a header row `x1,...,xD,label` is emitted; labels are 1-based.

struct Dataset {
    DataMatrix X;
    std::optional<std::vector<std::size_t>> labels;  // 0-based in memory
};

inline std::string data_to_csv(const DataMatrix& X, const std::vector<std::size_t>* labels = nullptr) {
    std::string out;
    if (labels) {
        for (Eigen::Index d = 0; d < X.cols(); ++d) out += "x" + std::to_string(d + 1) + ",";
        out += "label\n";
    }
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        for (Eigen::Index d = 0; d < X.cols(); ++d) {
            if (d) out += ',';
            out += format_double(X(i, d));
        }
        if (labels) out += "," + std::to_string((*labels)[static_cast<std::size_t>(i)] + 1);
        out += '\n';
    }
    return out;
}

inline Dataset data_from_csv(std::string_view text) {
    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> labels;
    std::optional<std::size_t> label_col;
    std::size_t ncols = 0;
    bool first = true;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (first) {
            first = false;
            const auto c0 = cells[0];
            const bool header = !c0.empty() && (std::isalpha(static_cast<unsigned char>(c0.front())) || c0.front() == '_') &&
                                c0 != "nan" && c0 != "inf";
            if (header) {
                for (std::size_t c = 0; c < cells.size(); ++c)
                    if (cells[c] == "label") label_col = c;
                ncols = cells.size();
                continue;
            }
        }
        if (ncols == 0) ncols = cells.size();
        if (cells.size() != ncols)
            throw ValidationError("CSV line " + std::to_string(line_no) + ": expected " + std::to_string(ncols) + " columns");
        std::vector<double> row;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (label_col && c == *label_col) {
                const double v = parse_double(cells[c]);
                if (v < 1.0 || v != std::floor(v)) throw ValidationError("CSV: labels must be positive integers");
                labels.push_back(static_cast<std::size_t>(v) - 1);
            } else {
                row.push_back(parse_double(cells[c]));
            }
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ValidationError("CSV contains no datapoints");
    const auto d = rows.front().size();
    if (d == 0) throw ValidationError("CSV has no data columns");
    Dataset ds;
    ds.X.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t c = 0; c < d; ++c) ds.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
    if (!ds.X.allFinite()) throw ValidationError("CSV contains non-finite values");
    if (label_col) ds.labels = std::move(labels);
    return ds;
}

inline Dataset read_data_csv(const std::filesystem::path& path) { return data_from_csv(read_text_file(path)); }

inline void write_data_csv(const std::filesystem::path& path, const DataMatrix& X,
                           const std::vector<std::size_t>* labels = nullptr) {
    write_text_file(path, data_to_csv(X, labels));
}

// ---------------------------------------------------------------------------
// Parameter checkpoint: {family_id, K, D, nu[], components[][]}.

inline Json vector_to_json(const Vector& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

inline Vector vector_from_json(const Json& j) {
    if (!j.is_array()) throw ValidationError("expected a numeric array");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw ValidationError("expected a numeric array");
        v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    }
    return v;
}

inline Json params_to_json(const MixtureParams& theta) {
    Json comps = Json::array();
    for (const auto& c : theta.components) comps.push_back(vector_to_json(c));
    return Json{{"family_id", theta.family_id},
                {"K", theta.num_components()},
                {"D", theta.dim},
                {"nu", vector_to_json(theta.nu)},
                {"components", comps}};
}

inline void reject_unknown_keys(const Json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
    if (!j.is_object()) throw ValidationError(where + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (auto a : allowed) ok = ok || key == a;
        if (!ok) throw ValidationError(where + ": unknown field '" + key + "'");
    }
}

inline MixtureParams params_from_json(const Json& j) {
    reject_unknown_keys(j, {"family_id", "K", "D", "nu", "components"}, "checkpoint");
    for (const char* key : {"family_id", "K", "D", "nu", "components"})
        if (!j.contains(key)) throw ValidationError(std::string("checkpoint: missing field '") + key + "'");
    MixtureParams theta;
    theta.family_id = j.at("family_id").get<std::string>();
    theta.dim = j.at("D").get<std::size_t>();
    theta.nu = vector_from_json(j.at("nu"));
    for (const auto& c : j.at("components")) theta.components.push_back(vector_from_json(c));
    if (j.at("K").get<std::size_t>() != theta.num_components())
        throw ValidationError("checkpoint: K does not match the number of components");
    theta.validate();
    with_family(theta.family_id, [&](auto fam) {
        using F = decltype(fam);
        for (const auto& c : theta.components)
            if (static_cast<std::size_t>(c.size()) != F::num_params(theta.dim))
                throw ValidationError("checkpoint: component block has wrong length for family");
        return 0;
    });
    return theta;
}

inline void save_params(const std::filesystem::path& path, const MixtureParams& theta) {
    write_json_file(path, params_to_json(theta));
}

inline MixtureParams load_params(const std::filesystem::path& path) { return params_from_json(read_json_file(path)); }

} // namespace mhsaem
