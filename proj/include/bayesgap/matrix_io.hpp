#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "bayesgap/core.hpp"
#include "bayesgap/environments.hpp"

namespace bayesgap {

// Dense matrix CSV: a header line "K,d" followed by K rows of d values, one
// row per arm. Values are written with 17 significant digits so a read-back
// reproduces every double exactly.

inline void write_matrix_csv(std::ostream& out, const Matrix& m) {
    out << m.rows() << ',' << m.cols() << '\n';
    char buf[32];
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
            if (j > 0) out << ',';
            out << buf;
        }
        out << '\n';
    }
}

inline Matrix read_matrix_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::IoFailure, "matrix CSV is empty");
    const auto header = detail::split_csv_line(line);
    if (header.size() != 2) throw Error(ErrorCode::IoFailure, "matrix CSV header must be 'K,d'");
    long rows = 0;
    long cols = 0;
    try {
        rows = std::stol(header[0]);
        cols = std::stol(header[1]);
    } catch (const std::exception&) {
        throw Error(ErrorCode::IoFailure, "matrix CSV header must be 'K,d'");
    }
    if (rows < 0 || cols < 0) throw Error(ErrorCode::IoFailure, "negative matrix dimensions");
    Matrix m(rows, cols);
    for (long i = 0; i < rows; ++i) {
        if (!std::getline(in, line)) throw Error(ErrorCode::IoFailure, "matrix CSV truncated at row " + std::to_string(i));
        const auto fields = detail::split_csv_line(line);
        if (static_cast<long>(fields.size()) != cols) {
            throw Error(ErrorCode::IoFailure, "row " + std::to_string(i) + " has " + std::to_string(fields.size()) +
                                                  " values, expected " + std::to_string(cols));
        }
        for (long j = 0; j < cols; ++j) {
            try {
                m(i, j) = detail::parse_real(fields[static_cast<std::size_t>(j)], "row " + std::to_string(i));
            } catch (const Error& e) {
                throw Error(ErrorCode::IoFailure, e.what());
            }
        }
    }
    return m;
}

inline void write_matrix_csv(const std::string& path, const Matrix& m) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write '" + path + "'");
    write_matrix_csv(out, m);
    if (!out) throw Error(ErrorCode::IoFailure, "write to '" + path + "' failed");
}

inline Matrix read_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open '" + path + "'");
    return read_matrix_csv(in);
}

}  // namespace bayesgap
