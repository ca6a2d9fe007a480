#pragma once
#include <hdmix/core.hpp>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace hdmix {

// Where the high-dimensional covariates enter the model.
//   individual:  phi_ik ~ N(mu_k + X_i beta_k, gamma_k^2), X has one row per individual.
//   observation: phi_ik ~ N(mu_k, gamma_k^2) and the mean is evaluated at
//                phi_i + X_ij beta, X has one row per observation row.
enum class CovariateLevel { individual, observation };

inline std::string to_string(CovariateLevel l)
{
    return l == CovariateLevel::individual ? "individual" : "observation";
}

inline CovariateLevel covariate_level_from_string(const std::string& s)
{
    if (s == "individual") return CovariateLevel::individual;
    if (s == "observation") return CovariateLevel::observation;
    throw InputError("unknown covariate level '" + s + "'");
}

/**
 * Repeated measurements in long format.
 * Rows of individual i are [start[i], start[i+1]); censored rows stay in place
 * with observed == 0 and never contribute to any likelihood term.
 */
struct Dataset
{
    std::vector<Index> start{0};
    Vec y;
    Vec v;
    std::vector<unsigned char> observed;
    Mat x;
    CovariateLevel level = CovariateLevel::individual;
    std::vector<std::string> constant_names;
    Mat constants; // n_individuals x constant_names.size()

    Index n_individuals() const { return static_cast<Index>(start.size()) - 1; }
    Index n_rows() const { return y.size(); }
    Index rows_of(Index i) const { return start[i + 1] - start[i]; }
    Index p() const { return x.cols(); }

    Index n_observed() const
    {
        return static_cast<Index>(std::count(observed.begin(), observed.end(), 1));
    }

    Index n_observed(Index i) const
    {
        Index c = 0;
        for (Index r = start[i]; r < start[i + 1]; ++r) c += observed[r];
        return c;
    }

    Index constant_index(const std::string& name) const
    {
        auto it = std::find(constant_names.begin(), constant_names.end(), name);
        if (it == constant_names.end())
            throw InputError("dataset has no constant '" + name + "'");
        return static_cast<Index>(it - constant_names.begin());
    }

    // Row of X associated with observation row r (observation level) or individual i.
    Index covariate_row(Index i, Index r) const
    {
        return level == CovariateLevel::individual ? i : r;
    }

    void validate() const
    {
        const Index n = n_individuals();
        if (n < 1) throw InputError("dataset needs at least one individual");
        if (p() < 1) throw InputError("dataset needs at least one covariate column");
        if (v.size() != y.size() || static_cast<Index>(observed.size()) != y.size())
            throw InputError("y, v and observed must have the same length");
        if (start.back() != y.size()) throw InputError("row offsets do not cover the data");
        for (Index i = 0; i < n; ++i)
            if (rows_of(i) < 1) throw InputError("individual " + std::to_string(i) + " has no rows");
        const Index want = level == CovariateLevel::individual ? n : y.size();
        if (x.rows() != want)
            throw InputError("covariate matrix has " + std::to_string(x.rows()) + " rows, expected " +
                             std::to_string(want));
        if (constants.size() > 0 && constants.rows() != n)
            throw InputError("constants must have one row per individual");
        for (Index r = 0; r < y.size(); ++r)
            if (observed[r] && (!std::isfinite(y[r]) || !std::isfinite(v[r])))
                throw InputError("non-finite observed value at row " + std::to_string(r));
    }

    // Columns that are identically zero (a warning, not an error).
    std::vector<Index> zero_columns() const
    {
        std::vector<Index> out;
        for (Index k = 0; k < x.cols(); ++k)
            if (x.col(k).cwiseAbs().maxCoeff() == 0.0) out.push_back(k);
        return out;
    }

    // Keeps only the listed covariate columns, in order.
    Dataset with_columns(const std::vector<Index>& cols) const
    {
        Dataset out = *this;
        out.x.resize(x.rows(), static_cast<Index>(cols.size()));
        for (std::size_t c = 0; c < cols.size(); ++c) out.x.col(static_cast<Index>(c)) = x.col(cols[c]);
        return out;
    }
};

// Column-wise standardization to mean 0 / sd 1 (population sd); constant columns are zeroed.
inline void standardize_columns(Mat& x)
{
    const double n = static_cast<double>(x.rows());
    for (Index k = 0; k < x.cols(); ++k) {
        auto col = x.col(k);
        const double m = col.mean();
        col.array() -= m;
        const double sd = std::sqrt(col.squaredNorm() / n);
        if (sd > 0) col /= sd;
        else col.setZero();
    }
}

namespace csv {

inline std::vector<std::string> split(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double to_double(const std::string& s, const std::string& where)
{
    try {
        std::size_t used = 0;
        double d = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return d;
    } catch (const std::exception&) {
        throw InputError("cannot parse number '" + s + "' in " + where);
    }
}

// Shortest text that round-trips the double exactly.
inline std::string fmt(double x)
{
    std::ostringstream os;
    os << std::setprecision(17) << x;
    return os.str();
}

} // namespace csv

/**
 * Writes `id,time,y,observed` (one row per observation row, ids 1-based).
 * Censored rows are written with observed=0 and y=NA.
 */
inline void write_data_csv(const Dataset& d, const std::string& path)
{
    std::ofstream os(path);
    if (!os) throw InputError("cannot write " + path);
    os << "id,time,y,observed\n";
    for (Index i = 0; i < d.n_individuals(); ++i)
        for (Index r = d.start[i]; r < d.start[i + 1]; ++r)
            os << (i + 1) << ',' << csv::fmt(d.v[r]) << ',' << (d.observed[r] ? csv::fmt(d.y[r]) : "NA") << ','
               << int(d.observed[r]) << '\n';
}

inline void write_covariates_csv(const Mat& x, const std::string& path)
{
    std::ofstream os(path);
    if (!os) throw InputError("cannot write " + path);
    for (Index k = 0; k < x.cols(); ++k) os << (k ? "," : "") << 'x' << (k + 1);
    os << '\n';
    for (Index r = 0; r < x.rows(); ++r) {
        for (Index k = 0; k < x.cols(); ++k) os << (k ? "," : "") << csv::fmt(x(r, k));
        os << '\n';
    }
}

/**
 * Reads the long-format data file. Rows of one id must be contiguous; ids are
 * numbered in order of first appearance.
 */
inline Dataset read_data_csv(const std::string& path)
{
    std::ifstream is(path);
    if (!is) throw InputError("cannot open data file " + path);
    std::string line;
    if (!std::getline(is, line)) throw InputError("empty data file " + path);
    auto header = csv::split(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t c = 0; c < header.size(); ++c) col[header[c]] = c;
    for (const char* need : {"id", "time", "y"})
        if (!col.count(need)) throw InputError(path + ": missing column '" + need + "'");
    const bool has_obs = col.count("observed") > 0;

    Dataset d;
    std::vector<double> ys, vs;
    std::vector<std::string> seen;
    std::string last_id;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto cells = csv::split(line);
        if (cells.size() < header.size())
            throw InputError(path + ":" + std::to_string(lineno) + ": too few fields");
        const std::string& id = cells[col["id"]];
        if (id != last_id) {
            if (std::find(seen.begin(), seen.end(), id) != seen.end())
                throw InputError(path + ": rows of id " + id + " are not contiguous");
            seen.push_back(id);
            if (!ys.empty()) d.start.push_back(static_cast<Index>(ys.size()));
            last_id = id;
        }
        const std::string where = path + ":" + std::to_string(lineno);
        bool obs = true;
        if (has_obs) obs = csv::to_double(cells[col["observed"]], where) != 0.0;
        const std::string& ycell = cells[col["y"]];
        if (ycell == "NA" || ycell.empty()) obs = false;
        vs.push_back(csv::to_double(cells[col["time"]], where));
        ys.push_back(obs ? csv::to_double(ycell, where) : 0.0);
        d.observed.push_back(obs ? 1 : 0);
    }
    if (ys.empty()) throw InputError(path + ": no data rows");
    d.start.push_back(static_cast<Index>(ys.size()));
    d.y = Eigen::Map<Vec>(ys.data(), static_cast<Index>(ys.size()));
    d.v = Eigen::Map<Vec>(vs.data(), static_cast<Index>(vs.size()));
    return d;
}

inline Mat read_covariates_csv(const std::string& path)
{
    std::ifstream is(path);
    if (!is) throw InputError("cannot open covariate file " + path);
    std::string line;
    if (!std::getline(is, line)) throw InputError("empty covariate file " + path);
    const std::size_t p = csv::split(line).size();
    std::vector<double> vals;
    Index rows = 0;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto cells = csv::split(line);
        if (cells.size() != p)
            throw InputError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(p) + " fields");
        for (auto& c : cells) vals.push_back(csv::to_double(c, path + ":" + std::to_string(lineno)));
        ++rows;
    }
    Mat x(rows, static_cast<Index>(p));
    for (Index r = 0; r < rows; ++r)
        for (Index k = 0; k < static_cast<Index>(p); ++k) x(r, k) = vals[static_cast<std::size_t>(r * p + k)];
    return x;
}

} // namespace hdmix
