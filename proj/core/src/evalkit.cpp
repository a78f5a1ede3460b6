#include "prd/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <json.hpp>

#include "prd/errors.hpp"
#include "prd/simcore.hpp"

namespace prd {

void AccuracyMatrix::append_row(std::vector<double> row) {
    if (row.size() != rows_.size() + 1)
        throw std::domain_error("AccuracyMatrix: row " + std::to_string(rows_.size()) +
                                " must have " + std::to_string(rows_.size() + 1) + " entries");
    for (double v : row)
        if (!(v >= 0.0 && v <= 1.0))
            throw std::domain_error("AccuracyMatrix: accuracy outside [0,1]");
    rows_.push_back(std::move(row));
}

double AccuracyMatrix::at(std::size_t i, std::size_t j) const {
    if (i >= rows_.size() || j > i)
        throw std::domain_error("AccuracyMatrix: cell (" + std::to_string(i) + "," +
                                std::to_string(j) + ") is not defined");
    return rows_[i][j];
}

const std::vector<double>& AccuracyMatrix::row(std::size_t i) const {
    if (i >= rows_.size()) throw std::domain_error("AccuracyMatrix: row out of range");
    return rows_[i];
}

std::string AccuracyMatrix::to_json_string() const {
    nlohmann::json j;
    j["format_version"] = 1;
    j["rows"] = rows_;
    return j.dump();
}

AccuracyMatrix AccuracyMatrix::from_json_string(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    AccuracyMatrix out;
    for (const auto& row : j.at("rows"))
        out.append_row(row.get<std::vector<double>>());
    return out;
}

double avg_observed_accuracy(const AccuracyMatrix& a) {
    if (a.rows() == 0) throw std::domain_error("avg_observed_accuracy: empty matrix");
    const auto& last = a.row(a.rows() - 1);
    double s = 0.0;
    for (double v : last) s += v;
    return s / static_cast<double>(last.size());
}

double forgetting(const AccuracyMatrix& a) {
    const std::size_t t = a.rows();
    if (t < 2) throw std::domain_error("forgetting: needs at least 2 sessions");
    double s = 0.0;
    for (std::size_t j = 0; j + 1 < t; ++j) {
        double best = a.at(j, j);
        for (std::size_t l = j; l + 1 < t; ++l) best = std::max(best, a.at(l, j));
        s += best - a.at(t - 1, j);
    }
    return s / static_cast<double>(t - 1);
}

double avg_cumulative_incremental_accuracy(const std::vector<double>& per_phase) {
    if (per_phase.empty())
        throw std::domain_error("avg_cumulative_incremental_accuracy: no phases");
    double s = 0.0;
    for (double v : per_phase) s += v;
    return s / static_cast<double>(per_phase.size());
}

double amca(const ClassAccuracyTable& table) {
    if (table.num_tasks() == 0 || table.classes.empty())
        throw std::domain_error("amca: empty table");
    double s = 0.0;
    for (const auto& row : table.values) {
        if (row.size() != table.classes.size())
            throw std::domain_error("amca: ragged class accuracy table");
        for (double v : row) {
            if (!std::isfinite(v)) throw std::domain_error("amca: missing cell");
            s += v;
        }
    }
    return s / static_cast<double>(table.num_tasks() * table.classes.size());
}

double linear_probe(const Matrix& train_x, const std::vector<int>& train_y,
                    const Matrix& test_x, const std::vector<int>& test_y,
                    const ProbeOptions& opt) {
    if (train_x.rows() != train_y.size() || test_x.rows() != test_y.size())
        throw std::domain_error("linear_probe: feature/label size mismatch");
    if (train_x.rows() == 0 || test_x.rows() == 0)
        throw std::domain_error("linear_probe: empty split");

    std::set<int> label_set(train_y.begin(), train_y.end());
    if (label_set.size() < 2)
        throw std::domain_error("linear_probe: needs at least 2 classes in the train split");
    std::map<int, std::size_t> to_idx;
    std::vector<int> classes(label_set.begin(), label_set.end());
    for (std::size_t i = 0; i < classes.size(); ++i) to_idx[classes[i]] = i;

    const std::size_t n = train_x.rows(), d = train_x.cols(), c = classes.size();

    // standardize features with train statistics (conditioning only)
    std::vector<double> mean(d, 0.0), stddev(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += train_x(i, j);
    for (double& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double v = train_x(i, j) - mean[j];
            stddev[j] += v * v;
        }
    for (double& s : stddev) s = std::max(std::sqrt(s / static_cast<double>(n)), 1e-8);

    auto standardized = [&](const Matrix& x) {
        Matrix out(x.rows(), d);
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < d; ++j) out(i, j) = (x(i, j) - mean[j]) / stddev[j];
        return out;
    };
    const Matrix xs = standardized(train_x);

    Matrix w(d, c);
    std::vector<double> b(c, 0.0);
    Matrix dw(d, c);
    std::vector<double> db(c);
    std::vector<double> logits(c);

    double lr = 1.0;
    double prev_loss = 1e300;
    int stall = 0;
    for (int iter = 0; iter < opt.max_iters; ++iter) {
        dw.fill(0.0);
        std::fill(db.begin(), db.end(), 0.0);
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < c; ++k) {
                double s = b[k];
                for (std::size_t j = 0; j < d; ++j) s += xs(i, j) * w(j, k);
                logits[k] = s;
            }
            const double lse = log_sum_exp(logits);
            const std::size_t yi = to_idx.at(train_y[i]);
            loss += lse - logits[yi];
            for (std::size_t k = 0; k < c; ++k) {
                const double p = std::exp(logits[k] - lse) - (k == yi ? 1.0 : 0.0);
                db[k] += p;
                for (std::size_t j = 0; j < d; ++j) dw(j, k) += xs(i, j) * p;
            }
        }
        loss /= static_cast<double>(n);
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t k = 0; k < c; ++k) {
                dw(j, k) = dw(j, k) / static_cast<double>(n) + opt.l2 * w(j, k);
                loss += 0.5 * opt.l2 * w(j, k) * w(j, k) / static_cast<double>(d * c);
            }
        for (double& g : db) g /= static_cast<double>(n);

        // bold-driver step size: grow while improving, back off on overshoot
        if (loss > prev_loss) {
            lr *= 0.5;
        } else {
            lr = std::min(lr * 1.05, 10.0);
            if (prev_loss - loss < opt.tol * std::max(1.0, std::abs(prev_loss))) {
                if (++stall >= 5) break;
            } else {
                stall = 0;
            }
        }
        prev_loss = loss;
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t k = 0; k < c; ++k) w(j, k) -= lr * dw(j, k);
        for (std::size_t k = 0; k < c; ++k) b[k] -= lr * db[k];
    }

    const Matrix ts = standardized(test_x);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ts.rows(); ++i) {
        std::size_t best = 0;
        double best_s = -1e300;
        for (std::size_t k = 0; k < c; ++k) {
            double s = b[k];
            for (std::size_t j = 0; j < d; ++j) s += ts(i, j) * w(j, k);
            if (s > best_s) {
                best_s = s;
                best = k;
            }
        }
        if (classes[best] == test_y[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(ts.rows());
}

}  // namespace prd
