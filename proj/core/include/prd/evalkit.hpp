#pragma once

#include <string>
#include <vector>

#include "prd/tensor.hpp"

namespace prd {

// Lower-triangular observed-accuracy records: row i holds A[i][j] for j <= i,
// the accuracy after finishing session i+1 on the test data of task j+1.
// Cells above the diagonal do not exist (never zero-filled).
class AccuracyMatrix {
public:
    void append_row(std::vector<double> row);
    std::size_t rows() const { return rows_.size(); }
    double at(std::size_t i, std::size_t j) const;
    const std::vector<double>& row(std::size_t i) const;

    std::string to_json_string() const;
    static AccuracyMatrix from_json_string(const std::string& text);

    friend bool operator==(const AccuracyMatrix& a, const AccuracyMatrix& b) {
        return a.rows_ == b.rows_;
    }

private:
    std::vector<std::vector<double>> rows_;
};

// Mean of the final row: (1/T) sum_t A[T-1][t].
double avg_observed_accuracy(const AccuracyMatrix& a);

// Mean over prior tasks of (best accuracy ever observed) - (final accuracy).
double forgetting(const AccuracyMatrix& a);

// Mean of the per-phase accuracies, each measured over all classes seen so far.
double avg_cumulative_incremental_accuracy(const std::vector<double>& per_phase);

// Per-(task, class) accuracy cells; NaN marks a missing cell.
struct ClassAccuracyTable {
    std::vector<int> classes;
    std::vector<std::vector<double>> values;  // [task][class index]

    std::size_t num_tasks() const { return values.size(); }
};

// Grand mean over every (task, class) cell.
double amca(const ClassAccuracyTable& table);

struct ProbeOptions {
    double l2 = 1e-4;
    int max_iters = 4000;
    double tol = 1e-8;
};

// Multinomial logistic regression trained full-batch on frozen features;
// returns test accuracy. Never mutates its inputs.
double linear_probe(const Matrix& train_x, const std::vector<int>& train_y,
                    const Matrix& test_x, const std::vector<int>& test_y,
                    const ProbeOptions& opt = {});

}  // namespace prd
