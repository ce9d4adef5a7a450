#pragma once

// Confusion matrices for the evaluation reports.  Rows are true labels and
// columns predictions; rows and columns need not share a label set (the
// stage-1-by-chain report has chain rows and primary columns), so each row
// carries the index of its correct column explicitly.

#include <cstdint>
#include <string>
#include <vector>

namespace smsi {

struct ConfusionMatrix {
    std::vector<std::string> row_labels;  // true
    std::vector<std::string> col_labels;  // predicted
    std::vector<int> correct_col;         // per row; -1 when no column is correct
    std::vector<std::vector<std::int64_t>> counts;  // [row][col]

    // Rows and columns with correct_col resolved by label equality.
    static ConfusionMatrix make(std::vector<std::string> rows, std::vector<std::string> cols);

    void set_correct(const std::string& row, const std::string& col);
    void add(const std::string& row, const std::string& col, std::int64_t n = 1);

    std::int64_t row_total(std::size_t row) const;
    std::int64_t total() const;

    // Fraction of samples landing in their row's correct column.
    double accuracy() const;
    // Per-row recall; 0 for empty rows.
    double recall(std::size_t row) const;
    // Mean of per-row recalls weighted by row counts.  Algebraically equal to
    // accuracy(); computed through a different route as a cross-check.
    double weighted_recall() const;
    // Unweighted mean recall over non-empty rows (balanced accuracy).
    double macro_recall() const;
    // 100 * count / row_total; 0 for empty rows.
    double percent(std::size_t row, std::size_t col) const;

    // CSV: header "true\\predicted,<cols...>", one row per true label.
    std::string to_csv(bool percentages = false) const;
};

}  // namespace smsi
