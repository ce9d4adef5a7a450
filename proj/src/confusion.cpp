#include "smsi/confusion.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "smsi/errors.hpp"

namespace smsi {

namespace {

std::size_t index_of(const std::vector<std::string>& labels, const std::string& label,
                     const char* what) {
    auto it = std::find(labels.begin(), labels.end(), label);
    if (it == labels.end())
        throw DataError(std::string("confusion matrix has no ") + what + " '" + label + "'");
    return static_cast<std::size_t>(it - labels.begin());
}

}  // namespace

ConfusionMatrix ConfusionMatrix::make(std::vector<std::string> rows,
                                      std::vector<std::string> cols) {
    ConfusionMatrix m;
    m.row_labels = std::move(rows);
    m.col_labels = std::move(cols);
    m.counts.assign(m.row_labels.size(),
                    std::vector<std::int64_t>(m.col_labels.size(), 0));
    m.correct_col.assign(m.row_labels.size(), -1);
    for (std::size_t r = 0; r < m.row_labels.size(); ++r) {
        auto it = std::find(m.col_labels.begin(), m.col_labels.end(), m.row_labels[r]);
        if (it != m.col_labels.end())
            m.correct_col[r] = static_cast<int>(it - m.col_labels.begin());
    }
    return m;
}

void ConfusionMatrix::set_correct(const std::string& row, const std::string& col) {
    correct_col[index_of(row_labels, row, "row")] =
        static_cast<int>(index_of(col_labels, col, "column"));
}

void ConfusionMatrix::add(const std::string& row, const std::string& col, std::int64_t n) {
    counts[index_of(row_labels, row, "row")][index_of(col_labels, col, "column")] += n;
}

std::int64_t ConfusionMatrix::row_total(std::size_t row) const {
    return std::accumulate(counts[row].begin(), counts[row].end(), std::int64_t{0});
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t sum = 0;
    for (std::size_t r = 0; r < counts.size(); ++r) sum += row_total(r);
    return sum;
}

double ConfusionMatrix::accuracy() const {
    const std::int64_t all = total();
    if (all == 0) return 0;
    std::int64_t correct = 0;
    for (std::size_t r = 0; r < counts.size(); ++r)
        if (correct_col[r] >= 0) correct += counts[r][static_cast<std::size_t>(correct_col[r])];
    return static_cast<double>(correct) / static_cast<double>(all);
}

double ConfusionMatrix::recall(std::size_t row) const {
    const std::int64_t n = row_total(row);
    if (n == 0 || correct_col[row] < 0) return 0;
    return static_cast<double>(counts[row][static_cast<std::size_t>(correct_col[row])]) /
           static_cast<double>(n);
}

double ConfusionMatrix::weighted_recall() const {
    const std::int64_t all = total();
    if (all == 0) return 0;
    double sum = 0;
    for (std::size_t r = 0; r < counts.size(); ++r)
        sum += recall(r) * (static_cast<double>(row_total(r)) / static_cast<double>(all));
    return sum;
}

double ConfusionMatrix::macro_recall() const {
    double sum = 0;
    std::int64_t rows = 0;
    for (std::size_t r = 0; r < counts.size(); ++r) {
        if (row_total(r) == 0) continue;
        sum += recall(r);
        ++rows;
    }
    return rows == 0 ? 0 : sum / static_cast<double>(rows);
}

double ConfusionMatrix::percent(std::size_t row, std::size_t col) const {
    const std::int64_t n = row_total(row);
    if (n == 0) return 0;
    return 100.0 * static_cast<double>(counts[row][col]) / static_cast<double>(n);
}

std::string ConfusionMatrix::to_csv(bool percentages) const {
    std::ostringstream out;
    out << "true\\predicted";
    for (const auto& col : col_labels) out << ',' << col;
    out << '\n';
    char buffer[32];
    for (std::size_t r = 0; r < row_labels.size(); ++r) {
        out << row_labels[r];
        for (std::size_t c = 0; c < col_labels.size(); ++c) {
            if (percentages) {
                std::snprintf(buffer, sizeof buffer, "%.2f", percent(r, c));
                out << ',' << buffer;
            } else {
                out << ',' << counts[r][c];
            }
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace smsi
