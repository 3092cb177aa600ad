#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "mflab/matrix.hpp"

namespace mflab {

/// Exact minimum-cost perfect matching on a dense square cost matrix:
/// shortest augmenting paths with dual potentials (Jonker-Volgenant style).
/// One Dijkstra-like sweep per row over a shrinking candidate set; O(n^3)
/// worst case with a small constant, n in the low thousands is fine.
/// Returns row -> column.
inline std::vector<std::size_t> min_cost_assignment(const Matrix& cost) {
    if (cost.rows() != cost.cols()) throw ValidationError("assignment: cost matrix must be square");
    const std::size_t n = cost.rows();
    if (n == 0) return {};
    constexpr double inf = std::numeric_limits<double>::infinity();
    constexpr std::size_t none = static_cast<std::size_t>(-1);
    const double* c = cost.data().data();

    std::vector<double> u(n, 0.0), v(n, 0.0), shortest(n);
    std::vector<std::size_t> row_of_col(n, none), col_of_row(n, none);
    std::vector<std::size_t> prev_row(n), remaining(n);
    std::vector<char> in_sr(n), in_sc(n);

    for (std::size_t cur_row = 0; cur_row < n; ++cur_row) {
        std::fill(shortest.begin(), shortest.end(), inf);
        std::fill(in_sr.begin(), in_sr.end(), char{0});
        std::fill(in_sc.begin(), in_sc.end(), char{0});
        for (std::size_t j = 0; j < n; ++j) remaining[j] = j;
        std::size_t num_remaining = n;

        double min_val = 0.0;
        std::size_t i = cur_row;
        std::size_t sink = none;
        while (sink == none) {
            in_sr[i] = 1;
            const double* crow = c + i * n;
            const double ui = u[i];
            double lowest = inf;
            std::size_t index = none;
            for (std::size_t it = 0; it < num_remaining; ++it) {
                const std::size_t j = remaining[it];
                const double r = min_val + crow[j] - ui - v[j];
                if (r < shortest[j]) {
                    prev_row[j] = i;
                    shortest[j] = r;
                }
                if (shortest[j] < lowest ||
                    (shortest[j] == lowest && row_of_col[j] == none)) {
                    lowest = shortest[j];
                    index = it;
                }
            }
            min_val = lowest;
            if (min_val == inf) throw NumericalError("assignment: infeasible cost matrix");
            const std::size_t j = remaining[index];
            if (row_of_col[j] == none)
                sink = j;
            else
                i = row_of_col[j];
            in_sc[j] = 1;
            remaining[index] = remaining[--num_remaining];
        }

        u[cur_row] += min_val;
        for (std::size_t k = 0; k < n; ++k) {
            if (in_sr[k] && k != cur_row) u[k] += min_val - shortest[col_of_row[k]];
            if (in_sc[k]) v[k] -= min_val - shortest[k];
        }

        // augment backwards from the sink
        std::size_t j = sink;
        while (true) {
            const std::size_t pi = prev_row[j];
            row_of_col[j] = pi;
            std::swap(col_of_row[pi], j);
            if (pi == cur_row) break;
        }
    }
    return col_of_row;
}

}  // namespace mflab
