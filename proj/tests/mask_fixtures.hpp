#pragma once

#include "tamms/metrics/metrics.hpp"

namespace tamms::test {

// 10x10 block at rows/cols 5..14 of a 40x40 grid: area 100, centroid (0.25, 0.25).
inline metrics::ChangeMask block_mask_40() {
    metrics::ChangeMask m(40, 40);
    m.fill_rect(5, 5, 15, 15);
    return m;
}

// Area 150 with centroid (0.35, 0.25): a 14x10 rectangle (rows 3..16, cols
// 9..18) plus a 5-pixel row above (cols 12..16) and below (cols 11..15),
// placed point-symmetrically about pixel centre (x, y) = (14, 10).
inline metrics::ChangeMask shifted_mask_40() {
    metrics::ChangeMask m(40, 40);
    m.fill_rect(3, 9, 17, 19);
    m.fill_rect(2, 12, 3, 17);
    m.fill_rect(17, 11, 18, 16);
    return m;
}

// Two 2x2 blocks in a 20x20 grid with centroids (0.25, 0.25) and (0.35, 0.25).
inline metrics::ChangeMask small_block_20(std::size_t col) {
    metrics::ChangeMask m(20, 20);
    m.fill_rect(4, col, 6, col + 2);
    return m;
}

}  // namespace tamms::test
