#include "flowplan/grid.hpp"

#include "flowplan/errors.hpp"

namespace flowplan {

std::vector<int> rle_encode(const BoolGrid& g) {
    std::vector<int> runs;
    std::uint8_t current = 0;  // first run counts false cells
    int count = 0;
    for (const auto v : g.data()) {
        const std::uint8_t bit = v ? 1 : 0;
        if (bit == current) {
            ++count;
        } else {
            runs.push_back(count);
            current = bit;
            count = 1;
        }
    }
    runs.push_back(count);
    return runs;
}

BoolGrid rle_decode(const std::vector<int>& runs, int height, int width) {
    BoolGrid g(height, width, 0);
    std::size_t pos = 0;
    std::uint8_t current = 0;
    const std::size_t total = g.data().size();
    for (const int run : runs) {
        if (run < 0 || pos + static_cast<std::size_t>(run) > total)
            throw DataError("rle_decode: runs exceed grid size");
        for (int i = 0; i < run; ++i) g.data()[pos++] = current;
        current = current ? 0 : 1;
    }
    if (pos != total) throw DataError("rle_decode: runs do not cover grid");
    return g;
}

}  // namespace flowplan
