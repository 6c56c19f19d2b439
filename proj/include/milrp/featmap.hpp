// Scalp grid placement and the 6x7x12 max/min feature tensor.
#pragma once

#include "milrp/core.hpp"
#include "milrp/dsp.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace milrp::featmap {

inline constexpr std::size_t kGridRows = 6;
inline constexpr std::size_t kGridCols = 7;
inline constexpr std::size_t kBands = 6;
inline constexpr std::size_t kPlanes = 2 * kBands;
inline constexpr Shape3 kTensorShape{kGridRows, kGridCols, kPlanes};

struct Cell {
    std::size_t row = 0;
    std::size_t col = 0;
    friend auto operator<=>(const Cell&, const Cell&) = default;
};

class ChannelGrid {
public:
    ChannelGrid() = default;

    /// Builds a grid from (name, cell) placements; rejects out-of-range or
    /// shared cells and duplicate names.
    explicit ChannelGrid(std::vector<std::pair<std::string, Cell>> placements) : placements_(std::move(placements))
    {
        std::set<Cell> used;
        std::set<std::string> names;
        for (const auto& [name, cell] : placements_) {
            if (cell.row >= kGridRows || cell.col >= kGridCols)
                throw InputError("channel " + name + " placed outside the 6x7 grid");
            if (!used.insert(cell).second) throw InputError("channel " + name + " shares a grid cell");
            if (!names.insert(name).second) throw InputError("channel " + name + " placed twice");
        }
    }

    const std::vector<std::pair<std::string, Cell>>& placements() const { return placements_; }
    std::size_t size() const { return placements_.size(); }

    std::optional<Cell> find(const std::string& name) const
    {
        for (const auto& [n, cell] : placements_)
            if (n == name) return cell;
        return std::nullopt;
    }

    Cell at(const std::string& name) const
    {
        if (auto c = find(name)) return *c;
        throw InputError("channel " + name + " is not on the grid");
    }

    std::optional<std::string> channel_at(Cell cell) const
    {
        for (const auto& [n, c] : placements_)
            if (c == cell) return n;
        return std::nullopt;
    }

    /// Order-independent digest of the placement table.
    std::uint64_t hash() const
    {
        auto sorted = placements_;
        std::sort(sorted.begin(), sorted.end());
        Fnv1a h;
        for (const auto& [name, cell] : sorted)
            h.update(name + ":" + std::to_string(cell.row) + "," + std::to_string(cell.col) + ";");
        return h.digest();
    }

private:
    std::vector<std::pair<std::string, Cell>> placements_;
};

/// The 22-channel motor-imagery montage projected onto the 6x7 grid.
inline const ChannelGrid& default_grid()
{
    static const ChannelGrid grid({
        {"Fz", {0, 3}},
        {"FC3", {1, 1}}, {"FC1", {1, 2}}, {"FCz", {1, 3}}, {"FC2", {1, 4}}, {"FC4", {1, 5}},
        {"C5", {2, 0}}, {"C3", {2, 1}}, {"C1", {2, 2}}, {"Cz", {2, 3}}, {"C2", {2, 4}}, {"C4", {2, 5}}, {"C6", {2, 6}},
        {"CP3", {3, 1}}, {"CP1", {3, 2}}, {"CPz", {3, 3}}, {"CP2", {3, 4}}, {"CP4", {3, 5}},
        {"P1", {4, 2}}, {"Pz", {4, 3}}, {"P2", {4, 4}},
        {"POz", {5, 3}},
    });
    return grid;
}

/// Channel names of the default grid in montage order.
inline std::vector<std::string> default_channel_names()
{
    std::vector<std::string> names;
    for (const auto& [name, cell] : default_grid().placements()) names.push_back(name);
    return names;
}

struct FeatureTensor {
    Tensor3 planes{kTensorShape};
    Label label = Label::left;

    friend bool operator==(const FeatureTensor&, const FeatureTensor&) = default;
};

struct Extremes {
    std::vector<double> max;
    std::vector<double> min;
};

inline Extremes extremes(const dsp::Segment& seg)
{
    Extremes e;
    const std::size_t n = seg.data.rows();
    e.max.assign(n, -std::numeric_limits<double>::infinity());
    e.min.assign(n, std::numeric_limits<double>::infinity());
    for (std::size_t c = 0; c < n; ++c) {
        for (double v : seg.data.row(c)) {
            e.max[c] = std::max(e.max[c], v);
            e.min[c] = std::min(e.min[c], v);
        }
    }
    return e;
}

/// Plane 2b holds band-b maxima and plane 2b+1 band-b minima at each placed
/// channel's cell; cells without a channel stay 0.
inline FeatureTensor build_feature_tensor(const std::vector<dsp::Segment>& segments,
                                          const std::vector<std::string>& channel_names, const ChannelGrid& grid,
                                          Label label = Label::left)
{
    if (segments.size() != kBands)
        throw InputError("expected " + std::to_string(kBands) + " band segments, got " + std::to_string(segments.size()));
    for (const auto& s : segments)
        if (s.data.rows() != channel_names.size())
            throw InputError("segment has " + std::to_string(s.data.rows()) + " channels but " +
                             std::to_string(channel_names.size()) + " names were given");

    std::vector<std::size_t> source(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto& name = grid.placements()[i].first;
        const auto it = std::find(channel_names.begin(), channel_names.end(), name);
        if (it == channel_names.end()) throw InputError("grid channel " + name + " missing from segment");
        source[i] = static_cast<std::size_t>(it - channel_names.begin());
    }

    FeatureTensor ft;
    ft.label = label;
    for (std::size_t b = 0; b < kBands; ++b) {
        const Extremes e = extremes(segments[b]);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const Cell cell = grid.placements()[i].second;
            ft.planes(cell.row, cell.col, 2 * b) = e.max[source[i]];
            ft.planes(cell.row, cell.col, 2 * b + 1) = e.min[source[i]];
        }
    }
    return ft;
}

/// Full per-trial feature path: filter the continuous trial in each band,
/// cut the window, re-reference, then take extremes onto the grid.
inline FeatureTensor trial_to_tensor(const Matrix& trial, std::size_t cue_sample, Label label,
                                     const std::vector<std::string>& channel_names, const dsp::FilterBank& bank,
                                     const dsp::Window& window, const ChannelGrid& grid, std::size_t trial_index = 0)
{
    std::vector<dsp::Segment> segs;
    segs.reserve(bank.sections.size());
    for (const auto& cascade : bank.sections) {
        const Matrix filtered = dsp::filtfilt_rows(cascade, trial);
        segs.push_back(dsp::local_average_reference(
            dsp::segment(filtered, cue_sample, window, bank.sample_rate, trial_index)));
    }
    return build_feature_tensor(segs, channel_names, grid, label);
}

} // namespace milrp::featmap
