#pragma once

#include "splatsr/grad.hpp"
#include "splatsr/rng.hpp"

namespace splatsr {

/// Running per-primitive screen-space gradient statistics between two
/// densification events. Arrays stay aligned with scene ordering.
struct DensifyStats {
    std::vector<double> grad_norm_sum;     // sum over views of ||ndc_grad||_2
    std::vector<int> view_count;           // views the primitive contributed to
    std::vector<double> max_pixel_radius;  // bookkeeping for screen-size pruning

    DensifyStats() = default;
    explicit DensifyStats(std::size_t n) { reset(n); }
    void reset(std::size_t n);
    std::size_t size() const { return grad_norm_sum.size(); }
};

/// Adds one view's contribution: visible primitives get grad_norm_sum +=
/// ||ndc_grad|| and view_count += 1; invisible ones are untouched. Pass the
/// projections to also track the max screen radius.
void accumulate_stats(DensifyStats& stats, const ParamGrads& grads,
                      const std::vector<bool>& visibility,
                      const std::vector<Projection2D>* projections = nullptr);

/// Indices with view_count > 0 and mean gradient norm above the threshold,
/// ascending.
std::vector<std::uint32_t> select_candidates(const DensifyStats& stats, double tau_pos);

/// Each candidate is independently dropped when rand < p; survivors keep
/// their order.
std::vector<std::uint32_t> dropout_mask(const std::vector<std::uint32_t>& candidates, double p,
                                        RngStream& rng);

/// densify_apply result: the new scene plus, for each new primitive, the old
/// index its optimizer state carries over from (-1 for freshly created
/// children, which start from zeroed moments).
struct DensifyOutcome {
    Scene scene;
    std::vector<std::int64_t> moment_source;
};

/// Clone-or-split per retained primitive: max activated scale at or below
/// percent_dense * extent means CLONE (append an exact copy); otherwise SPLIT
/// (parent removed; two children sampled from the parent's own 3D Gaussian,
/// log_scale shrunk by ln 1.6). Survivors keep their order; new primitives
/// are appended by ascending source index, split children in sample order.
DensifyOutcome densify_apply(const Scene& scene, const std::vector<std::uint32_t>& retained,
                             double percent_dense, RngStream& rng);

struct PruneOutcome {
    Scene scene;
    std::vector<std::uint32_t> kept; // old indices of the survivors, ascending
};

/// Removes primitives with activated opacity below the threshold. Throws if
/// nothing would survive.
PruneOutcome prune(const Scene& scene, double opacity_min);

} // namespace splatsr
