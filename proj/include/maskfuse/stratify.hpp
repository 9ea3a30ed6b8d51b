#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace maskfuse {

using LabelMatrix = std::vector<std::vector<double>>;

// Second-order iterative stratification into parts of the given relative
// sizes. Only observed positives (label 1 with mask 1) count. Label pairs
// (including a label paired with itself) are served rarest first; each
// sample carrying the pair goes to the part with the largest remaining
// demand for it, then the largest remaining total demand, then a seeded draw.
// Samples without observed positives fill the largest total deficit.
std::vector<std::size_t> stratified_partition(const LabelMatrix& labels, const LabelMatrix& masks,
                                              const std::vector<double>& proportions,
                                              std::uint64_t seed);

// Fold index in [0, k) per sample.
std::vector<std::size_t> iterative_stratified_kfold(const LabelMatrix& labels,
                                                    const LabelMatrix& masks, std::size_t k,
                                                    std::uint64_t seed);

// True for the samples placed in the validation share (20% by default).
std::vector<bool> stratified_holdout(const LabelMatrix& labels, const LabelMatrix& masks,
                                     double validation_share, std::uint64_t seed);

}  // namespace maskfuse
