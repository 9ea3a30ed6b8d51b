#include "maskfuse/stratify.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <utility>

#include "maskfuse/errors.hpp"
#include "maskfuse/rng.hpp"

namespace maskfuse {

namespace {

using Pair = std::pair<std::size_t, std::size_t>;

std::vector<std::size_t> positives(const std::vector<double>& y, const std::vector<double>& m) {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < y.size(); ++c)
    if (y[c] == 1.0 && m.at(c) != 0.0) out.push_back(c);
  return out;
}

}  // namespace

std::vector<std::size_t> stratified_partition(const LabelMatrix& labels, const LabelMatrix& masks,
                                              const std::vector<double>& proportions,
                                              std::uint64_t seed) {
  const std::size_t n = labels.size(), parts = proportions.size();
  if (masks.size() != n) throw ShapeError("stratify: labels and masks differ in length");
  if (parts < 2) throw PreconditionError("stratify: at least 2 parts required");
  if (parts > n) {
    throw PreconditionError("stratify: " + std::to_string(parts) + " parts for " + std::to_string(n) +
                            " samples");
  }
  double total = 0.0;
  for (double p : proportions) {
    if (!(p > 0.0)) throw PreconditionError("stratify: part proportions must be positive");
    total += p;
  }

  // Pairs carried by every sample, indexed densely.
  std::map<Pair, std::size_t> pair_index;
  std::vector<std::vector<std::size_t>> sample_pairs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto pos = positives(labels[i], masks[i]);
    for (std::size_t a = 0; a < pos.size(); ++a) {
      for (std::size_t b = a; b < pos.size(); ++b) {
        auto [it, fresh] = pair_index.try_emplace({pos[a], pos[b]}, pair_index.size());
        (void)fresh;
        sample_pairs[i].push_back(it->second);
      }
    }
  }
  const std::size_t num_pairs = pair_index.size();
  std::vector<std::vector<std::size_t>> carriers(num_pairs);
  std::vector<double> remaining(num_pairs, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto p : sample_pairs[i]) {
      carriers[p].push_back(i);
      remaining[p] += 1.0;
    }
  }
  std::vector<std::vector<double>> demand(parts, std::vector<double>(num_pairs));
  std::vector<double> demand_total(parts);
  for (std::size_t f = 0; f < parts; ++f) {
    const double share = proportions[f] / total;
    demand_total[f] = share * static_cast<double>(n);
    for (std::size_t p = 0; p < num_pairs; ++p) demand[f][p] = share * remaining[p];
  }

  Rng rng(derive_seed(seed, "stratify"));
  constexpr auto kUnassigned = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> assignment(n, kUnassigned);

  auto place = [&](std::size_t i, const std::vector<std::size_t>& candidates) {
    const std::size_t f = candidates.size() == 1 ? candidates[0] : candidates[rng.index(candidates.size())];
    assignment[i] = f;
    demand_total[f] -= 1.0;
    for (auto p : sample_pairs[i]) {
      demand[f][p] -= 1.0;
      remaining[p] -= 1.0;
    }
  };
  auto best_parts = [&](const std::vector<double>* primary) {
    std::vector<std::size_t> cands;
    double best_primary = -std::numeric_limits<double>::infinity();
    double best_total = -std::numeric_limits<double>::infinity();
    for (std::size_t f = 0; f < parts; ++f) {
      const double pv = primary ? (*primary)[f] : 0.0;
      if (pv > best_primary || (pv == best_primary && demand_total[f] > best_total)) {
        best_primary = pv;
        best_total = demand_total[f];
        cands.assign(1, f);
      } else if (pv == best_primary && demand_total[f] == best_total) {
        cands.push_back(f);
      }
    }
    return cands;
  };

  while (true) {
    std::size_t pick = num_pairs;
    for (std::size_t p = 0; p < num_pairs; ++p) {
      if (remaining[p] > 0.0 && (pick == num_pairs || remaining[p] < remaining[pick])) pick = p;
    }
    if (pick == num_pairs) break;
    std::vector<std::size_t> todo;
    for (auto i : carriers[pick])
      if (assignment[i] == kUnassigned) todo.push_back(i);
    rng.shuffle(todo);
    std::vector<double> column(parts);
    for (auto i : todo) {
      for (std::size_t f = 0; f < parts; ++f) column[f] = demand[f][pick];
      place(i, best_parts(&column));
    }
  }
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < n; ++i)
    if (assignment[i] == kUnassigned) rest.push_back(i);
  rng.shuffle(rest);
  for (auto i : rest) place(i, best_parts(nullptr));
  return assignment;
}

std::vector<std::size_t> iterative_stratified_kfold(const LabelMatrix& labels,
                                                    const LabelMatrix& masks, std::size_t k,
                                                    std::uint64_t seed) {
  if (k < 2) throw PreconditionError("stratify: k must be >= 2");
  if (k > labels.size()) {
    throw PreconditionError("stratify: k = " + std::to_string(k) + " exceeds " +
                            std::to_string(labels.size()) + " samples");
  }
  return stratified_partition(labels, masks, std::vector<double>(k, 1.0), seed);
}

std::vector<bool> stratified_holdout(const LabelMatrix& labels, const LabelMatrix& masks,
                                     double validation_share, std::uint64_t seed) {
  if (!(validation_share > 0.0 && validation_share < 1.0)) {
    throw PreconditionError("stratify: validation share must be in (0, 1)");
  }
  const auto parts =
      stratified_partition(labels, masks, {validation_share, 1.0 - validation_share}, seed);
  std::vector<bool> out(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) out[i] = parts[i] == 0;
  return out;
}

}  // namespace maskfuse
