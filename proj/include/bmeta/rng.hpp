#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace bmeta {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

// Independent stream for a path of indices below a root seed, e.g.
// (seed, {chain}) or (seed, {scenario, replication, attempt}).
Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

double draw_normal(Rng& rng, double mean, double sd);
double draw_uniform(Rng& rng);  // (0, 1)
double draw_beta(Rng& rng, double alpha, double beta);
double draw_exponential(Rng& rng, double rate);

}  // namespace bmeta
