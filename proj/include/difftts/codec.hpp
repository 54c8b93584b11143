#pragma once

#include <vector>

#include "difftts/rng.hpp"

namespace difftts {

// Learned codebook mapping frame features to K discrete tokens and back.
// Entries are k-means centroids over a feature corpus; quantization is
// nearest-centroid with lowest-id tie break.
struct Codebook {
    int K = 0;
    int dim = 0;
    std::vector<double> entries;            // K x dim, row-major
    std::vector<double> build_objective;    // k-means objective per iteration

    const double* entry(int id) const { return entries.data() + static_cast<size_t>(id) * dim; }
};

// Reduce an n_mels frame to `dim` features by uniform band pooling (or
// linear interpolation when dim > n_mels). This is the codec's feature map.
std::vector<double> band_pool(const std::vector<double>& frame, int out_dim);

Codebook build_codebook(const std::vector<std::vector<double>>& frames, int K, int dim, Rng& rng,
                        int iterations = 25);

std::vector<int> quantize(const Codebook& cb, const std::vector<std::vector<double>>& frames);
int quantize_one(const Codebook& cb, const double* frame);

std::vector<std::vector<double>> embed(const Codebook& cb, const std::vector<int>& ids);

}  // namespace difftts
