#include "difftts/codec.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace difftts {

namespace {

double sq_dist(const double* a, const double* b, int dim) {
    double s = 0.0;
    for (int i = 0; i < dim; ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace

std::vector<double> band_pool(const std::vector<double>& frame, int out_dim) {
    int in_dim = static_cast<int>(frame.size());
    if (out_dim < 1) throw std::invalid_argument("band_pool: out_dim must be positive");
    if (out_dim == in_dim) return frame;
    std::vector<double> out(static_cast<size_t>(out_dim));
    if (out_dim < in_dim) {
        // average contiguous band groups
        for (int o = 0; o < out_dim; ++o) {
            int lo = o * in_dim / out_dim;
            int hi = (o + 1) * in_dim / out_dim;
            double s = 0.0;
            for (int i = lo; i < hi; ++i) s += frame[i];
            out[o] = s / (hi - lo);
        }
    } else {
        // linear interpolation upsample
        for (int o = 0; o < out_dim; ++o) {
            double pos = static_cast<double>(o) * (in_dim - 1) / (out_dim - 1);
            int i0 = static_cast<int>(pos);
            int i1 = std::min(i0 + 1, in_dim - 1);
            double w = pos - i0;
            out[o] = (1.0 - w) * frame[i0] + w * frame[i1];
        }
    }
    return out;
}

Codebook build_codebook(const std::vector<std::vector<double>>& frames, int K, int dim, Rng& rng,
                        int iterations) {
    if (K < 2) throw std::invalid_argument("build_codebook: K must be >= 2");
    int n = static_cast<int>(frames.size());
    if (n < K)
        throw std::invalid_argument("build_codebook: corpus size " + std::to_string(n) +
                                    " smaller than K " + std::to_string(K));
    for (const auto& f : frames)
        if (static_cast<int>(f.size()) != dim)
            throw std::invalid_argument("build_codebook: frame dimension mismatch");

    Codebook cb;
    cb.K = K;
    cb.dim = dim;
    cb.entries.resize(static_cast<size_t>(K) * dim);

    // k-means++ seeding
    std::vector<double> min_d(static_cast<size_t>(n), std::numeric_limits<double>::max());
    int first = rng.uniform_int(0, n - 1);
    std::copy(frames[first].begin(), frames[first].end(), cb.entries.begin());
    for (int k = 1; k < K; ++k) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            double d = sq_dist(frames[i].data(), cb.entry(k - 1), dim);
            min_d[i] = std::min(min_d[i], d);
            total += min_d[i];
        }
        int pick = 0;
        if (total > 0.0) {
            double r = rng.uniform() * total;
            double acc = 0.0;
            for (int i = 0; i < n; ++i) {
                acc += min_d[i];
                if (acc >= r) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.uniform_int(0, n - 1);
        }
        std::copy(frames[pick].begin(), frames[pick].end(),
                  cb.entries.begin() + static_cast<size_t>(k) * dim);
    }

    // Lloyd iterations
    std::vector<int> assign(static_cast<size_t>(n));
    std::vector<int> counts(static_cast<size_t>(K));
    std::vector<double> sums(static_cast<size_t>(K) * dim);
    for (int it = 0; it < iterations; ++it) {
        double objective = 0.0;
        for (int i = 0; i < n; ++i) {
            int best = quantize_one(cb, frames[i].data());
            assign[i] = best;
            objective += sq_dist(frames[i].data(), cb.entry(best), dim);
        }
        cb.build_objective.push_back(objective);

        std::fill(counts.begin(), counts.end(), 0);
        std::fill(sums.begin(), sums.end(), 0.0);
        for (int i = 0; i < n; ++i) {
            ++counts[assign[i]];
            for (int d = 0; d < dim; ++d)
                sums[static_cast<size_t>(assign[i]) * dim + d] += frames[i][d];
        }
        for (int k = 0; k < K; ++k) {
            if (counts[k] == 0) continue;  // handled below
            for (int d = 0; d < dim; ++d)
                cb.entries[static_cast<size_t>(k) * dim + d] =
                    sums[static_cast<size_t>(k) * dim + d] / counts[k];
        }
        // re-seed empty clusters from the point farthest from its centroid
        for (int k = 0; k < K; ++k) {
            if (counts[k] > 0) continue;
            double worst = -1.0;
            int worst_i = 0;
            for (int i = 0; i < n; ++i) {
                double d = sq_dist(frames[i].data(), cb.entry(assign[i]), dim);
                if (d > worst) {
                    worst = d;
                    worst_i = i;
                }
            }
            std::copy(frames[worst_i].begin(), frames[worst_i].end(),
                      cb.entries.begin() + static_cast<size_t>(k) * dim);
        }
    }

    // duplicate centroids would break nearest-id determinism; nudge apart
    for (int a = 0; a < K; ++a)
        for (int b = a + 1; b < K; ++b)
            if (sq_dist(cb.entry(a), cb.entry(b), dim) == 0.0)
                cb.entries[static_cast<size_t>(b) * dim] +=
                    1e-9 * (1.0 + std::fabs(cb.entries[static_cast<size_t>(b) * dim]));
    return cb;
}

int quantize_one(const Codebook& cb, const double* frame) {
    int best = 0;
    double best_d = sq_dist(frame, cb.entry(0), cb.dim);
    for (int k = 1; k < cb.K; ++k) {
        double d = sq_dist(frame, cb.entry(k), cb.dim);
        if (d < best_d) {  // strict: ties keep the lowest id
            best_d = d;
            best = k;
        }
    }
    return best;
}

std::vector<int> quantize(const Codebook& cb, const std::vector<std::vector<double>>& frames) {
    std::vector<int> ids(frames.size());
    for (size_t i = 0; i < frames.size(); ++i) {
        if (static_cast<int>(frames[i].size()) != cb.dim)
            throw std::invalid_argument("quantize: frame dimension mismatch");
        ids[i] = quantize_one(cb, frames[i].data());
    }
    return ids;
}

std::vector<std::vector<double>> embed(const Codebook& cb, const std::vector<int>& ids) {
    std::vector<std::vector<double>> out(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= cb.K)
            throw std::out_of_range("embed: token id " + std::to_string(ids[i]) +
                                    " outside [0, " + std::to_string(cb.K) + ")");
        out[i].assign(cb.entry(ids[i]), cb.entry(ids[i]) + cb.dim);
    }
    return out;
}

}  // namespace difftts
