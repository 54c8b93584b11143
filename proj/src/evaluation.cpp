#include "difftts/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

namespace difftts {

PitchTrack extract_pitch(const std::vector<double>& waveform, const FeatureConfig& fc,
                         double search_fmin, double search_fmax) {
    fc.validate();
    if (waveform.size() < static_cast<size_t>(fc.frame_size))
        throw std::invalid_argument("extract_pitch: input shorter than one frame");
    int n_frames = static_cast<int>(waveform.size() / fc.hop);
    int lag_min = std::max(2, static_cast<int>(fc.sample_rate / search_fmax));
    int lag_max = std::min(fc.frame_size - 1, static_cast<int>(fc.sample_rate / search_fmin));

    PitchTrack track;
    track.f0.assign(static_cast<size_t>(n_frames), 0.0);
    track.voiced.assign(static_cast<size_t>(n_frames), false);

    std::vector<double> frame(static_cast<size_t>(fc.frame_size));
    for (int j = 0; j < n_frames; ++j) {
        size_t base = static_cast<size_t>(j) * fc.hop;
        double energy = 0.0;
        for (int n = 0; n < fc.frame_size; ++n) {
            size_t idx = base + n;
            frame[static_cast<size_t>(n)] = idx < waveform.size() ? waveform[idx] : 0.0;
            energy += frame[static_cast<size_t>(n)] * frame[static_cast<size_t>(n)];
        }
        double r0 = energy;
        if (r0 < 1e-6 * fc.frame_size) continue;  // silence

        double best_r = 0.0;
        int best_lag = 0;
        std::vector<double> r(static_cast<size_t>(lag_max) + 2, 0.0);
        for (int lag = lag_min; lag <= lag_max + 1 && lag < fc.frame_size; ++lag) {
            double s = 0.0;
            for (int n = 0; n + lag < fc.frame_size; ++n)
                s += frame[static_cast<size_t>(n)] * frame[static_cast<size_t>(n + lag)];
            r[static_cast<size_t>(lag)] = s;
        }
        for (int lag = lag_min; lag <= lag_max; ++lag) {
            if (r[static_cast<size_t>(lag)] > best_r) {
                best_r = r[static_cast<size_t>(lag)];
                best_lag = lag;
            }
        }
        if (best_lag == 0 || best_r / r0 < 0.25) continue;  // no clear periodicity

        // parabolic refinement around the peak
        double lag_refined = best_lag;
        if (best_lag > lag_min && best_lag + 1 < fc.frame_size) {
            double ym = r[static_cast<size_t>(best_lag - 1)];
            double y0 = r[static_cast<size_t>(best_lag)];
            double yp = r[static_cast<size_t>(best_lag + 1)];
            double denom = ym - 2.0 * y0 + yp;
            if (std::fabs(denom) > 1e-12) {
                double d = 0.5 * (ym - yp) / denom;
                if (std::fabs(d) <= 1.0) lag_refined = best_lag + d;
            }
        }
        track.voiced[static_cast<size_t>(j)] = true;
        track.f0[static_cast<size_t>(j)] = fc.sample_rate / lag_refined;
    }
    return track;
}

std::optional<double> msep(const PitchTrack& pred, const PitchTrack& ref) {
    int n = std::min(pred.frames(), ref.frames());
    double s = 0.0;
    int count = 0;
    for (int i = 0; i < n; ++i) {
        if (!pred.voiced[static_cast<size_t>(i)] || !ref.voiced[static_cast<size_t>(i)]) continue;
        double d = pred.f0[static_cast<size_t>(i)] - ref.f0[static_cast<size_t>(i)];
        s += d * d;
        ++count;
    }
    if (count == 0) return std::nullopt;
    return s / count;
}

double msed(const std::vector<int>& pred, const std::vector<int>& ref) {
    if (pred.size() != ref.size())
        throw std::invalid_argument("msed: phoneme count mismatch");
    if (pred.empty()) throw std::invalid_argument("msed: empty sequences");
    double s = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        double d = static_cast<double>(pred[i]) - ref[i];
        s += d * d;
    }
    return s / static_cast<double>(pred.size());
}

double token_error_rate(const std::vector<int>& pred, const std::vector<int>& ref) {
    if (ref.empty()) return static_cast<double>(pred.size());
    size_t n = pred.size(), m = ref.size();
    std::vector<size_t> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = j;
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = i;
        for (size_t j = 1; j <= m; ++j) {
            size_t sub = prev[j - 1] + (pred[i - 1] == ref[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return static_cast<double>(prev[m]) / static_cast<double>(m);
}

double mel_mse(const std::vector<double>& pred, const std::vector<double>& ref, int n_mels) {
    if (n_mels < 1) throw std::invalid_argument("mel_mse: bad n_mels");
    size_t fp = pred.size() / static_cast<size_t>(n_mels);
    size_t fr = ref.size() / static_cast<size_t>(n_mels);
    size_t frames = std::min(fp, fr);
    if (frames == 0) throw std::invalid_argument("mel_mse: empty mel input");
    double s = 0.0;
    for (size_t i = 0; i < frames * static_cast<size_t>(n_mels); ++i) {
        double d = pred[i] - ref[i];
        s += d * d;
    }
    return s / static_cast<double>(frames * static_cast<size_t>(n_mels));
}

namespace {

std::optional<double> mean_of(const std::vector<std::optional<double>>& vals) {
    double s = 0.0;
    int n = 0;
    for (const auto& v : vals)
        if (v) {
            s += *v;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return s / n;
}

}  // namespace

std::optional<double> MetricReport::mean_msep() const {
    std::vector<std::optional<double>> v;
    for (const auto& u : per_utterance) v.push_back(u.msep);
    return mean_of(v);
}
std::optional<double> MetricReport::mean_msed() const {
    std::vector<std::optional<double>> v;
    for (const auto& u : per_utterance) v.push_back(u.msed);
    return mean_of(v);
}
std::optional<double> MetricReport::mean_ter() const {
    std::vector<std::optional<double>> v;
    for (const auto& u : per_utterance) v.push_back(u.ter);
    return mean_of(v);
}
std::optional<double> MetricReport::mean_mel_mse() const {
    std::vector<std::optional<double>> v;
    for (const auto& u : per_utterance) v.push_back(u.mel_mse);
    return mean_of(v);
}

std::optional<double> MetricReport::median_mel_mse() const {
    std::vector<double> v;
    for (const auto& u : per_utterance)
        if (u.mel_mse) v.push_back(*u.mel_mse);
    if (v.empty()) return std::nullopt;
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string MetricReport::to_json_string() const {
    nlohmann::json j;
    j["pipeline"] = pipeline;
    auto put = [](nlohmann::json& obj, const char* key, const std::optional<double>& v) {
        if (v)
            obj[key] = *v;
        else
            obj[key] = nullptr;
    };
    nlohmann::json agg;
    put(agg, "msep", mean_msep());
    put(agg, "msed", mean_msed());
    put(agg, "ter", mean_ter());
    put(agg, "mel_mse", mean_mel_mse());
    put(agg, "median_mel_mse", median_mel_mse());
    j["aggregate"] = agg;
    nlohmann::json items = nlohmann::json::array();
    for (const auto& u : per_utterance) {
        nlohmann::json o;
        o["id"] = u.id;
        put(o, "msep", u.msep);
        put(o, "msed", u.msed);
        put(o, "ter", u.ter);
        put(o, "mel_mse", u.mel_mse);
        items.push_back(o);
    }
    j["per_utterance"] = items;
    return j.dump(2);
}

std::string MetricReport::to_tsv() const {
    std::ostringstream os;
    os << "id\tmsep\tmsed\tter\tmel_mse\n";
    auto cell = [&](const std::optional<double>& v) {
        if (v)
            os << *v;
        else
            os << "NA";
    };
    for (const auto& u : per_utterance) {
        os << u.id << "\t";
        cell(u.msep);
        os << "\t";
        cell(u.msed);
        os << "\t";
        cell(u.ter);
        os << "\t";
        cell(u.mel_mse);
        os << "\n";
    }
    return os.str();
}

}  // namespace difftts
