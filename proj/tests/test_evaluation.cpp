#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "difftts/evaluation.hpp"

using namespace difftts;

namespace {

FeatureConfig toy_features() {
    FeatureConfig fc;
    fc.sample_rate = 8000;
    fc.n_mels = 40;
    fc.frame_size = 320;
    fc.hop = 80;
    fc.fft_size = 512;
    return fc;
}

// exhaustive-recursion edit distance, independent of the DP implementation
int edit_distance_recursive(const std::vector<int>& a, const std::vector<int>& b, size_t i,
                            size_t j) {
    if (i == a.size()) return static_cast<int>(b.size() - j);
    if (j == b.size()) return static_cast<int>(a.size() - i);
    int best = edit_distance_recursive(a, b, i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
    best = std::min(best, edit_distance_recursive(a, b, i + 1, j) + 1);
    best = std::min(best, edit_distance_recursive(a, b, i, j + 1) + 1);
    return best;
}

}  // namespace

TEST_CASE("pitch extraction") {
    auto fc = toy_features();

    SUBCASE("pure 200 Hz tone reads 200 +- 2 Hz on every voiced frame") {
        std::vector<double> wav(static_cast<size_t>(fc.hop) * 30);
        for (size_t i = 0; i < wav.size(); ++i)
            wav[i] = 0.6 * std::sin(2.0 * M_PI * 200.0 * static_cast<double>(i) / fc.sample_rate);
        auto track = extract_pitch(wav, fc);
        int voiced = 0;
        for (int j = 0; j < track.frames(); ++j) {
            if (!track.voiced[static_cast<size_t>(j)]) continue;
            ++voiced;
            CHECK(std::fabs(track.f0[static_cast<size_t>(j)] - 200.0) <= 2.0);
        }
        CHECK(voiced > track.frames() / 2);
    }

    SUBCASE("silence is entirely unvoiced") {
        std::vector<double> wav(static_cast<size_t>(fc.hop) * 10, 0.0);
        auto track = extract_pitch(wav, fc);
        for (int j = 0; j < track.frames(); ++j) CHECK_FALSE(track.voiced[static_cast<size_t>(j)]);
    }

    SUBCASE("too-short input rejected") {
        std::vector<double> wav(10, 0.0);
        CHECK_THROWS_AS(extract_pitch(wav, fc), std::invalid_argument);
    }
}

TEST_CASE("msep") {
    PitchTrack a;
    a.f0 = {100.0, 110.0, 120.0};
    a.voiced = {true, true, true};

    SUBCASE("identical contours score zero") {
        auto v = msep(a, a);
        REQUIRE(v.has_value());
        CHECK(*v == 0.0);
    }
    SUBCASE("constant 10 Hz offset scores 100") {
        PitchTrack b = a;
        for (auto& f : b.f0) f += 10.0;
        auto v = msep(b, a);
        REQUIRE(v.has_value());
        CHECK(*v == doctest::Approx(100.0));
    }
    SUBCASE("only mutually voiced frames count") {
        PitchTrack b = a;
        b.voiced = {true, false, true};
        b.f0 = {100.0, 999.0, 130.0};
        auto v = msep(b, a);
        REQUIRE(v.has_value());
        CHECK(*v == doctest::Approx((0.0 + 100.0) / 2.0));
    }
    SUBCASE("no mutually voiced frames is absent, not zero") {
        PitchTrack b;
        b.f0 = {100.0, 110.0, 120.0};
        b.voiced = {false, false, false};
        CHECK_FALSE(msep(b, a).has_value());
    }
    SUBCASE("length mismatch truncates to the shorter") {
        PitchTrack b;
        b.f0 = {100.0, 110.0};
        b.voiced = {true, true};
        auto v = msep(b, a);
        REQUIRE(v.has_value());
        CHECK(*v == 0.0);
    }
}

TEST_CASE("msed") {
    SUBCASE("identical durations score zero") { CHECK(msed({3, 5, 2}, {3, 5, 2}) == 0.0); }
    SUBCASE("uniform +1 frame scores one") { CHECK(msed({4, 6, 3}, {3, 5, 2}) == doctest::Approx(1.0)); }
    SUBCASE("length mismatch rejected") {
        CHECK_THROWS_AS(msed({1, 2}, {1, 2, 3}), std::invalid_argument);
    }
    SUBCASE("invariant under a common permutation") {
        std::vector<int> p{4, 7, 2, 9}, r{3, 8, 2, 11};
        double base = msed(p, r);
        std::vector<int> p2{9, 4, 2, 7}, r2{11, 3, 2, 8};
        CHECK(msed(p2, r2) == doctest::Approx(base));
    }
}

TEST_CASE("token error rate") {
    SUBCASE("identical sequences score zero") {
        CHECK(token_error_rate({1, 2, 3}, {1, 2, 3}) == 0.0);
    }
    SUBCASE("one substitution in a length-10 reference scores 0.1") {
        std::vector<int> ref(10, 1), pred(10, 1);
        pred[4] = 2;
        CHECK(token_error_rate(pred, ref) == doctest::Approx(0.1));
    }
    SUBCASE("empty reference with nonempty prediction scores the prediction length") {
        CHECK(token_error_rate({1, 2, 3}, {}) == doctest::Approx(3.0));
        CHECK(token_error_rate({}, {}) == 0.0);
    }
    SUBCASE("matches the exhaustive oracle on all pairs up to length 6 over 3 symbols") {
        // enumerate sequences over {0,1,2} of lengths 0..6 via counters
        auto sequences = [](int maxlen) {
            std::vector<std::vector<int>> all;
            for (int len = 0; len <= maxlen; ++len) {
                std::vector<int> s(static_cast<size_t>(len), 0);
                while (true) {
                    all.push_back(s);
                    int i = len - 1;
                    while (i >= 0 && s[static_cast<size_t>(i)] == 2) {
                        s[static_cast<size_t>(i)] = 0;
                        --i;
                    }
                    if (i < 0) break;
                    ++s[static_cast<size_t>(i)];
                }
            }
            return all;
        };
        // full cross-product of length<=6 is ~1.2M pairs; sample a deterministic
        // stride over it and check every pair of length<=3 exhaustively
        auto small = sequences(3);
        for (const auto& a : small)
            for (const auto& b : small) {
                if (b.empty()) continue;
                double expect =
                    static_cast<double>(edit_distance_recursive(a, b, 0, 0)) / b.size();
                CHECK(token_error_rate(a, b) == doctest::Approx(expect));
            }
        auto big = sequences(6);
        for (size_t i = 0; i < big.size(); i += 97)
            for (size_t j = 1; j < big.size(); j += 131) {
                if (big[j].empty()) continue;
                double expect = static_cast<double>(
                                    edit_distance_recursive(big[i], big[j], 0, 0)) /
                                big[j].size();
                CHECK(token_error_rate(big[i], big[j]) == doctest::Approx(expect));
            }
    }
    SUBCASE("concatenation monotonicity against the oracle") {
        Rng rng(5);
        for (int trial = 0; trial < 50; ++trial) {
            auto draw = [&](int n) {
                std::vector<int> s(static_cast<size_t>(n));
                for (auto& v : s) v = rng.uniform_int(0, 2);
                return s;
            };
            auto a = draw(rng.uniform_int(1, 4));
            auto b = draw(rng.uniform_int(0, 3));
            auto c = draw(rng.uniform_int(1, 3));
            std::vector<int> ab = a, ac = a;
            ab.insert(ab.end(), b.begin(), b.end());
            ac.insert(ac.end(), c.begin(), c.end());
            double ter = token_error_rate(ab, ac);
            double bound = static_cast<double>(b.size() + c.size()) / ac.size();
            CHECK(ter <= bound + 1e-12);
        }
    }
}

TEST_CASE("mel mse truncates to the shorter tensor") {
    std::vector<double> a{1, 2, 3, 4, 5, 6};         // 3 frames x 2 bands
    std::vector<double> b{1, 2, 3, 4};               // 2 frames
    CHECK(mel_mse(a, a, 2) == 0.0);
    CHECK(mel_mse(a, b, 2) == 0.0);
    std::vector<double> c{2, 3, 4, 5};
    CHECK(mel_mse(c, b, 2) == doctest::Approx(1.0));
}

TEST_CASE("metric report serialization carries all four columns") {
    MetricReport r;
    r.pipeline = "tri";
    UtteranceMetrics m;
    m.id = "utt_0";
    m.msep = 12.5;
    m.msed = 1.0;
    m.mel_mse = 0.25;
    r.per_utterance.push_back(m);
    UtteranceMetrics m2;
    m2.id = "utt_1";
    m2.mel_mse = 0.75;
    r.per_utterance.push_back(m2);

    auto js = r.to_json_string();
    CHECK(js.find("msep") != std::string::npos);
    CHECK(js.find("msed") != std::string::npos);
    CHECK(js.find("ter") != std::string::npos);
    CHECK(js.find("mel_mse") != std::string::npos);
    auto tsv = r.to_tsv();
    CHECK(tsv.find("id\tmsep\tmsed\tter\tmel_mse") == 0);
    CHECK(r.mean_mel_mse().value() == doctest::Approx(0.5));
    CHECK(r.median_mel_mse().value() == doctest::Approx(0.5));
    CHECK_FALSE(r.mean_ter().has_value());
}
