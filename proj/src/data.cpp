// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#include "npft/data.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "npft/common.hpp"

namespace npft {

Corpus corpus_from_bytes(const std::string& bytes, std::string source) {
    Corpus c;
    c.source = std::move(source);
    c.tokens.reserve(bytes.size());
    for (unsigned char b : bytes) c.tokens.push_back(static_cast<int>(b));
    return c;
}

std::string corpus_to_bytes(const Corpus& corpus) {
    std::string out;
    out.reserve(corpus.tokens.size());
    for (int t : corpus.tokens) out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    return out;
}

CorpusSplits load_corpus(const std::string& path, std::array<double, 3> fractions) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) throw std::runtime_error("load_corpus: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    if (bytes.empty()) throw std::runtime_error("load_corpus: empty file " + path);

    const double total = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("load_corpus: split fractions must sum to 1");

    const size_t n = bytes.size();
    const size_t n0 = static_cast<size_t>(std::floor(fractions[0] * static_cast<double>(n)));
    const size_t n1 =
        static_cast<size_t>(std::floor((fractions[0] + fractions[1]) * static_cast<double>(n)));

    CorpusSplits s;
    s.train = corpus_from_bytes(bytes.substr(0, n0), path + ":train");
    s.valid = corpus_from_bytes(bytes.substr(n0, n1 - n0), path + ":valid");
    s.calib = corpus_from_bytes(bytes.substr(n1), path + ":calib");
    return s;
}

CalibrationSet sample_calibration(const Corpus& corpus, int n, int seq_len, uint64_t seed) {
    if (n <= 0 || seq_len <= 0) throw std::invalid_argument("sample_calibration: n, L must be > 0");
    if (static_cast<int>(corpus.tokens.size()) < seq_len)
        throw std::invalid_argument("sample_calibration: corpus shorter than one segment");

    CalibrationSet cs;
    cs.seq_len = seq_len;
    cs.seed = seed;
    cs.segments.reserve(static_cast<size_t>(n));

    Rng rng(seed);
    const int max_start = static_cast<int>(corpus.tokens.size()) - seq_len;
    std::uniform_int_distribution<int> dist(0, max_start);
    for (int i = 0; i < n; ++i) {
        const int start = dist(rng);
        cs.segments.emplace_back(corpus.tokens.begin() + start,
                                 corpus.tokens.begin() + start + seq_len);
    }
    return cs;
}

namespace {

// Zipf-ish word list built once per seed; words are short lowercase strings.
std::vector<std::string> make_word_list(Rng& rng, int n_words) {
    static const char* consonants = "bcdfghjklmnprstvwz";
    static const char* vowels = "aeiou";
    std::uniform_int_distribution<int> clen(1, 3);
    std::uniform_int_distribution<int> ci(0, 17);
    std::uniform_int_distribution<int> vi(0, 4);
    std::vector<std::string> words;
    words.reserve(static_cast<size_t>(n_words));
    for (int w = 0; w < n_words; ++w) {
        std::string word;
        const int syllables = clen(rng);
        for (int s = 0; s < syllables; ++s) {
            word.push_back(consonants[ci(rng)]);
            word.push_back(vowels[vi(rng)]);
            if (s + 1 == syllables && (w % 3 == 0)) word.push_back(consonants[ci(rng)]);
        }
        words.push_back(std::move(word));
    }
    return words;
}

}  // namespace

std::string generate_synthetic_text(size_t n_bytes, uint64_t seed) {
    Rng rng(derive_seed(seed, "synthetic-text"));
    const int n_words = 512;
    const std::vector<std::string> words = make_word_list(rng, n_words);

    // power-law weights over words
    std::vector<double> weights(n_words);
    for (int i = 0; i < n_words; ++i) weights[static_cast<size_t>(i)] = 1.0 / std::pow(i + 1.0, 1.1);
    std::discrete_distribution<int> word_dist(weights.begin(), weights.end());
    std::uniform_int_distribution<int> sentence_len(4, 14);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    std::string out;
    out.reserve(n_bytes + 64);
    while (out.size() < n_bytes) {
        const int len = sentence_len(rng);
        for (int i = 0; i < len; ++i) {
            std::string w = words[static_cast<size_t>(word_dist(rng))];
            if (i == 0) w[0] = static_cast<char>(w[0] - 'a' + 'A');
            out += w;
            if (i + 1 < len) out.push_back(i % 5 == 3 && u(rng) < 0.4 ? ',' : ' ');
            if (i + 1 < len && out.back() == ',') out.push_back(' ');
        }
        out.push_back('.');
        out.push_back(u(rng) < 0.2 ? '\n' : ' ');
    }
    out.resize(n_bytes);
    return out;
}

}  // namespace npft
