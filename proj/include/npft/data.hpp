// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace npft {

// Byte-level token stream. vocab is fixed at 256.
struct Corpus {
    std::vector<int> tokens;
    std::string source;

    static constexpr int vocab_size = 256;
};

struct CorpusSplits {
    Corpus train;
    Corpus valid;
    Corpus calib;
};

// Deterministic contiguous split by fractions (must sum to 1).
CorpusSplits load_corpus(const std::string& path, std::array<double, 3> fractions);

Corpus corpus_from_bytes(const std::string& bytes, std::string source);
std::string corpus_to_bytes(const Corpus& corpus);

struct CalibrationSet {
    std::vector<std::vector<int>> segments;  // n segments of fixed length
    int seq_len = 0;
    uint64_t seed = 0;
};

// n contiguous segments of length seq_len at uniformly random start offsets.
CalibrationSet sample_calibration(const Corpus& corpus, int n, int seq_len, uint64_t seed);

// Word-like synthetic text with a power-law vocabulary and simple sentence
// structure; stands in for a natural-language training corpus so runs do not
// depend on any external download.
std::string generate_synthetic_text(size_t n_bytes, uint64_t seed);

}  // namespace npft
