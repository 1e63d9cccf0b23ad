// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "npft/data.hpp"
#include "npft/model.hpp"

namespace npft {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Constant-lr Adam, no weight decay.
class Adam {
  public:
    Adam(std::vector<Tensor> params, AdamConfig cfg);

    void step();
    void zero_grad();
    int64_t t() const { return t_; }

    // moment access for checkpointing
    const std::vector<Tensor>& params() const { return params_; }
    std::vector<double>& m() { return m_; }
    std::vector<double>& v() { return v_; }
    void set_t(int64_t t) { t_ = t; }

  private:
    std::vector<Tensor> params_;
    AdamConfig cfg_;
    std::vector<double> m_, v_;
    std::vector<size_t> offsets_;
    int64_t t_ = 0;
};

struct BaseTrainConfig {
    int max_steps = 300;
    int batch_size = 8;
    int seq_len = 0;  // 0: use model context_len
    double lr = 1e-3;
    uint64_t seed = 42;
    int log_every = 20;
};

struct BaseTrainLogRow {
    int step = 0;
    double loss = 0.0;
};

struct BaseTrainResult {
    std::vector<BaseTrainLogRow> log;
    double final_loss = 0.0;
    double final_grad_norm = 0.0;
    double wall_seconds = 0.0;
};

// Next-token training of the base model; batches are seeded per step so a
// run can be resumed reproducibly from (checkpoint + optimizer state).
BaseTrainResult train_base(LanguageModel& model, const Corpus& train, const BaseTrainConfig& cfg,
                           int start_step = 0, Adam* resume_opt = nullptr);

// checkpoint with optimizer state, for bitwise-reproducible resume; load the
// model itself with LanguageModel::load, then fill a fresh Adam built over
// its weights. Returns the next step index.
void save_train_state(const std::string& path, const LanguageModel& model, const Adam& opt,
                      int next_step);
int load_train_state(const std::string& path, Adam& opt);

void write_train_log_csv(std::span<const BaseTrainLogRow> rows, std::ostream& out);

}  // namespace npft
