#pragma once

#include "diffrl/env.hpp"
#include "diffrl/rng.hpp"
#include "diffrl/util.hpp"

namespace diffrl {

// Ring buffer over transitions, structure-of-arrays. One writer, many
// readers: push mutates, sample only reads.
class ReplayBuffer {
public:
    ReplayBuffer(long capacity, long obs_dim, long act_dim);

    void push(const TransitionRecord& r);
    long size() const { return size_; }
    long capacity() const { return capacity_; }
    long obs_dim() const { return obs_dim_; }
    long act_dim() const { return act_dim_; }

    struct Batch {
        MatD states, actions, next_states;
        std::vector<double> rewards;
        std::vector<uint8_t> terminal;
        long size() const { return states.rows; }
    };

    // Uniform over filled slots, without replacement within the batch.
    Batch sample(long batch_size, Rng& rng) const;

    // Slot access in storage order (for dumps); i in [0, size).
    TransitionRecord record(long i) const;

private:
    long capacity_, obs_dim_, act_dim_;
    long size_ = 0, cursor_ = 0;
    MatD states_, actions_, next_states_;
    std::vector<double> rewards_;
    std::vector<uint8_t> terminal_;
};

}  // namespace diffrl
