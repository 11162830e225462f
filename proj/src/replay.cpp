#include "diffrl/replay.hpp"

#include <unordered_set>

namespace diffrl {

ReplayBuffer::ReplayBuffer(long capacity, long obs_dim, long act_dim)
    : capacity_(capacity),
      obs_dim_(obs_dim),
      act_dim_(act_dim),
      states_(capacity, obs_dim),
      actions_(capacity, act_dim),
      next_states_(capacity, obs_dim),
      rewards_(capacity, 0.0),
      terminal_(capacity, 0) {
    if (capacity < 1) throw DomainError("replay capacity < 1");
}

void ReplayBuffer::push(const TransitionRecord& r) {
    if (static_cast<long>(r.state.size()) != obs_dim_)
        throw DimensionError("replay state dim", obs_dim_, static_cast<long>(r.state.size()));
    if (static_cast<long>(r.action.size()) != act_dim_)
        throw DimensionError("replay action dim", act_dim_, static_cast<long>(r.action.size()));
    states_.set_row(cursor_, r.state);
    actions_.set_row(cursor_, r.action);
    next_states_.set_row(cursor_, r.next_state);
    rewards_[cursor_] = r.reward;
    // A time-limit cut is not a terminal for bootstrapping purposes.
    terminal_[cursor_] = (r.terminal && !r.truncated) ? 1 : 0;
    cursor_ = (cursor_ + 1) % capacity_;
    if (size_ < capacity_) ++size_;
}

ReplayBuffer::Batch ReplayBuffer::sample(long batch_size, Rng& rng) const {
    if (batch_size < 1 || batch_size > size_)
        throw DomainError(strfmt("replay sample of %ld from %ld stored", batch_size, size_));
    std::vector<long> idx;
    idx.reserve(batch_size);
    if (batch_size * 2 >= size_) {
        // dense case: partial Fisher-Yates
        std::vector<long> all(size_);
        for (long i = 0; i < size_; ++i) all[i] = i;
        for (long i = 0; i < batch_size; ++i) {
            long j = i + static_cast<long>(rng.uniform_index(static_cast<uint64_t>(size_ - i)));
            std::swap(all[i], all[j]);
            idx.push_back(all[i]);
        }
    } else {
        std::unordered_set<long> seen;
        seen.reserve(batch_size * 2);
        while (static_cast<long>(idx.size()) < batch_size) {
            long j = static_cast<long>(rng.uniform_index(static_cast<uint64_t>(size_)));
            if (seen.insert(j).second) idx.push_back(j);
        }
    }
    Batch b{MatD(batch_size, obs_dim_), MatD(batch_size, act_dim_), MatD(batch_size, obs_dim_),
            std::vector<double>(batch_size), std::vector<uint8_t>(batch_size)};
    for (long i = 0; i < batch_size; ++i) {
        long j = idx[i];
        b.states.set_row(i, states_.row(j));
        b.actions.set_row(i, actions_.row(j));
        b.next_states.set_row(i, next_states_.row(j));
        b.rewards[i] = rewards_[j];
        b.terminal[i] = terminal_[j];
    }
    return b;
}

TransitionRecord ReplayBuffer::record(long i) const {
    if (i < 0 || i >= size_) throw DomainError(strfmt("replay record %ld out of range", i));
    TransitionRecord r;
    r.state.assign(states_.row(i).begin(), states_.row(i).end());
    r.action.assign(actions_.row(i).begin(), actions_.row(i).end());
    r.next_state.assign(next_states_.row(i).begin(), next_states_.row(i).end());
    r.reward = rewards_[i];
    r.terminal = terminal_[i] != 0;
    r.truncated = false;
    return r;
}

}  // namespace diffrl
