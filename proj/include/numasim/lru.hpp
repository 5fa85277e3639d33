#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

namespace numasim {

// Fixed-capacity LRU map on an index-linked list. The capacity can shrink at
// run time (SMT partitioning), evicting from the cold end.
template <typename Key, typename Value>
class LruCache {
public:
    explicit LruCache(std::size_t capacity = 0) : capacity_(capacity) { index_.reserve(capacity * 2); }

    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t size() const noexcept { return index_.size(); }

    void set_capacity(std::size_t capacity) {
        capacity_ = capacity;
        while (index_.size() > capacity_) evict_tail();
    }

    // Refreshes recency on hit.
    const Value* find(const Key& key) {
        auto it = index_.find(key);
        if (it == index_.end()) return nullptr;
        touch(it->second);
        return &slots_[it->second].value;
    }

    bool contains(const Key& key) const { return index_.count(key) != 0; }

    void insert(const Key& key, const Value& value) {
        if (capacity_ == 0) return;
        auto it = index_.find(key);
        if (it != index_.end()) {
            slots_[it->second].value = value;
            touch(it->second);
            return;
        }
        if (index_.size() >= capacity_) evict_tail();
        std::uint32_t slot;
        if (!free_.empty()) {
            slot = free_.back();
            free_.pop_back();
        } else {
            slot = static_cast<std::uint32_t>(slots_.size());
            slots_.emplace_back();
        }
        slots_[slot] = Slot{key, value, kNil, kNil};
        push_front(slot);
        index_.emplace(key, slot);
    }

    bool erase(const Key& key) {
        auto it = index_.find(key);
        if (it == index_.end()) return false;
        const std::uint32_t slot = it->second;
        unlink(slot);
        free_.push_back(slot);
        index_.erase(it);
        return true;
    }

    void clear() {
        index_.clear();
        slots_.clear();
        free_.clear();
        head_ = tail_ = kNil;
    }

private:
    static constexpr std::uint32_t kNil = UINT32_MAX;
    struct Slot {
        Key key{};
        Value value{};
        std::uint32_t prev = kNil;
        std::uint32_t next = kNil;
    };

    void unlink(std::uint32_t s) {
        Slot& n = slots_[s];
        if (n.prev != kNil) slots_[n.prev].next = n.next; else head_ = n.next;
        if (n.next != kNil) slots_[n.next].prev = n.prev; else tail_ = n.prev;
        n.prev = n.next = kNil;
    }

    void push_front(std::uint32_t s) {
        slots_[s].next = head_;
        slots_[s].prev = kNil;
        if (head_ != kNil) slots_[head_].prev = s;
        head_ = s;
        if (tail_ == kNil) tail_ = s;
    }

    void touch(std::uint32_t s) {
        if (head_ == s) return;
        unlink(s);
        push_front(s);
    }

    void evict_tail() {
        const std::uint32_t s = tail_;
        unlink(s);
        index_.erase(slots_[s].key);
        free_.push_back(s);
    }

    std::size_t capacity_;
    std::unordered_map<Key, std::uint32_t> index_;
    std::vector<Slot> slots_;
    std::vector<std::uint32_t> free_;
    std::uint32_t head_ = kNil;
    std::uint32_t tail_ = kNil;
};

}  // namespace numasim
