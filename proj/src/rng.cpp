#include "xbarnet/rng.hpp"

namespace xbarnet {

namespace {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view text) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

RngStream::RngStream(std::uint64_t master_seed, std::string_view label)
    : master_seed_(master_seed), label_(label), engine_(derive_seed(master_seed, label)) {}

std::uint64_t RngStream::derive_seed(std::uint64_t master_seed, std::string_view label) noexcept {
    return splitmix64(splitmix64(master_seed) ^ fnv1a(label));
}

RngStream RngStream::child(std::string_view suffix) const {
    std::string name = label_;
    name += '/';
    name += suffix;
    return RngStream(master_seed_, name);
}

std::size_t RngStream::index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(engine_);
}

}  // namespace xbarnet
