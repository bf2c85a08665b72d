#pragma once

#include <cstdint>
#include <string_view>

namespace spikepart {

// splitmix64 step; used to derive independent component seeds from one root.
inline std::uint64_t mix_seed(std::uint64_t x)
{
	x += 0x9e3779b97f4a7c15ull;
	x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
	x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
	return x ^ (x >> 31);
}

// Derives a per-component seed from the root seed and a label, so dataset
// shuffling, dropout, jitter and weight init draw from independent streams.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label)
{
	std::uint64_t h = 0xcbf29ce484222325ull ^ root;
	for (auto const c : label) {
		h = (h ^ static_cast<std::uint8_t>(c)) * 0x100000001b3ull;
	}
	return mix_seed(h);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::uint64_t n)
{
	return mix_seed(derive_seed(root, label) ^ mix_seed(n));
}

} // namespace spikepart
