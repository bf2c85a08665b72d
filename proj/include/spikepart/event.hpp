#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace spikepart {

// One spike: a timestamp in microseconds and the id of the emitting source.
// The id space depends on context (input channel, execution-local neuron, ...).
struct SpikeEvent
{
	double time_us = 0.0;
	std::uint32_t id = 0;

	friend bool operator==(SpikeEvent const&, SpikeEvent const&) = default;
};

// Timestamped spike events over a trial window [0, duration_us), kept sorted
// by (time, id).
struct EventStream
{
	double duration_us = 0.0;
	std::vector<SpikeEvent> events;

	void sort()
	{
		std::stable_sort(
		    events.begin(), events.end(), [](SpikeEvent const& a, SpikeEvent const& b) {
			    return a.time_us != b.time_us ? a.time_us < b.time_us : a.id < b.id;
		    });
	}

	bool sorted() const
	{
		return std::is_sorted(
		    events.begin(), events.end(), [](SpikeEvent const& a, SpikeEvent const& b) {
			    return a.time_us != b.time_us ? a.time_us < b.time_us : a.id < b.id;
		    });
	}

	void check_bounds() const
	{
		for (auto const& ev : events) {
			if (ev.time_us < 0.0 || ev.time_us >= duration_us) {
				throw std::invalid_argument(
				    "EventStream: event at " + std::to_string(ev.time_us) +
				    " us outside [0, " + std::to_string(duration_us) + ") us.");
			}
		}
	}

	friend bool operator==(EventStream const&, EventStream const&) = default;
};

// Maps an event time onto the integration grid. Events emitted on the grid
// carry time == step * dt exactly; the (k + 1) * dt comparison recovers that
// step even when time / dt rounds below the integer.
inline std::size_t grid_step(double time_us, double dt_us)
{
	double const q = std::floor(time_us / dt_us);
	auto k = static_cast<std::size_t>(q < 0.0 ? 0.0 : q);
	if ((static_cast<double>(k) + 1.0) * dt_us <= time_us) {
		++k;
	}
	return k;
}

// Buckets a sorted stream into per-step id lists on a grid with n_steps bins.
inline std::vector<std::vector<std::uint32_t>> bin_events(
    EventStream const& stream, double dt_us, std::size_t n_steps)
{
	std::vector<std::vector<std::uint32_t>> bins(n_steps);
	for (auto const& ev : stream.events) {
		auto const step = grid_step(ev.time_us, dt_us);
		if (step < n_steps) {
			bins[step].push_back(ev.id);
		}
	}
	// Intra-step delivery order is ascending source id.
	for (auto& bin : bins) {
		std::sort(bin.begin(), bin.end());
	}
	return bins;
}

} // namespace spikepart
