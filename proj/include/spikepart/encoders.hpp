#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "spikepart/event.hpp"
#include "spikepart/tensor.hpp"

namespace spikepart {

// Linear time-to-first-spike: pixel intensity maps onto the time grid, the
// maximum value spiking at t = 0 and the minimum not spiking at all.
struct LinearTtfsParams
{
	double duration_us = 30.0; // T
	double dt_us = 1.0;
	double x_min = 0.0;
	double x_max = 1.0;

	void check() const
	{
		if (!(x_max > x_min)) {
			throw std::invalid_argument("LinearTtfsParams: x_max > x_min violated.");
		}
		if (!(dt_us > 0.0)) {
			throw std::invalid_argument("LinearTtfsParams: dt > 0 violated.");
		}
		auto const n = duration_us / dt_us;
		if (std::abs(n - std::round(n)) > 1e-9 || n < 1.0) {
			throw std::invalid_argument("LinearTtfsParams: T must be a multiple of dt.");
		}
	}
};

// t = T - round(T/dt * (x - x_min)/(x_max - x_min)) * dt; emitted iff t < T.
// Values outside [x_min, x_max] are clamped.
inline std::optional<double> encode_linear(double x, LinearTtfsParams const& p)
{
	p.check();
	auto const clamped = std::clamp(x, p.x_min, p.x_max);
	auto const grid = p.duration_us / p.dt_us;
	auto const k = std::llround(grid * (clamped - p.x_min) / (p.x_max - p.x_min));
	auto const t = p.duration_us - static_cast<double>(k) * p.dt_us;
	if (t >= p.duration_us) {
		return std::nullopt;
	}
	return t;
}

// Current-based time-to-first-spike: the pixel value plus a bias acts as a
// constant current onto a LIF neuron with infinite refractory period; the
// first (and only) threshold crossing is the spike time.
struct CurrentTtfsParams
{
	double tau_en_us = 20.0;
	double theta_en = 0.32;
	double x_min = 0.1; // bias added to the pixel value
	double sigma_in = 0.0;
	double time_resolution_us = 0.008; // event time grid

	void check() const
	{
		if (!(tau_en_us > 0.0)) {
			throw std::invalid_argument("CurrentTtfsParams: tau_en > 0 violated.");
		}
		if (!(theta_en > 0.0)) {
			throw std::invalid_argument("CurrentTtfsParams: theta_en > 0 violated.");
		}
		if (!(time_resolution_us > 0.0)) {
			throw std::invalid_argument(
			    "CurrentTtfsParams: time_resolution > 0 violated.");
		}
	}
};

// Closed-form crossing time of dv/dt = -v/tau + a from v(0) = 0: the membrane
// saturates at a*tau, so a spike exists iff a*tau > theta, at
// t = tau * ln(a*tau / (a*tau - theta)), rounded to the event time grid.
inline std::optional<double> encode_current(double x, CurrentTtfsParams const& p)
{
	p.check();
	auto const a = x + p.x_min;
	auto const saturation = a * p.tau_en_us;
	if (!(saturation > p.theta_en)) {
		return std::nullopt;
	}
	auto const t = p.tau_en_us * std::log(saturation / (saturation - p.theta_en));
	return std::round(t / p.time_resolution_us) * p.time_resolution_us;
}

// Adds i.i.d. Gaussian noise to every element; deterministic per seed.
inline Tensor jitter(Tensor const& values, double sigma, std::uint64_t seed)
{
	if (sigma < 0.0) {
		throw std::invalid_argument("jitter: sigma >= 0 violated.");
	}
	if (sigma == 0.0) {
		return values;
	}
	Tensor out = values;
	std::mt19937_64 rng(seed);
	std::normal_distribution<double> noise(0.0, sigma);
	for (auto& v : out.values()) {
		v += noise(rng);
	}
	return out;
}

// Encodes a flat pixel vector; channel ids follow the pixel order. Spikes at
// or beyond the trial window are not emitted.
inline EventStream encode_image_linear(
    double const* pixels, std::size_t count, LinearTtfsParams const& p)
{
	EventStream stream;
	stream.duration_us = p.duration_us;
	for (std::size_t i = 0; i < count; ++i) {
		if (auto const t = encode_linear(pixels[i], p)) {
			stream.events.push_back({*t, static_cast<std::uint32_t>(i)});
		}
	}
	stream.sort();
	return stream;
}

inline EventStream encode_image_current(
    double const* pixels, std::size_t count, CurrentTtfsParams const& p, double duration_us)
{
	EventStream stream;
	stream.duration_us = duration_us;
	for (std::size_t i = 0; i < count; ++i) {
		if (auto const t = encode_current(pixels[i], p)) {
			if (*t < duration_us) {
				stream.events.push_back({*t, static_cast<std::uint32_t>(i)});
			}
		}
	}
	stream.sort();
	return stream;
}

struct SpikeCountStats
{
	double mean_per_bin = 0.0; // averaged over streams and time bins
	double max_per_bin = 0.0;  // per-stream maximum, averaged over streams
};

inline SpikeCountStats spike_count_stats(
    std::vector<EventStream> const& streams, double dt_us)
{
	if (streams.empty()) {
		throw std::invalid_argument("spike_count_stats: empty dataset slice.");
	}
	SpikeCountStats stats;
	for (auto const& stream : streams) {
		auto const bins = static_cast<std::size_t>(
		    std::max(1.0, std::ceil(stream.duration_us / dt_us)));
		std::vector<std::size_t> histogram(bins, 0);
		for (auto const& ev : stream.events) {
			auto const step = grid_step(ev.time_us, dt_us);
			if (step < bins) {
				++histogram[step];
			}
		}
		std::size_t total = 0;
		std::size_t peak = 0;
		for (auto const c : histogram) {
			total += c;
			peak = std::max(peak, c);
		}
		stats.mean_per_bin += static_cast<double>(total) / static_cast<double>(bins);
		stats.max_per_bin += static_cast<double>(peak);
	}
	stats.mean_per_bin /= static_cast<double>(streams.size());
	stats.max_per_bin /= static_cast<double>(streams.size());
	return stats;
}

} // namespace spikepart
