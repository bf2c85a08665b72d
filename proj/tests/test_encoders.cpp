#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <optional>
#include <random>

#include "spikepart/encoders.hpp"

using namespace spikepart;

namespace {

// Forward-Euler integration of dv/dt = -v/tau + a at a 1 ns step; the
// independent oracle for the closed-form spike time.
std::optional<double> euler_crossing(double a, CurrentTtfsParams const& p, double horizon_us)
{
	double const h = 0.001; // 1 ns
	double v = 0.0;
	for (double t = 0.0; t < horizon_us; t += h) {
		if (v >= p.theta_en) {
			return t;
		}
		v += h * (-v / p.tau_en_us + a);
	}
	return std::nullopt;
}

} // namespace

TEST_CASE("linear TTFS endpoints and formula")
{
	LinearTtfsParams p;
	p.duration_us = 30.0;
	p.dt_us = 1.0;
	p.x_min = 0.0;
	p.x_max = 1.0;

	auto const brightest = encode_linear(1.0, p);
	REQUIRE(brightest.has_value());
	CHECK(*brightest == 0.0);

	CHECK_FALSE(encode_linear(0.0, p).has_value()); // t == T emits nothing

	auto const mid = encode_linear(0.5, p);
	REQUIRE(mid.has_value());
	CHECK(*mid == 15.0);

	// Out-of-range values clamp.
	CHECK(*encode_linear(2.0, p) == 0.0);
	CHECK_FALSE(encode_linear(-1.0, p).has_value());
}

TEST_CASE("linear TTFS output lies on the dt grid")
{
	LinearTtfsParams p;
	p.duration_us = 30.0;
	p.dt_us = 0.5;
	std::mt19937_64 rng(3);
	std::uniform_real_distribution<double> pixel(0.0, 1.0);
	for (int k = 0; k < 500; ++k) {
		if (auto const t = encode_linear(pixel(rng), p)) {
			double const steps = *t / p.dt_us;
			CHECK(std::abs(steps - std::round(steps)) < 1e-9);
			CHECK(*t >= 0.0);
			CHECK(*t < p.duration_us);
		}
	}
}

TEST_CASE("current TTFS: threshold condition and closed-form value")
{
	CurrentTtfsParams p;
	p.tau_en_us = 20.0;
	p.theta_en = 0.32;
	p.x_min = 0.1;
	p.time_resolution_us = 0.001; // fine grid so the reference value shows

	// Saturation below threshold emits nothing.
	CurrentTtfsParams weak = p;
	weak.x_min = 0.0;
	CHECK_FALSE(encode_current(0.01, weak).has_value());

	// x = 1 with bias 0.1: t = 20 ln(22 / 21.68) ~ 0.293 us.
	auto const t = encode_current(1.0, p);
	REQUIRE(t.has_value());
	CHECK(*t == Catch::Approx(20.0 * std::log(22.0 / 21.68)).margin(1e-3));
	CHECK(*t == Catch::Approx(0.293).margin(2e-3));
}

TEST_CASE("current TTFS matches 1 ns forward-Euler integration across pixel values")
{
	CurrentTtfsParams p;
	p.tau_en_us = 20.0;
	p.theta_en = 0.32;
	p.x_min = 0.1;
	p.time_resolution_us = 0.008;

	// The image data carries 252 distinct pixel values.
	for (int k = 0; k < 252; ++k) {
		double const x = static_cast<double>(k) / 251.0;
		auto const closed = encode_current(x, p);
		auto const integrated = euler_crossing(x + p.x_min, p, 64.0);
		REQUIRE(closed.has_value() == integrated.has_value());
		if (closed) {
			CHECK(std::abs(*closed - *integrated) <= p.time_resolution_us);
		}
	}
}

TEST_CASE("current TTFS monotonicity: brighter pixels spike earlier")
{
	CurrentTtfsParams p;
	auto const late = encode_current(0.2, p);
	auto const early = encode_current(0.8, p);
	REQUIRE(late.has_value());
	REQUIRE(early.has_value());
	CHECK(*early < *late);
}

TEST_CASE("both encoders are non-increasing in the pixel value")
{
	LinearTtfsParams lp;
	CurrentTtfsParams cp;
	std::mt19937_64 rng(13);
	std::uniform_real_distribution<double> pixel(0.0, 1.0);
	for (int k = 0; k < 300; ++k) {
		double a = pixel(rng), b = pixel(rng);
		if (a > b) {
			std::swap(a, b);
		}
		auto const ta = encode_linear(a, lp);
		auto const tb = encode_linear(b, lp);
		if (ta && tb) {
			CHECK(*tb <= *ta);
		}
		auto const ca = encode_current(a, cp);
		auto const cb = encode_current(b, cp);
		if (ca && cb) {
			CHECK(*cb <= *ca);
		}
	}
}

TEST_CASE("current TTFS output lies on the FPGA time grid")
{
	CurrentTtfsParams p;
	std::mt19937_64 rng(29);
	std::uniform_real_distribution<double> pixel(0.0, 1.0);
	for (int k = 0; k < 300; ++k) {
		if (auto const t = encode_current(pixel(rng), p)) {
			double const units = *t / p.time_resolution_us;
			CHECK(std::abs(units - std::round(units)) < 1e-6);
		}
	}
}

TEST_CASE("jitter: identity at sigma 0, determinism, unbiasedness")
{
	Tensor x({64});
	for (auto& v : x.values()) {
		v = 0.5;
	}
	CHECK(jitter(x, 0.0, 7) == x);
	CHECK(jitter(x, 0.1, 7) == jitter(x, 0.1, 7));
	CHECK_FALSE(jitter(x, 0.1, 7) == jitter(x, 0.1, 8));
	CHECK_THROWS(jitter(x, -0.1, 7));

	// Mean of many jittered copies stays within 3 sigma / sqrt(N) of 0.5.
	double const sigma = 0.2;
	std::size_t const n = 100000;
	Tensor big({n});
	for (auto& v : big.values()) {
		v = 0.5;
	}
	auto const noisy = jitter(big, sigma, 123);
	double mean = 0.0;
	for (auto const v : noisy.values()) {
		mean += v;
	}
	mean /= static_cast<double>(n);
	CHECK(std::abs(mean - 0.5) < 3.0 * sigma / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("spike count statistics")
{
	SECTION("one spike in one stream")
	{
		EventStream s;
		s.duration_us = 30.0;
		s.events.push_back({3.0, 0});
		auto const stats = spike_count_stats({s}, 1.0);
		CHECK(stats.mean_per_bin == Catch::Approx(1.0 / 30.0));
		CHECK(stats.max_per_bin == 1.0);
	}
	SECTION("uniform pixels collapse into one bin")
	{
		EventStream s;
		s.duration_us = 30.0;
		for (std::uint32_t i = 0; i < 49; ++i) {
			s.events.push_back({5.0, i});
		}
		auto const stats = spike_count_stats({s}, 1.0);
		CHECK(stats.max_per_bin == 49.0);
	}
	SECTION("matches a brute-force histogram on random synthetic images")
	{
		std::mt19937_64 rng(37);
		LinearTtfsParams p;
		std::vector<EventStream> streams;
		double expected_mean = 0.0;
		double expected_max = 0.0;
		for (int img = 0; img < 10; ++img) {
			std::vector<double> pixels(64);
			std::uniform_real_distribution<double> pixel(0.0, 1.0);
			for (auto& v : pixels) {
				v = pixel(rng);
			}
			auto const s = encode_image_linear(pixels.data(), pixels.size(), p);
			std::vector<std::size_t> histogram(30, 0);
			for (auto const& ev : s.events) {
				++histogram[static_cast<std::size_t>(ev.time_us)];
			}
			std::size_t total = 0, peak = 0;
			for (auto const c : histogram) {
				total += c;
				peak = std::max(peak, c);
			}
			expected_mean += static_cast<double>(total) / 30.0;
			expected_max += static_cast<double>(peak);
			streams.push_back(s);
		}
		auto const stats = spike_count_stats(streams, 1.0);
		CHECK(stats.mean_per_bin == Catch::Approx(expected_mean / 10.0));
		CHECK(stats.max_per_bin == Catch::Approx(expected_max / 10.0));
	}
	SECTION("empty slice is an error")
	{
		CHECK_THROWS(spike_count_stats({}, 1.0));
	}
}
