#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "spikepart/network.hpp"

namespace spikepart {

// Resource limits of one virtual chip. Defaults model a single BSS-2 ASIC:
// 512 neuron circuits with 256 synapses each, signed weights as two 6-bit
// hardware synapses, 64 event labels per synapse row, two events per cycle at
// a 250 MHz link clock.
struct ChipSpec
{
	std::size_t neuron_circuits = 512;
	std::size_t synapses_per_circuit = 256;
	std::size_t max_circuits_per_neuron = 64;
	std::size_t labels_per_row = 64;
	std::size_t synapses_per_signed_weight = 2;
	std::size_t weight_bits = 6;
	std::size_t events_per_cycle = 2;
	double clock_mhz = 250.0;
	std::size_t input_buffer = 16;

	void check() const
	{
		if (neuron_circuits < 1 || synapses_per_circuit < 1 || max_circuits_per_neuron < 1 ||
		    labels_per_row < 1 || synapses_per_signed_weight < 1 || weight_bits < 1 ||
		    events_per_cycle < 1 || !(clock_mhz > 0.0)) {
			throw std::invalid_argument("ChipSpec: all counts must be >= 1.");
		}
		if (neuron_circuits % 2 != 0) {
			throw std::invalid_argument(
			    "ChipSpec: neuron_circuits must be divisible by 2 (two neuron rows).");
		}
	}

	// Signed synapse rows one circuit column can host.
	std::size_t signed_rows_per_circuit() const
	{
		return synapses_per_circuit / synapses_per_signed_weight;
	}

	std::size_t max_signed_fan_in() const
	{
		return signed_rows_per_circuit() * max_circuits_per_neuron;
	}

	friend bool operator==(ChipSpec const&, ChipSpec const&) = default;
};

enum class CircuitPolicy
{
	exact_minimum,
	round_to_power_of_two
};

inline std::size_t next_power_of_two(std::size_t v)
{
	std::size_t p = 1;
	while (p < v) {
		p *= 2;
	}
	return p;
}

// Number of neuron circuits to combine so one logical neuron supports the
// given signed fan-in. A neuron occupies at least one circuit.
inline std::size_t circuits_required(
    std::size_t fan_in_signed,
    ChipSpec const& chip,
    CircuitPolicy policy = CircuitPolicy::exact_minimum)
{
	auto const hw_synapses = fan_in_signed * chip.synapses_per_signed_weight;
	auto c = (hw_synapses + chip.synapses_per_circuit - 1) / chip.synapses_per_circuit;
	if (c < 1) {
		c = 1;
	}
	if (policy == CircuitPolicy::round_to_power_of_two) {
		c = next_power_of_two(c);
	}
	if (c > chip.max_circuits_per_neuron) {
		throw std::invalid_argument(
		    "circuits_required: fan-in " + std::to_string(fan_in_signed) +
		    " exceeds maximum fan-in of " + std::to_string(chip.max_signed_fan_in()) +
		    " signed weights.");
	}
	return c;
}

// Logical neurons available per execution when each one combines
// circuits_per_neuron circuits.
inline std::size_t neurons_per_execution(std::size_t circuits_per_neuron, ChipSpec const& chip)
{
	if (circuits_per_neuron < 1 || circuits_per_neuron > chip.max_circuits_per_neuron) {
		throw std::invalid_argument(
		    "neurons_per_execution: circuits_per_neuron must be in [1, " +
		    std::to_string(chip.max_circuits_per_neuron) + "].");
	}
	return chip.neuron_circuits / circuits_per_neuron;
}

struct ResourceViolation
{
	std::string resource;
	std::size_t required = 0;
	std::size_t available = 0;

	friend bool operator==(ResourceViolation const&, ResourceViolation const&) = default;
};

struct FitReport
{
	bool fits = true;
	std::size_t circuits_used = 0;
	std::size_t rows_used = 0; // deepest per-circuit signed-row usage
	std::vector<ResourceViolation> violations;

	friend bool operator==(FitReport const&, FitReport const&) = default;
};

// One contiguous group of post neurons sharing synapse rows; at most
// labels_per_row neurons can be addressed through the same row.
struct LabelBlock
{
	std::size_t post_begin = 0;
	std::size_t post_count = 0;
	std::size_t signed_rows = 0;
};

struct BlockMapping
{
	std::vector<LabelBlock> blocks;
	std::size_t total_signed_rows = 0;
};

// Groups the post neurons of a sparse (receptive-field) projection into
// blocks of at most labels_per_row neurons; the neurons of a block are
// addressed through the same signed synapse rows, one row per tap.
inline BlockMapping label_blocks(Projection const& projection, ChipSpec const& chip)
{
	if (projection.connectivity.kind != Connectivity::Kind::receptive_field) {
		throw std::invalid_argument(
		    "label_blocks: projection '" + projection.name +
		    "' does not use receptive-field connectivity.");
	}
	auto const fan_in = projection.connectivity.taps_per_post();
	if (fan_in > chip.signed_rows_per_circuit()) {
		throw std::invalid_argument(
		    "label_blocks: per-neuron fan-in " + std::to_string(fan_in) +
		    " exceeds the block row budget of " +
		    std::to_string(chip.signed_rows_per_circuit()) + " signed rows.");
	}
	auto const post_size = projection.connectivity.post_count();
	BlockMapping mapping;
	for (std::size_t begin = 0; begin < post_size; begin += chip.labels_per_row) {
		auto const count = std::min(chip.labels_per_row, post_size - begin);
		mapping.blocks.push_back({begin, count, fan_in});
		mapping.total_signed_rows += fan_in;
	}
	return mapping;
}

// A contiguous index range of one population assigned to an execution.
struct PopulationSlice
{
	PopulationId population = 0;
	std::size_t begin = 0;
	std::size_t end = 0;

	std::size_t size() const { return end - begin; }

	friend bool operator==(PopulationSlice const&, PopulationSlice const&) = default;
};

// Resource accounting for a set of population slices placed together on one
// chip. Geometry is not modeled; fitting uses aggregate circuit counts, the
// per-circuit row depth, and the label constraint of sparse projections.
inline FitReport check_fit(
    NetworkGraph const& graph,
    std::vector<PopulationSlice> const& slices,
    ChipSpec const& chip,
    CircuitPolicy policy = CircuitPolicy::exact_minimum)
{
	FitReport report;
	for (auto const& slice : slices) {
		auto const fan_in = graph.fan_in(slice.population);
		std::size_t circuits = 1;
		try {
			circuits = circuits_required(fan_in, chip, policy);
		} catch (std::invalid_argument const&) {
			circuits = chip.max_circuits_per_neuron;
			report.violations.push_back(
			    {"fan_in", fan_in, chip.max_signed_fan_in()});
		}
		report.circuits_used += circuits * slice.size();
		auto const rows = (fan_in + circuits - 1) / circuits;
		report.rows_used = std::max(report.rows_used, rows);

		// Sparse afferents must obey the per-row label limit.
		for (auto const& proj : graph.projections()) {
			if (proj.post != slice.population ||
			    proj.connectivity.kind != Connectivity::Kind::receptive_field) {
				continue;
			}
			auto const taps = proj.connectivity.taps_per_post();
			if (taps > chip.signed_rows_per_circuit()) {
				report.violations.push_back(
				    {"label_block_rows", taps, chip.signed_rows_per_circuit()});
			}
		}
	}
	if (report.circuits_used > chip.neuron_circuits) {
		report.violations.push_back(
		    {"neuron_circuits", report.circuits_used, chip.neuron_circuits});
	}
	if (report.rows_used > chip.signed_rows_per_circuit()) {
		report.violations.push_back(
		    {"synapse_rows", report.rows_used, chip.signed_rows_per_circuit()});
	}
	report.fits = report.violations.empty();
	return report;
}

} // namespace spikepart
