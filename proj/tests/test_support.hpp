#pragma once

// Shared helpers for the test suites: small parameter factories, random
// feed-forward network generation and the monolithic reference simulation
// used as the partition-fidelity oracle.

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "spikepart/chip.hpp"
#include "spikepart/emulator.hpp"
#include "spikepart/network.hpp"
#include "spikepart/partition.hpp"

namespace spikepart::testing {

inline NeuronParams lif_params(double thresh = 1.0)
{
	NeuronParams p;
	p.kind = NeuronKind::lif;
	p.tau_mem_us = 6.0;
	p.tau_syn_us = 5.7;
	p.v_thresh = thresh;
	return p;
}

inline NeuronParams li_params()
{
	NeuronParams p;
	p.kind = NeuronKind::li;
	p.tau_mem_us = 6.0;
	p.tau_syn_us = 5.7;
	return p;
}

struct RandomNetwork
{
	NetworkGraph graph;
	std::size_t input_size = 0;
};

// A random feed-forward chain: input -> LIF layers -> LI readout. Weights are
// scaled so hidden layers actually spike under sparse Poisson-like input.
inline RandomNetwork random_feedforward(std::mt19937_64& rng)
{
	RandomNetwork net;
	std::uniform_int_distribution<std::size_t> layer_count(2, 4);
	std::uniform_int_distribution<std::size_t> width(16, 96);
	auto const layers = layer_count(rng);
	net.input_size = width(rng);
	auto const input = net.graph.add_input("in", net.input_size);

	std::size_t previous_size = net.input_size;
	Endpoint previous = Endpoint::input(input);
	std::size_t total = net.input_size;
	for (std::size_t l = 0; l < layers; ++l) {
		bool const is_readout = l + 1 == layers;
		auto size = is_readout ? std::uniform_int_distribution<std::size_t>(4, 10)(rng)
		                       : width(rng);
		auto const remaining = total < 256 ? 256 - total : 0;
		size = std::max<std::size_t>(4, std::min(size, remaining));
		total += size;
		auto const pop = net.graph.add_population(
		    size, is_readout ? li_params() : lif_params(), std::nullopt,
		    "layer" + std::to_string(l));
		// Mean drive around threshold so spikes occur but don't saturate.
		std::normal_distribution<double> weight(
		    0.6 / static_cast<double>(previous_size) * 8.0,
		    1.2 / std::sqrt(static_cast<double>(previous_size)));
		Tensor w({previous_size, size});
		for (auto& v : w.values()) {
			v = weight(rng);
		}
		net.graph.add_projection(previous, pop, Connectivity::dense_all(), std::move(w));
		previous = Endpoint::population(pop);
		previous_size = size;
	}
	return net;
}

// Random sparse input streams on the grid.
inline std::vector<EventStream> random_input_batch(
    std::mt19937_64& rng,
    std::size_t input_size,
    std::size_t batch,
    double duration_us,
    double rate = 0.08)
{
	std::vector<EventStream> streams;
	std::uniform_real_distribution<double> coin(0.0, 1.0);
	auto const steps = static_cast<std::size_t>(duration_us);
	for (std::size_t b = 0; b < batch; ++b) {
		EventStream s;
		s.duration_us = duration_us;
		for (std::size_t t = 0; t < steps; ++t) {
			for (std::size_t i = 0; i < input_size; ++i) {
				if (coin(rng) < rate) {
					s.events.push_back(
					    {static_cast<double>(t), static_cast<std::uint32_t>(i)});
				}
			}
		}
		s.sort();
		streams.push_back(std::move(s));
	}
	return streams;
}

// Monolithic simulation of the whole graph on one virtual substrate; the
// fidelity oracle for partitioned orchestration.
struct MonolithicResult
{
	std::vector<Tensor> spikes; // per population [batch, steps, size]
	std::vector<Tensor> traces;
};

inline MonolithicResult run_monolithic(
    NetworkGraph const& graph,
    std::vector<std::vector<EventStream>> const& inputs,
    EmulatorConfig const& cfg)
{
	auto const net = compile_network(graph);
	auto const steps = cfg.steps();
	std::size_t const batch = inputs.empty() ? 0 : inputs.front().size();
	MonolithicResult result;
	result.spikes.resize(graph.populations().size());
	result.traces.resize(graph.populations().size());
	for (PopulationId p = 0; p < graph.populations().size(); ++p) {
		result.spikes[p] = Tensor({batch, steps, graph.population(p).size});
		result.traces[p] = Tensor({batch, steps, graph.population(p).size});
	}
	for (std::size_t b = 0; b < batch; ++b) {
		EventStream merged;
		merged.duration_us = cfg.duration_us;
		for (InputId i = 0; i < inputs.size(); ++i) {
			for (auto const& ev : inputs[i][b].events) {
				merged.events.push_back(
				    {ev.time_us,
				     static_cast<std::uint32_t>(net.blocks[i].channel_begin + ev.id)});
			}
		}
		merged.sort();
		auto const entry = run_network_entry(net, merged, cfg);
		for (PopulationId p = 0; p < graph.populations().size(); ++p) {
			auto const size = graph.population(p).size;
			for (std::size_t t = 0; t < steps; ++t) {
				for (std::size_t n = 0; n < size; ++n) {
					result.spikes[p](b, t, n) =
					    static_cast<double>(entry.groups[p].spikes[t * size + n]);
					result.traces[p](b, t, n) = entry.groups[p].traces[t * size + n];
				}
			}
		}
	}
	return result;
}

// A random valid plan: either the greedy feed-forward partitioner on a
// shrunken chip (forcing splits) or random extra split factors.
inline ExecutionGraph random_plan(
    NetworkGraph const& graph, std::mt19937_64& rng, ChipSpec& chip_out)
{
	ChipSpec chip;
	std::uniform_int_distribution<std::size_t> circuits(32, 256);
	chip.neuron_circuits = 2 * (circuits(rng) / 2);
	std::map<std::string, std::size_t> splits;
	for (auto const& pop : graph.populations()) {
		if (rng() % 3 == 0) {
			splits[pop.name] = 1 + rng() % 3;
		}
	}
	chip_out = chip;
	return partition_feedforward(
	    graph, chip, CircuitPolicy::exact_minimum, splits);
}

} // namespace spikepart::testing
