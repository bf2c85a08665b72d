#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spikepart/chip.hpp"
#include "spikepart/network.hpp"

namespace spikepart {

using ExecutionId = std::size_t;

enum class Backend
{
	emulated,
	reference_simulated
};

// Contiguous input channel range of an execution fed from one source entity
// (external input or foreign population). `indices` lists the source-side
// indices carried by the channels, ascending; channel ids follow that order.
struct InputBlock
{
	Endpoint source;
	std::vector<std::size_t> indices;
	std::size_t channel_begin = 0;

	friend bool operator==(InputBlock const&, InputBlock const&) = default;
};

// Restriction of one projection to an execution: the post range placed here
// and where the pre side lives. An internal pre is a population hosted by the
// same execution; otherwise spikes arrive through the input block.
struct AfferentSlice
{
	ProjectionId projection = 0;
	std::size_t post_begin = 0;
	std::size_t post_end = 0;
	bool pre_internal = false;
	std::size_t block = 0; // index into ExecutionInstance::inputs when external

	friend bool operator==(AfferentSlice const&, AfferentSlice const&) = default;
};

struct ExecutionInstance
{
	ExecutionId id = 0;
	std::string name;
	Backend backend = Backend::emulated;
	std::vector<PopulationSlice> neurons;
	std::vector<AfferentSlice> afferents;
	std::vector<InputBlock> inputs;
	FitReport fit;

	friend bool operator==(ExecutionInstance const&, ExecutionInstance const&) = default;

	std::size_t neuron_count() const
	{
		std::size_t n = 0;
		for (auto const& s : neurons) {
			n += s.size();
		}
		return n;
	}

	std::size_t channel_count() const
	{
		std::size_t n = 0;
		for (auto const& b : inputs) {
			n += b.indices.size();
		}
		return n;
	}

	// Local id of a neuron (population index within this execution's slices).
	std::optional<std::uint32_t> local_index(PopulationId population, std::size_t index) const
	{
		std::uint32_t offset = 0;
		for (auto const& s : neurons) {
			if (s.population == population && index >= s.begin && index < s.end) {
				return offset + static_cast<std::uint32_t>(index - s.begin);
			}
			offset += static_cast<std::uint32_t>(s.size());
		}
		return std::nullopt;
	}
};

// Event forwarding from a recorded source slice into a target execution's
// input channels. The translation maps source-execution local neuron ids to
// target channel ids.
struct InterExecutionProjection
{
	ExecutionId source = 0;
	ExecutionId target = 0;
	PopulationSlice source_slice;
	ProjectionId projection = 0;
	std::vector<std::pair<std::uint32_t, std::uint32_t>> translation;

	friend bool operator==(
	    InterExecutionProjection const&, InterExecutionProjection const&) = default;
};

struct ExecutionGraph
{
	std::vector<ExecutionInstance> executions;
	std::vector<InterExecutionProjection> edges;

	friend bool operator==(ExecutionGraph const&, ExecutionGraph const&) = default;

	ExecutionInstance const& execution(ExecutionId id) const { return executions.at(id); }

	std::vector<std::vector<ExecutionId>> adjacency() const
	{
		std::vector<std::vector<ExecutionId>> adj(executions.size());
		for (auto const& e : edges) {
			adj[e.source].push_back(e.target);
		}
		return adj;
	}

	// Verifies the structural invariants: slices disjoint and covering,
	// acyclic edge relation, consistent channel layout.
	void check(NetworkGraph const& graph) const;
};

inline std::vector<std::pair<std::size_t, std::size_t>> split_layer(
    std::size_t layer_size, std::size_t parts)
{
	if (parts < 1 || parts > layer_size) {
		throw std::invalid_argument(
		    "split_layer: part count must be in [1, " + std::to_string(layer_size) + "].");
	}
	std::vector<std::pair<std::size_t, std::size_t>> ranges;
	auto const base = layer_size / parts;
	auto const remainder = layer_size % parts;
	std::size_t begin = 0;
	for (std::size_t k = 0; k < parts; ++k) {
		auto const size = base + (k < remainder ? 1 : 0);
		ranges.emplace_back(begin, begin + size);
		begin += size;
	}
	return ranges;
}

namespace detail {

// Source indices a projection slice needs from its pre side.
inline std::vector<std::size_t> needed_pre_indices(
    NetworkGraph const& graph,
    Projection const& projection,
    std::size_t post_begin,
    std::size_t post_end)
{
	if (projection.connectivity.kind == Connectivity::Kind::dense) {
		std::vector<std::size_t> all(graph.endpoint_size(projection.pre));
		for (std::size_t i = 0; i < all.size(); ++i) {
			all[i] = i;
		}
		return all;
	}
	std::set<std::size_t> used;
	auto const& c = projection.connectivity;
	for (std::size_t post = post_begin; post < post_end; ++post) {
		for (std::size_t tap = 0; tap < c.taps_per_post(); ++tap) {
			if (auto const src = c.tap_source(post, tap)) {
				used.insert(*src);
			}
		}
	}
	return {used.begin(), used.end()};
}

// Assigns input blocks (dedup'd per source endpoint) and channel offsets for
// every afferent slice whose pre side is external.
inline void layout_input_blocks(NetworkGraph const& graph, ExecutionInstance& execution)
{
	struct Key
	{
		bool is_input;
		std::size_t index;
		auto operator<=>(Key const&) const = default;
	};
	std::map<Key, std::vector<std::size_t>> need;
	for (auto const& aff : execution.afferents) {
		if (aff.pre_internal) {
			continue;
		}
		auto const& proj = graph.projection(aff.projection);
		auto indices = needed_pre_indices(graph, proj, aff.post_begin, aff.post_end);
		Key const key{proj.pre.is_input(), proj.pre.index};
		auto& merged = need[key];
		std::vector<std::size_t> u;
		std::set_union(
		    merged.begin(), merged.end(), indices.begin(), indices.end(),
		    std::back_inserter(u));
		merged = std::move(u);
	}
	execution.inputs.clear();
	std::size_t channel = 0;
	std::map<Key, std::size_t> block_of;
	for (auto& [key, indices] : need) {
		InputBlock block;
		block.source = key.is_input ? Endpoint::input(key.index)
		                            : Endpoint::population(key.index);
		block.indices = std::move(indices);
		block.channel_begin = channel;
		channel += block.indices.size();
		block_of[key] = execution.inputs.size();
		execution.inputs.push_back(std::move(block));
	}
	for (auto& aff : execution.afferents) {
		if (aff.pre_internal) {
			continue;
		}
		auto const& proj = graph.projection(aff.projection);
		aff.block = block_of.at({proj.pre.is_input(), proj.pre.index});
	}
}

// Connects source execution slices to the target executions' population-fed
// input blocks.
inline void build_edges(NetworkGraph const& graph, ExecutionGraph& plan)
{
	plan.edges.clear();
	for (auto& target : plan.executions) {
		for (std::size_t b = 0; b < target.inputs.size(); ++b) {
			auto const& block = target.inputs[b];
			if (block.source.is_input()) {
				continue;
			}
			auto const pre_pop = block.source.index;
			// Which projection does this block feed? Only needed for reporting;
			// take the first afferent using the block.
			ProjectionId proj = 0;
			for (auto const& aff : target.afferents) {
				if (!aff.pre_internal && aff.block == b) {
					proj = aff.projection;
					break;
				}
			}
			for (auto const& source : plan.executions) {
				if (source.id == target.id) {
					continue;
				}
				InterExecutionProjection edge;
				edge.source = source.id;
				edge.target = target.id;
				edge.projection = proj;
				std::size_t lo = block.indices.size(), hi = 0;
				for (std::size_t rank = 0; rank < block.indices.size(); ++rank) {
					auto const idx = block.indices[rank];
					if (auto const local = source.local_index(pre_pop, idx)) {
						edge.translation.emplace_back(
						    *local,
						    static_cast<std::uint32_t>(block.channel_begin + rank));
						lo = std::min(lo, idx);
						hi = std::max(hi, idx + 1);
					}
				}
				if (!edge.translation.empty()) {
					edge.source_slice = {pre_pop, lo, hi};
					plan.edges.push_back(std::move(edge));
				}
			}
		}
	}
}

} // namespace detail

// Builds an ExecutionGraph from explicit per-entity execution annotations.
// Every population and projection must be annotated; a projection is placed
// with its post-synaptic population.
inline ExecutionGraph assign_manual(
    NetworkGraph const& graph,
    ChipSpec const& chip,
    CircuitPolicy policy = CircuitPolicy::exact_minimum,
    std::map<std::string, Backend> const& backends = {})
{
	auto const report = graph.validate();
	if (!report.clean()) {
		throw std::invalid_argument("assign_manual: " + report.issues.front().message);
	}
	for (auto const& pop : graph.populations()) {
		if (!pop.execution) {
			throw std::invalid_argument(
			    "assign_manual: population '" + pop.name + "' has no execution annotation.");
		}
	}
	for (auto const& proj : graph.projections()) {
		if (!proj.execution) {
			throw std::invalid_argument(
			    "assign_manual: projection '" + proj.name + "' has no execution annotation.");
		}
		if (*proj.execution != *graph.population(proj.post).execution) {
			throw std::invalid_argument(
			    "assign_manual: projection '" + proj.name +
			    "' must be placed with its post-synaptic population (execution '" +
			    *graph.population(proj.post).execution + "').");
		}
	}

	// Annotation classes in order of first appearance.
	std::vector<std::string> names;
	for (auto const& pop : graph.populations()) {
		if (std::find(names.begin(), names.end(), *pop.execution) == names.end()) {
			names.push_back(*pop.execution);
		}
	}

	ExecutionGraph plan;
	for (std::size_t e = 0; e < names.size(); ++e) {
		ExecutionInstance exec;
		exec.id = e;
		exec.name = names[e];
		if (auto const it = backends.find(names[e]); it != backends.end()) {
			exec.backend = it->second;
		}
		for (PopulationId p = 0; p < graph.populations().size(); ++p) {
			if (*graph.population(p).execution == names[e]) {
				exec.neurons.push_back({p, 0, graph.population(p).size});
			}
		}
		for (ProjectionId j = 0; j < graph.projections().size(); ++j) {
			auto const& proj = graph.projection(j);
			if (*proj.execution != names[e]) {
				continue;
			}
			bool const pre_internal =
			    !proj.pre.is_input() &&
			    *graph.population(proj.pre.index).execution == names[e];
			exec.afferents.push_back(
			    {j, 0, graph.population(proj.post).size, pre_internal, 0});
		}
		detail::layout_input_blocks(graph, exec);
		exec.fit = check_fit(graph, exec.neurons, chip, policy);
		if (!exec.fit.fits) {
			auto const& v = exec.fit.violations.front();
			throw std::invalid_argument(
			    "assign_manual: execution '" + names[e] + "' violates fit: " + v.resource +
			    " requires " + std::to_string(v.required) + ", available " +
			    std::to_string(v.available) + ".");
		}
		plan.executions.push_back(std::move(exec));
	}
	detail::build_edges(graph, plan);
	plan.check(graph);
	return plan;
}

// Splits a feed-forward network layer-wise: each population is divided by
// neuron index into the fewest contiguous parts that fit the chip, each part
// becoming one execution. `split_factors` forces a larger per-population
// split (e.g. to reduce per-execution input bandwidth).
inline ExecutionGraph partition_feedforward(
    NetworkGraph const& graph,
    ChipSpec const& chip,
    CircuitPolicy policy = CircuitPolicy::exact_minimum,
    std::map<std::string, std::size_t> const& split_factors = {},
    std::map<std::string, Backend> const& backends = {})
{
	auto const report = graph.validate();
	if (!report.clean()) {
		throw std::invalid_argument(
		    "partition_feedforward: " + report.issues.front().message);
	}
	std::vector<bool> self_loop(graph.populations().size(), false);
	for (auto const& proj : graph.projections()) {
		if (!proj.pre.is_input() && proj.pre.index == proj.post) {
			self_loop[proj.post] = true;
		}
	}
	for (auto const& component : graph.strongly_connected_components()) {
		if (component.size() >= 2 || self_loop[component.front()]) {
			throw std::invalid_argument(
			    "partition_feedforward: network is not feed-forward (recurrence at '" +
			    graph.population(component.front()).name + "').");
		}
	}

	ExecutionGraph plan;
	for (auto const pop_id : graph.topological_order()) {
		auto const& pop = graph.population(pop_id);
		auto const fan_in = graph.fan_in(pop_id);
		std::size_t circuits = 1;
		try {
			circuits = circuits_required(fan_in, chip, policy);
		} catch (std::invalid_argument const&) {
			throw std::invalid_argument(
			    "partition_feedforward: population '" + pop.name + "' with fan-in " +
			    std::to_string(fan_in) + " requires fan-in reduction.");
		}
		auto const capacity = neurons_per_execution(circuits, chip);
		auto parts = (pop.size + capacity - 1) / capacity;
		if (auto const it = split_factors.find(pop.name); it != split_factors.end()) {
			parts = std::max(parts, it->second);
		}
		parts = std::min(parts, pop.size);
		auto const ranges = split_layer(pop.size, parts);
		for (std::size_t k = 0; k < ranges.size(); ++k) {
			ExecutionInstance exec;
			exec.id = plan.executions.size();
			exec.name = parts == 1 ? pop.name : pop.name + "." + std::to_string(k);
			if (auto const it = backends.find(pop.name); it != backends.end()) {
				exec.backend = it->second;
			}
			exec.neurons.push_back({pop_id, ranges[k].first, ranges[k].second});
			for (ProjectionId j = 0; j < graph.projections().size(); ++j) {
				if (graph.projection(j).post != pop_id) {
					continue;
				}
				exec.afferents.push_back(
				    {j, ranges[k].first, ranges[k].second, false, 0});
			}
			detail::layout_input_blocks(graph, exec);
			exec.fit = check_fit(graph, exec.neurons, chip, policy);
			if (!exec.fit.fits) {
				auto const& v = exec.fit.violations.front();
				throw std::runtime_error(
				    "partition_feedforward: part '" + exec.name +
				    "' does not fit: " + v.resource + " requires " +
				    std::to_string(v.required) + ", available " +
				    std::to_string(v.available) + ".");
			}
			plan.executions.push_back(std::move(exec));
		}
	}
	detail::build_edges(graph, plan);
	plan.check(graph);
	return plan;
}

inline void ExecutionGraph::check(NetworkGraph const& graph) const
{
	// Slices cover every population exactly once.
	for (PopulationId p = 0; p < graph.populations().size(); ++p) {
		std::vector<char> covered(graph.population(p).size, 0);
		for (auto const& exec : executions) {
			for (auto const& slice : exec.neurons) {
				if (slice.population != p) {
					continue;
				}
				if (slice.end > covered.size() || slice.begin >= slice.end) {
					throw std::runtime_error("ExecutionGraph: slice out of range.");
				}
				for (auto i = slice.begin; i < slice.end; ++i) {
					if (covered[i]++) {
						throw std::runtime_error(
						    "ExecutionGraph: neuron duplicated across executions.");
					}
				}
			}
		}
		for (auto const c : covered) {
			if (!c) {
				throw std::runtime_error("ExecutionGraph: neuron lost in partitioning.");
			}
		}
	}

	// Edge relation must be a DAG (Kahn).
	std::vector<std::size_t> in_degree(executions.size(), 0);
	for (auto const& e : edges) {
		++in_degree[e.target];
	}
	auto const adj = adjacency();
	std::vector<ExecutionId> ready;
	for (ExecutionId e = 0; e < executions.size(); ++e) {
		if (in_degree[e] == 0) {
			ready.push_back(e);
		}
	}
	std::size_t seen = 0;
	while (!ready.empty()) {
		auto const v = ready.back();
		ready.pop_back();
		++seen;
		for (auto const w : adj[v]) {
			if (--in_degree[w] == 0) {
				ready.push_back(w);
			}
		}
	}
	if (seen != executions.size()) {
		throw std::runtime_error("ExecutionGraph: execution dependencies form a cycle.");
	}
}

} // namespace spikepart
