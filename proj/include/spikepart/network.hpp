#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spikepart/tensor.hpp"

namespace spikepart {

enum class NeuronKind
{
	lif, // leaky integrate-and-fire: thresholded, resets, may be refractory
	li   // leaky integrator: no threshold, used for readout
};

struct NeuronParams
{
	double tau_mem_us = 10.0;
	double tau_syn_us = 10.0;
	double v_leak = 0.0;
	double v_reset = 0.0;
	double v_thresh = 1.0;
	double refractory_us = 0.0;
	NeuronKind kind = NeuronKind::lif;

	void check() const
	{
		if (!(tau_mem_us > 0.0)) {
			throw std::invalid_argument("NeuronParams: tau_mem > 0 violated.");
		}
		if (!(tau_syn_us > 0.0)) {
			throw std::invalid_argument("NeuronParams: tau_syn > 0 violated.");
		}
		if (!(refractory_us >= 0.0)) {
			throw std::invalid_argument("NeuronParams: refractory >= 0 violated.");
		}
		if (kind == NeuronKind::lif && !(v_thresh > v_reset)) {
			throw std::invalid_argument("NeuronParams: LIF requires v_thresh > v_reset.");
		}
	}

	friend bool operator==(NeuronParams const&, NeuronParams const&) = default;
};

using PopulationId = std::size_t;
using ProjectionId = std::size_t;
using InputId = std::size_t;

// Projection endpoint: either a declared external input or a population.
struct Endpoint
{
	enum class Kind
	{
		external_input,
		population
	};

	Kind kind = Kind::population;
	std::size_t index = 0;

	static Endpoint input(InputId i) { return {Kind::external_input, i}; }
	static Endpoint population(PopulationId p) { return {Kind::population, p}; }

	bool is_input() const { return kind == Kind::external_input; }

	friend bool operator==(Endpoint const&, Endpoint const&) = default;
};

struct Connectivity
{
	enum class Kind
	{
		dense,
		receptive_field
	};

	Kind kind = Kind::dense;

	// Receptive-field parameters. Windows are moved over the pre side's
	// (in_h, in_w, channels) grid with the given stride; windows reaching past
	// the border keep their weight slots but the out-of-range taps connect to
	// nothing.
	std::size_t kernel_h = 0;
	std::size_t kernel_w = 0;
	std::size_t channels = 0;
	std::size_t stride = 1;
	std::size_t in_h = 0;
	std::size_t in_w = 0;

	static Connectivity dense_all() { return {}; }

	static Connectivity receptive_field(
	    std::size_t kernel_h,
	    std::size_t kernel_w,
	    std::size_t channels,
	    std::size_t stride,
	    std::size_t in_h,
	    std::size_t in_w)
	{
		Connectivity c;
		c.kind = Kind::receptive_field;
		c.kernel_h = kernel_h;
		c.kernel_w = kernel_w;
		c.channels = channels;
		c.stride = stride;
		c.in_h = in_h;
		c.in_w = in_w;
		return c;
	}

	std::size_t out_h() const { return (in_h + stride - 1) / stride; }
	std::size_t out_w() const { return (in_w + stride - 1) / stride; }
	std::size_t post_count() const { return out_h() * out_w(); }
	std::size_t taps_per_post() const { return kernel_h * kernel_w * channels; }

	// Pre index of a window tap, or nullopt when the tap is outside the grid.
	std::optional<std::size_t> tap_source(std::size_t post, std::size_t tap) const
	{
		auto const ph = post / out_w();
		auto const pw = post % out_w();
		auto const per_row = kernel_w * channels;
		auto const kh = tap / per_row;
		auto const kw = (tap % per_row) / channels;
		auto const c = tap % channels;
		auto const h = ph * stride + kh;
		auto const w = pw * stride + kw;
		if (h >= in_h || w >= in_w) {
			return std::nullopt;
		}
		return (h * in_w + w) * channels + c;
	}

	friend bool operator==(Connectivity const&, Connectivity const&) = default;
};

struct Population
{
	std::string name;
	std::size_t size = 0;
	NeuronParams params;
	std::optional<std::string> execution;

	friend bool operator==(Population const&, Population const&) = default;
};

// Weight layout: dense projections store [pre_size x post_size]; receptive-
// field projections store [post_size x taps_per_post], one weight row per
// post neuron. Weights are model units; quantization happens at emulation.
struct Projection
{
	std::string name;
	Endpoint pre;
	PopulationId post = 0;
	Connectivity connectivity;
	Tensor weights;
	std::optional<std::string> execution;

	friend bool operator==(Projection const&, Projection const&) = default;
};

struct ExternalInput
{
	std::string name;
	std::size_t size = 0;

	friend bool operator==(ExternalInput const&, ExternalInput const&) = default;
};

struct ValidationIssue
{
	std::string message;
};

struct ValidationReport
{
	std::vector<ValidationIssue> issues;

	bool clean() const { return issues.empty(); }
};

class NetworkGraph
{
public:
	std::vector<ExternalInput> const& inputs() const { return m_inputs; }
	std::vector<Population> const& populations() const { return m_populations; }
	std::vector<Projection> const& projections() const { return m_projections; }

	Population const& population(PopulationId id) const { return m_populations.at(id); }
	Projection const& projection(ProjectionId id) const { return m_projections.at(id); }
	Projection& projection(ProjectionId id) { return m_projections.at(id); }
	ExternalInput const& input(InputId id) const { return m_inputs.at(id); }

	std::size_t endpoint_size(Endpoint const& e) const
	{
		return e.is_input() ? m_inputs.at(e.index).size : m_populations.at(e.index).size;
	}

	InputId add_input(std::string name, std::size_t size)
	{
		if (size < 1) {
			throw std::invalid_argument("add_input: size >= 1 violated.");
		}
		if (find_input(name)) {
			throw std::invalid_argument("add_input: duplicate input name '" + name + "'.");
		}
		m_inputs.push_back({std::move(name), size});
		return m_inputs.size() - 1;
	}

	PopulationId add_population(
	    std::size_t size,
	    NeuronParams const& params,
	    std::optional<std::string> execution = std::nullopt,
	    std::string name = {})
	{
		if (size < 1) {
			throw std::invalid_argument("add_population: size >= 1 violated.");
		}
		params.check();
		if (name.empty()) {
			name = "p" + std::to_string(m_populations.size());
		}
		if (find_population(name)) {
			throw std::invalid_argument(
			    "add_population: duplicate population name '" + name + "'.");
		}
		m_populations.push_back({std::move(name), size, params, std::move(execution)});
		return m_populations.size() - 1;
	}

	ProjectionId add_projection(
	    Endpoint pre,
	    PopulationId post,
	    Connectivity const& connectivity,
	    Tensor weights,
	    std::optional<std::string> execution = std::nullopt,
	    std::string name = {})
	{
		if (pre.is_input() ? pre.index >= m_inputs.size() : pre.index >= m_populations.size()) {
			throw std::invalid_argument("add_projection: unknown pre endpoint.");
		}
		if (post >= m_populations.size()) {
			throw std::invalid_argument("add_projection: unknown post population.");
		}
		check_projection_shape(pre, post, connectivity, weights);
		if (name.empty()) {
			name = "proj" + std::to_string(m_projections.size());
		}
		m_projections.push_back(
		    {std::move(name), pre, post, connectivity, std::move(weights),
		     std::move(execution)});
		return m_projections.size() - 1;
	}

	std::optional<PopulationId> find_population(std::string const& name) const
	{
		for (std::size_t i = 0; i < m_populations.size(); ++i) {
			if (m_populations[i].name == name) {
				return i;
			}
		}
		return std::nullopt;
	}

	std::optional<InputId> find_input(std::string const& name) const
	{
		for (std::size_t i = 0; i < m_inputs.size(); ++i) {
			if (m_inputs[i].name == name) {
				return i;
			}
		}
		return std::nullopt;
	}

	// Per-neuron signed synaptic fan-in of a population, summed over its
	// afferent projections. Structural receptive-field taps count even when
	// clipped at the border; every post neuron of a projection sees the same
	// structural fan-in.
	std::size_t fan_in(PopulationId post) const
	{
		std::size_t total = 0;
		for (auto const& proj : m_projections) {
			if (proj.post != post) {
				continue;
			}
			if (proj.connectivity.kind == Connectivity::Kind::dense) {
				total += endpoint_size(proj.pre);
			} else {
				total += proj.connectivity.taps_per_post();
			}
		}
		return total;
	}

	// Adjacency over populations (external inputs excluded).
	std::vector<std::vector<PopulationId>> population_adjacency() const
	{
		std::vector<std::vector<PopulationId>> adj(m_populations.size());
		for (auto const& proj : m_projections) {
			if (!proj.pre.is_input()) {
				adj[proj.pre.index].push_back(proj.post);
			}
		}
		return adj;
	}

	// Strongly connected components in reverse topological order of the
	// condensation; each component lists member populations.
	std::vector<std::vector<PopulationId>> strongly_connected_components() const;

	ValidationReport validate() const;

	friend bool operator==(NetworkGraph const&, NetworkGraph const&) = default;

	// Populations in topological order; throws if the population graph has a
	// cycle (self-loops included).
	std::vector<PopulationId> topological_order() const;

private:
	void check_projection_shape(
	    Endpoint const& pre,
	    PopulationId post,
	    Connectivity const& connectivity,
	    Tensor const& weights) const
	{
		auto const pre_size = endpoint_size(pre);
		auto const post_size = m_populations[post].size;
		if (connectivity.kind == Connectivity::Kind::dense) {
			if (weights.rank() != 2 || weights.dim(0) != pre_size ||
			    weights.dim(1) != post_size) {
				throw std::invalid_argument(
				    "add_projection: dense weight shape must be [" +
				    std::to_string(pre_size) + " x " + std::to_string(post_size) + "].");
			}
		} else {
			auto const& c = connectivity;
			if (c.kernel_h == 0 || c.kernel_w == 0 || c.channels == 0 || c.stride == 0) {
				throw std::invalid_argument(
				    "add_projection: receptive-field parameters must be positive.");
			}
			if (c.in_h * c.in_w * c.channels != pre_size) {
				throw std::invalid_argument(
				    "add_projection: receptive-field input grid does not match pre size " +
				    std::to_string(pre_size) + ".");
			}
			if (c.post_count() != post_size) {
				throw std::invalid_argument(
				    "add_projection: receptive field yields " +
				    std::to_string(c.post_count()) + " post neurons, population has " +
				    std::to_string(post_size) + ".");
			}
			if (weights.rank() != 2 || weights.dim(0) != post_size ||
			    weights.dim(1) != c.taps_per_post()) {
				throw std::invalid_argument(
				    "add_projection: receptive-field weight shape must be [" +
				    std::to_string(post_size) + " x " + std::to_string(c.taps_per_post()) +
				    "].");
			}
		}
	}

	std::vector<ExternalInput> m_inputs;
	std::vector<Population> m_populations;
	std::vector<Projection> m_projections;
};

inline std::vector<std::vector<PopulationId>> NetworkGraph::strongly_connected_components()
    const
{
	// Iterative Tarjan.
	auto const n = m_populations.size();
	auto const adj = population_adjacency();
	std::vector<int> index(n, -1);
	std::vector<int> lowlink(n, 0);
	std::vector<bool> on_stack(n, false);
	std::vector<PopulationId> stack;
	std::vector<std::vector<PopulationId>> components;
	int next_index = 0;

	struct Frame
	{
		PopulationId v;
		std::size_t child;
	};

	for (PopulationId root = 0; root < n; ++root) {
		if (index[root] != -1) {
			continue;
		}
		std::vector<Frame> frames{{root, 0}};
		index[root] = lowlink[root] = next_index++;
		stack.push_back(root);
		on_stack[root] = true;
		while (!frames.empty()) {
			auto& frame = frames.back();
			auto const v = frame.v;
			if (frame.child < adj[v].size()) {
				auto const w = adj[v][frame.child++];
				if (index[w] == -1) {
					index[w] = lowlink[w] = next_index++;
					stack.push_back(w);
					on_stack[w] = true;
					frames.push_back({w, 0});
				} else if (on_stack[w]) {
					lowlink[v] = std::min(lowlink[v], index[w]);
				}
			} else {
				if (lowlink[v] == index[v]) {
					std::vector<PopulationId> component;
					for (;;) {
						auto const w = stack.back();
						stack.pop_back();
						on_stack[w] = false;
						component.push_back(w);
						if (w == v) {
							break;
						}
					}
					components.push_back(std::move(component));
				}
				frames.pop_back();
				if (!frames.empty()) {
					auto const parent = frames.back().v;
					lowlink[parent] = std::min(lowlink[parent], lowlink[v]);
				}
			}
		}
	}
	return components;
}

inline ValidationReport NetworkGraph::validate() const
{
	ValidationReport report;

	for (std::size_t i = 0; i < m_projections.size(); ++i) {
		auto const& proj = m_projections[i];
		auto const pre_ok = proj.pre.is_input() ? proj.pre.index < m_inputs.size()
		                                        : proj.pre.index < m_populations.size();
		if (!pre_ok) {
			report.issues.push_back(
			    {"projection '" + proj.name + "': dangling pre reference."});
		}
		if (proj.post >= m_populations.size()) {
			report.issues.push_back(
			    {"projection '" + proj.name + "': dangling post reference."});
		}
	}
	if (!report.clean()) {
		return report;
	}

	std::vector<bool> has_self_loop(m_populations.size(), false);
	for (auto const& proj : m_projections) {
		if (!proj.pre.is_input() && proj.pre.index == proj.post) {
			has_self_loop[proj.post] = true;
		}
	}

	// Recurrent components must stay within a single execution; a component
	// is recurrent when it has >= 2 members or a self-loop.
	for (auto const& component : strongly_connected_components()) {
		bool const recurrent = component.size() >= 2 || has_self_loop[component.front()];
		if (!recurrent) {
			continue;
		}
		std::vector<std::string> executions;
		auto note = [&](std::optional<std::string> const& e) {
			if (e && std::find(executions.begin(), executions.end(), *e) == executions.end()) {
				executions.push_back(*e);
			}
		};
		for (auto const p : component) {
			note(m_populations[p].execution);
		}
		for (auto const& proj : m_projections) {
			if (proj.pre.is_input()) {
				continue;
			}
			bool const pre_in =
			    std::find(component.begin(), component.end(), proj.pre.index) !=
			    component.end();
			bool const post_in =
			    std::find(component.begin(), component.end(), proj.post) != component.end();
			if (pre_in && post_in) {
				note(proj.execution);
			}
		}
		if (executions.size() >= 2) {
			std::string members;
			for (auto const p : component) {
				members += (members.empty() ? "" : ", ") + m_populations[p].name;
			}
			report.issues.push_back(
			    {"recurrent component {" + members + "} spans " +
			     std::to_string(executions.size()) +
			     " executions; recurrence must stay within one execution."});
		}
	}
	return report;
}

inline std::vector<PopulationId> NetworkGraph::topological_order() const
{
	auto const n = m_populations.size();
	auto const adj = population_adjacency();
	std::vector<std::size_t> in_degree(n, 0);
	for (auto const& proj : m_projections) {
		if (!proj.pre.is_input()) {
			++in_degree[proj.post];
		}
	}
	std::vector<PopulationId> order;
	std::vector<PopulationId> ready;
	for (PopulationId p = 0; p < n; ++p) {
		if (in_degree[p] == 0) {
			ready.push_back(p);
		}
	}
	while (!ready.empty()) {
		// Smallest id first keeps the order deterministic.
		std::sort(ready.begin(), ready.end(), std::greater<>());
		auto const v = ready.back();
		ready.pop_back();
		order.push_back(v);
		for (auto const w : adj[v]) {
			if (--in_degree[w] == 0) {
				ready.push_back(w);
			}
		}
	}
	if (order.size() != n) {
		throw std::runtime_error("topological_order: population graph has a cycle.");
	}
	return order;
}

} // namespace spikepart
