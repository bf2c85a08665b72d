#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spikepart/event.hpp"
#include "spikepart/network.hpp"
#include "spikepart/partition.hpp"
#include "spikepart/tensor.hpp"

namespace spikepart {

// Membrane samples on the fixed time grid: values[batch, step, neuron].
struct TraceTensor
{
	Tensor values;
	double dt_us = 1.0;

	std::size_t batch() const { return values.dim(0); }
	std::size_t steps() const { return values.dim(1); }
	std::size_t neurons() const { return values.dim(2); }

	friend bool operator==(TraceTensor const&, TraceTensor const&) = default;
};

struct BandwidthConfig
{
	// events_per_cycle == unlimited() disables throttling entirely.
	std::size_t events_per_cycle = 2;
	double cycles_per_dt = 250.0; // dt * link clock; 250 cycles per us at defaults
	std::size_t buffer_len = 16;

	static constexpr std::size_t unlimited() { return std::numeric_limits<std::size_t>::max(); }
};

struct TraceClipConfig
{
	double scale = 1.0; // model units -> recorded ADC units
	double lo = -128.0;
	double hi = 127.0;
};

struct EmulatorConfig
{
	double dt_us = 1.0;
	double duration_us = 30.0;
	bool hardware_fidelity = false;
	double weight_scale = 63.0; // model units -> integer hardware weight
	std::size_t weight_bits = 6;
	TraceClipConfig trace_clip;
	BandwidthConfig bandwidth;
	std::uint64_t seed = 0;

	std::size_t steps() const
	{
		return static_cast<std::size_t>(std::llround(duration_us / dt_us));
	}

	void check() const
	{
		if (!(dt_us > 0.0)) {
			throw std::invalid_argument("EmulatorConfig: dt > 0 violated.");
		}
		auto const n = duration_us / dt_us;
		if (std::abs(n - std::round(n)) > 1e-9 || n < 1.0) {
			throw std::invalid_argument("EmulatorConfig: T must be a multiple of dt.");
		}
		if (!(weight_scale > 0.0)) {
			throw std::invalid_argument("EmulatorConfig: weight_scale > 0 violated.");
		}
	}
};

// ---------------------------------------------------------------------------
// Hardware-fidelity transforms

// round(w * weight_scale) clipped to the signed hardware weight range.
inline Tensor quantize_weights(Tensor const& weights, EmulatorConfig const& cfg)
{
	if (!(cfg.weight_scale > 0.0)) {
		throw std::invalid_argument("quantize_weights: weight_scale > 0 violated.");
	}
	double const max_w = static_cast<double>((1u << cfg.weight_bits) - 1u);
	Tensor out(weights.shape());
	for (std::size_t i = 0; i < weights.size(); ++i) {
		double const q = std::round(weights[i] * cfg.weight_scale);
		out[i] = std::clamp(q, -max_w, max_w);
	}
	return out;
}

// Scales recorded membrane values into ADC units, saturates them at the
// recording range and converts back to model units.
inline TraceTensor clip_traces(TraceTensor const& traces, EmulatorConfig const& cfg)
{
	auto const& c = cfg.trace_clip;
	TraceTensor out = traces;
	for (std::size_t i = 0; i < out.values.size(); ++i) {
		out.values[i] = std::clamp(out.values[i] * c.scale, c.lo, c.hi) / c.scale;
	}
	return out;
}

// FIFO link model: each cycle forwards at most events_per_cycle events;
// surplus events wait in a bounded buffer and leave time-stamped at the start
// of the cycle that forwards them; events arriving at a full buffer are lost.
inline std::pair<EventStream, std::size_t> apply_bandwidth(
    EventStream const& inputs, EmulatorConfig const& cfg)
{
	if (!inputs.sorted()) {
		throw std::invalid_argument("apply_bandwidth: inputs must be sorted.");
	}
	auto const& bw = cfg.bandwidth;
	if (bw.events_per_cycle == BandwidthConfig::unlimited()) {
		return {inputs, 0};
	}
	double const cycle_us = cfg.dt_us / bw.cycles_per_dt;
	EventStream delivered;
	delivered.duration_us = inputs.duration_us;
	std::size_t dropped = 0;
	std::deque<SpikeEvent> fifo;
	std::size_t next = 0;
	auto const n = inputs.events.size();
	std::size_t cycle = n ? grid_step(inputs.events[0].time_us, cycle_us) : 0;
	while (next < n || !fifo.empty()) {
		if (fifo.empty() && next < n) {
			cycle = std::max(cycle, grid_step(inputs.events[next].time_us, cycle_us));
		}
		std::size_t capacity = bw.events_per_cycle;
		while (capacity > 0 && !fifo.empty()) {
			auto ev = fifo.front();
			fifo.pop_front();
			ev.time_us = static_cast<double>(cycle) * cycle_us;
			delivered.events.push_back(ev);
			--capacity;
		}
		while (next < n && grid_step(inputs.events[next].time_us, cycle_us) == cycle) {
			if (capacity > 0) {
				delivered.events.push_back(inputs.events[next]);
				--capacity;
			} else if (fifo.size() < bw.buffer_len) {
				fifo.push_back(inputs.events[next]);
			} else {
				++dropped;
			}
			++next;
		}
		++cycle;
	}
	delivered.sort();
	return {delivered, dropped};
}

// ---------------------------------------------------------------------------
// Compiled form of a (sub)network, shared by the emulator and the trainer.

struct CompiledGroup
{
	PopulationId population = 0;
	std::size_t begin = 0; // original index of the first neuron
	std::size_t size = 0;
	NeuronParams params;
};

struct CompiledProjection
{
	ProjectionId original = 0;
	int pre_group = -1;     // internal source group; -1 when fed by channels
	std::size_t block = 0;  // input block when external
	bool back_edge = false; // delivers with one-step delay (recurrence)
	std::size_t post_group = 0;
	// Per pre index (block rank or group-local id): (post-local id, weight),
	// posts ascending.
	std::vector<std::vector<std::pair<std::uint32_t, double>>> fanout;
};

struct CompiledNetwork
{
	std::size_t channel_count = 0;
	std::vector<InputBlock> blocks;
	std::vector<CompiledGroup> groups;
	std::vector<CompiledProjection> projections;
	std::vector<std::size_t> update_order;           // group indices, topological
	std::vector<std::vector<std::size_t>> afferents; // per group, ascending original id
	std::vector<std::size_t> group_offset;           // local neuron id base per group
	std::size_t neuron_count = 0;
};

namespace detail {

inline void finalize_compiled(CompiledNetwork& net)
{
	net.group_offset.clear();
	net.neuron_count = 0;
	for (auto const& g : net.groups) {
		net.group_offset.push_back(net.neuron_count);
		net.neuron_count += g.size;
	}
	net.channel_count = 0;
	for (auto const& b : net.blocks) {
		net.channel_count += b.indices.size();
	}

	// Update order: topological over forward edges; cycles fall back to group
	// index order and the cycle-closing edges become one-step-delayed.
	auto const n = net.groups.size();
	std::vector<std::vector<std::size_t>> adj(n);
	for (auto const& p : net.projections) {
		if (p.pre_group >= 0 && static_cast<std::size_t>(p.pre_group) != p.post_group) {
			adj[p.pre_group].push_back(p.post_group);
		}
	}
	std::vector<std::size_t> in_degree(n, 0);
	for (auto const& a : adj) {
		for (auto const w : a) {
			++in_degree[w];
		}
	}
	std::vector<char> placed(n, 0);
	net.update_order.clear();
	while (net.update_order.size() < n) {
		std::size_t pick = n;
		for (std::size_t g = 0; g < n; ++g) {
			if (!placed[g] && in_degree[g] == 0) {
				pick = g;
				break;
			}
		}
		if (pick == n) {
			// Recurrent remainder: take the smallest unplaced group.
			for (std::size_t g = 0; g < n; ++g) {
				if (!placed[g]) {
					pick = g;
					break;
				}
			}
		}
		placed[pick] = 1;
		net.update_order.push_back(pick);
		for (auto const w : adj[pick]) {
			if (in_degree[w] > 0) {
				--in_degree[w];
			}
		}
	}
	std::vector<std::size_t> position(n, 0);
	for (std::size_t i = 0; i < n; ++i) {
		position[net.update_order[i]] = i;
	}
	for (auto& p : net.projections) {
		p.back_edge = p.pre_group >= 0 &&
		              position[static_cast<std::size_t>(p.pre_group)] >= position[p.post_group];
	}

	net.afferents.assign(n, {});
	std::vector<std::size_t> order(net.projections.size());
	for (std::size_t i = 0; i < order.size(); ++i) {
		order[i] = i;
	}
	std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
		return net.projections[a].original < net.projections[b].original;
	});
	for (auto const i : order) {
		net.afferents[net.projections[i].post_group].push_back(i);
	}
}

// Fanout of one projection slice. `pre_rank_of` maps an original pre index to
// the local pre slot (block rank or group-local id), or npos when the index
// is not present.
inline std::vector<std::vector<std::pair<std::uint32_t, double>>> build_fanout(
    Projection const& proj,
    std::size_t pre_slots,
    std::vector<std::size_t> const& pre_indices, // original index per slot
    std::size_t post_begin,
    std::size_t post_end)
{
	std::vector<std::vector<std::pair<std::uint32_t, double>>> fanout(pre_slots);
	if (proj.connectivity.kind == Connectivity::Kind::dense) {
		for (std::size_t slot = 0; slot < pre_slots; ++slot) {
			auto const pre = pre_indices[slot];
			auto& row = fanout[slot];
			row.reserve(post_end - post_begin);
			for (std::size_t post = post_begin; post < post_end; ++post) {
				row.emplace_back(
				    static_cast<std::uint32_t>(post - post_begin), proj.weights(pre, post));
			}
		}
	} else {
		auto const& c = proj.connectivity;
		// slot lookup by original pre index (pre_indices ascending)
		auto slot_of = [&](std::size_t idx) -> std::size_t {
			auto const it = std::lower_bound(pre_indices.begin(), pre_indices.end(), idx);
			if (it == pre_indices.end() || *it != idx) {
				return pre_slots;
			}
			return static_cast<std::size_t>(it - pre_indices.begin());
		};
		for (std::size_t post = post_begin; post < post_end; ++post) {
			for (std::size_t tap = 0; tap < c.taps_per_post(); ++tap) {
				auto const src = c.tap_source(post, tap);
				if (!src) {
					continue;
				}
				auto const slot = slot_of(*src);
				if (slot == pre_slots) {
					continue;
				}
				fanout[slot].emplace_back(
				    static_cast<std::uint32_t>(post - post_begin), proj.weights(post, tap));
			}
		}
	}
	return fanout;
}

inline std::vector<std::size_t> iota_indices(std::size_t n)
{
	std::vector<std::size_t> v(n);
	for (std::size_t i = 0; i < n; ++i) {
		v[i] = i;
	}
	return v;
}

} // namespace detail

// Compiles the whole network as one execution: every population becomes an
// internal group, every declared input one channel block.
inline CompiledNetwork compile_network(NetworkGraph const& graph)
{
	CompiledNetwork net;
	std::size_t channel = 0;
	for (InputId i = 0; i < graph.inputs().size(); ++i) {
		InputBlock block;
		block.source = Endpoint::input(i);
		block.indices = detail::iota_indices(graph.input(i).size);
		block.channel_begin = channel;
		channel += block.indices.size();
		net.blocks.push_back(std::move(block));
	}
	for (PopulationId p = 0; p < graph.populations().size(); ++p) {
		auto const& pop = graph.population(p);
		net.groups.push_back({p, 0, pop.size, pop.params});
	}
	for (ProjectionId j = 0; j < graph.projections().size(); ++j) {
		auto const& proj = graph.projection(j);
		CompiledProjection cp;
		cp.original = j;
		cp.post_group = proj.post;
		auto const pre_size = graph.endpoint_size(proj.pre);
		auto const pre_indices = detail::iota_indices(pre_size);
		if (proj.pre.is_input()) {
			cp.pre_group = -1;
			cp.block = proj.pre.index;
		} else {
			cp.pre_group = static_cast<int>(proj.pre.index);
		}
		cp.fanout = detail::build_fanout(
		    proj, pre_size, pre_indices, 0, graph.population(proj.post).size);
		net.projections.push_back(std::move(cp));
	}
	detail::finalize_compiled(net);
	return net;
}

// Compiles one execution instance of a plan.
inline CompiledNetwork compile_execution(
    NetworkGraph const& graph, ExecutionInstance const& execution)
{
	CompiledNetwork net;
	net.blocks = execution.inputs;
	std::size_t group_of_population_size = graph.populations().size();
	std::vector<std::size_t> group_of(group_of_population_size, group_of_population_size);
	for (auto const& slice : execution.neurons) {
		group_of[slice.population] = net.groups.size();
		net.groups.push_back(
		    {slice.population, slice.begin, slice.size(),
		     graph.population(slice.population).params});
	}
	for (auto const& aff : execution.afferents) {
		auto const& proj = graph.projection(aff.projection);
		CompiledProjection cp;
		cp.original = aff.projection;
		cp.post_group = group_of[proj.post];
		if (aff.pre_internal) {
			cp.pre_group = static_cast<int>(group_of[proj.pre.index]);
			auto const pre_size = graph.endpoint_size(proj.pre);
			cp.fanout = detail::build_fanout(
			    proj, pre_size, detail::iota_indices(pre_size), aff.post_begin,
			    aff.post_end);
		} else {
			cp.pre_group = -1;
			cp.block = aff.block;
			auto const& block = execution.inputs[aff.block];
			cp.fanout = detail::build_fanout(
			    proj, block.indices.size(), block.indices, aff.post_begin, aff.post_end);
		}
		net.projections.push_back(std::move(cp));
	}
	detail::finalize_compiled(net);
	return net;
}

// Replaces every weight by its quantized hardware value mapped back to model
// units.
inline void apply_hardware_weights(CompiledNetwork& net, EmulatorConfig const& cfg)
{
	double const max_w = static_cast<double>((1u << cfg.weight_bits) - 1u);
	for (auto& proj : net.projections) {
		for (auto& row : proj.fanout) {
			for (auto& [post, w] : row) {
				w = std::clamp(std::round(w * cfg.weight_scale), -max_w, max_w) /
				    cfg.weight_scale;
			}
		}
	}
}

// ---------------------------------------------------------------------------
// Integration kernel

// Observables of one group for one batch entry; spike/clamp flags and the
// recorded membrane per step. The recorded membrane of a spiking step is the
// super-threshold value before reset.
struct GroupRecord
{
	std::vector<double> traces;        // [steps * size]
	std::vector<std::uint8_t> spikes;  // [steps * size]
	std::vector<std::uint8_t> clamped; // [steps * size], refractory steps
};

struct KernelOutput
{
	std::vector<GroupRecord> groups;
	EventStream spike_events; // execution-local neuron ids
};

// Runs one batch entry of a compiled network on the fixed time grid.
//
// Per step and group (groups in topological order): the synaptic current
// decays and accumulates this step's input spikes, the membrane follows an
// exponential-Euler update, LIF neurons spike at threshold and are clamped to
// the reset potential for round(refractory / dt) steps. Events are binned to
// the step containing them; forward connections deliver within the step,
// cycle-closing connections with one step delay. `delivery_masks` (per group,
// size neurons) suppress recorded spikes on their way into efferent
// projections without affecting the recording itself.
inline KernelOutput run_network_entry(
    CompiledNetwork const& net,
    EventStream const& channel_events,
    EmulatorConfig const& cfg,
    std::vector<std::vector<double> const*> const& delivery_masks = {})
{
	cfg.check();
	if (!channel_events.sorted()) {
		throw std::invalid_argument("run_network_entry: inputs must be sorted.");
	}
	for (auto const& ev : channel_events.events) {
		if (ev.id >= net.channel_count) {
			throw std::invalid_argument(
			    "run_network_entry: unknown source id " + std::to_string(ev.id) + ".");
		}
	}
	auto const steps = cfg.steps();
	auto const bins = bin_events(channel_events, cfg.dt_us, steps);

	auto const n_groups = net.groups.size();
	KernelOutput out;
	out.groups.resize(n_groups);
	struct State
	{
		std::vector<double> i, v;
		std::vector<std::int64_t> refractory;
		double alpha_mem, alpha_syn;
		std::int64_t refractory_steps;
	};
	std::vector<State> states(n_groups);
	for (std::size_t g = 0; g < n_groups; ++g) {
		auto const& grp = net.groups[g];
		auto& st = states[g];
		st.i.assign(grp.size, 0.0);
		st.v.assign(grp.size, grp.params.v_leak);
		st.refractory.assign(grp.size, 0);
		st.alpha_mem = std::exp(-cfg.dt_us / grp.params.tau_mem_us);
		st.alpha_syn = std::exp(-cfg.dt_us / grp.params.tau_syn_us);
		st.refractory_steps = std::llround(grp.params.refractory_us / cfg.dt_us);
		out.groups[g].traces.assign(steps * grp.size, 0.0);
		out.groups[g].spikes.assign(steps * grp.size, 0);
		out.groups[g].clamped.assign(steps * grp.size, 0);
	}

	std::vector<double> drive;
	for (std::size_t t = 0; t < steps; ++t) {
		for (auto const g : net.update_order) {
			auto const& grp = net.groups[g];
			auto& st = states[g];
			drive.assign(grp.size, 0.0);
			for (auto const pi : net.afferents[g]) {
				auto const& proj = net.projections[pi];
				if (proj.pre_group < 0) {
					auto const& block = net.blocks[proj.block];
					auto const begin = static_cast<std::uint32_t>(block.channel_begin);
					auto const end =
					    static_cast<std::uint32_t>(begin + block.indices.size());
					auto const& bin = bins[t];
					auto it = std::lower_bound(bin.begin(), bin.end(), begin);
					for (; it != bin.end() && *it < end; ++it) {
						for (auto const& [post, w] : proj.fanout[*it - begin]) {
							drive[post] += w;
						}
					}
				} else {
					auto const src = static_cast<std::size_t>(proj.pre_group);
					if (proj.back_edge && t == 0) {
						continue;
					}
					auto const ts = proj.back_edge ? t - 1 : t;
					auto const* s = &out.groups[src].spikes[ts * net.groups[src].size];
					auto const* mask = src < delivery_masks.size() && delivery_masks[src]
					                       ? delivery_masks[src]->data()
					                       : nullptr;
					for (std::size_t pre = 0; pre < net.groups[src].size; ++pre) {
						if (!s[pre] || (mask && mask[pre] == 0.0)) {
							continue;
						}
						for (auto const& [post, w] : proj.fanout[pre]) {
							drive[post] += w;
						}
					}
				}
			}

			auto const& p = grp.params;
			auto* trace = &out.groups[g].traces[t * grp.size];
			auto* spike = &out.groups[g].spikes[t * grp.size];
			auto* clamp = &out.groups[g].clamped[t * grp.size];
			for (std::size_t n = 0; n < grp.size; ++n) {
				st.i[n] = st.i[n] * st.alpha_syn + drive[n];
				if (p.kind == NeuronKind::lif && st.refractory[n] > 0) {
					st.v[n] = p.v_reset;
					--st.refractory[n];
					trace[n] = p.v_reset;
					clamp[n] = 1;
					continue;
				}
				double const v_new =
				    p.v_leak + (st.v[n] - p.v_leak) * st.alpha_mem + st.i[n] * cfg.dt_us;
				trace[n] = v_new;
				if (p.kind == NeuronKind::lif && v_new >= p.v_thresh) {
					spike[n] = 1;
					st.v[n] = p.v_reset;
					st.refractory[n] = st.refractory_steps;
				} else {
					st.v[n] = v_new;
				}
			}
		}
	}

	out.spike_events.duration_us = cfg.duration_us;
	for (std::size_t t = 0; t < steps; ++t) {
		for (std::size_t g = 0; g < n_groups; ++g) {
			auto const& grp = net.groups[g];
			auto const* spike = &out.groups[g].spikes[t * grp.size];
			for (std::size_t n = 0; n < grp.size; ++n) {
				if (spike[n]) {
					out.spike_events.events.push_back(
					    {static_cast<double>(t) * cfg.dt_us,
					     static_cast<std::uint32_t>(net.group_offset[g] + n)});
				}
			}
		}
	}

	for (std::size_t g = 0; g < n_groups; ++g) {
		for (auto const v : out.groups[g].traces) {
			if (!std::isfinite(v)) {
				throw std::runtime_error(
				    "run_network_entry: non-finite membrane in population " +
				    std::to_string(net.groups[g].population) + ".");
			}
		}
	}
	return out;
}

// ---------------------------------------------------------------------------
// Emulator surface: one partition, one virtual chip.

struct PartitionRun
{
	std::vector<EventStream> spikes; // per batch entry, execution-local ids
	TraceTensor traces;              // [batch, steps, local neurons]
	std::vector<KernelOutput> detail;
	std::size_t dropped_events = 0;
};

// Runs a compiled partition for a batch of input streams. With
// hardware_fidelity enabled the input passes the bandwidth model, weights are
// expected to be quantized (see apply_hardware_weights) and recorded traces
// saturate at the ADC range.
inline PartitionRun run_partition(
    CompiledNetwork const& net,
    std::vector<EventStream> const& batch_inputs,
    EmulatorConfig const& cfg,
    std::vector<std::vector<double> const*> const& delivery_masks = {})
{
	cfg.check();
	auto const steps = cfg.steps();
	PartitionRun run;
	run.traces.dt_us = cfg.dt_us;
	run.traces.values = Tensor({batch_inputs.size(), steps, net.neuron_count});
	for (std::size_t b = 0; b < batch_inputs.size(); ++b) {
		EventStream const* input = &batch_inputs[b];
		EventStream throttled;
		if (cfg.hardware_fidelity) {
			auto [delivered, dropped] = apply_bandwidth(*input, cfg);
			throttled = std::move(delivered);
			run.dropped_events += dropped;
			input = &throttled;
		}
		auto entry = run_network_entry(net, *input, cfg, delivery_masks);
		for (std::size_t g = 0; g < net.groups.size(); ++g) {
			auto const size = net.groups[g].size;
			for (std::size_t t = 0; t < steps; ++t) {
				for (std::size_t n = 0; n < size; ++n) {
					run.traces.values(b, t, net.group_offset[g] + n) =
					    entry.groups[g].traces[t * size + n];
				}
			}
		}
		run.spikes.push_back(entry.spike_events);
		run.detail.push_back(std::move(entry));
	}
	if (cfg.hardware_fidelity) {
		run.traces = clip_traces(run.traces, cfg);
	}
	return run;
}

} // namespace spikepart
