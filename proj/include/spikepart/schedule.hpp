#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "spikepart/emulator.hpp"
#include "spikepart/event.hpp"
#include "spikepart/network.hpp"
#include "spikepart/partition.hpp"

namespace spikepart {

// Topological levels of an execution plan: every dependency edge points from
// a lower level to a strictly higher one; executions within a level are
// mutually independent.
struct Schedule
{
	std::vector<std::vector<ExecutionId>> levels;
	std::size_t chip_count = 1;

	std::size_t depth() const { return levels.size(); }

	std::size_t total_runs() const
	{
		std::size_t n = 0;
		for (auto const& level : levels) {
			n += level.size();
		}
		return n;
	}
};

// Longest-path layering (minimal depth).
inline Schedule topological_levels(ExecutionGraph const& plan)
{
	auto const n = plan.executions.size();
	std::vector<std::size_t> in_degree(n, 0);
	for (auto const& e : plan.edges) {
		++in_degree[e.target];
	}
	auto const adj = plan.adjacency();
	std::vector<std::size_t> level(n, 0);
	std::vector<ExecutionId> ready;
	for (ExecutionId e = 0; e < n; ++e) {
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
			level[w] = std::max(level[w], level[v] + 1);
			if (--in_degree[w] == 0) {
				ready.push_back(w);
			}
		}
	}
	if (seen != n) {
		throw std::runtime_error("topological_levels: execution graph has a cycle.");
	}
	Schedule schedule;
	for (ExecutionId e = 0; e < n; ++e) {
		if (level[e] >= schedule.levels.size()) {
			schedule.levels.resize(level[e] + 1);
		}
		schedule.levels[level[e]].push_back(e);
	}
	for (auto& l : schedule.levels) {
		std::sort(l.begin(), l.end());
	}
	return schedule;
}

// Cost model of one hardware run: a batched execution occupies the chip for
// batch_size * (experiment window + relaxation wait), plus fixed per-run
// overhead and a per-recorded-sample readout cost.
struct RuntimeModel
{
	std::size_t batch_size = 1;
	double experiment_us = 30.0;
	double relax_wait_us = 50.0;
	double per_run_overhead_us = 0.0;
	double recording_per_sample_us = 0.0;
	std::size_t samples_per_run = 0;

	double realtime_per_run_us() const
	{
		return static_cast<double>(batch_size) * (experiment_us + relax_wait_us);
	}

	void check() const
	{
		if (experiment_us < 0.0 || relax_wait_us < 0.0 || per_run_overhead_us < 0.0 ||
		    recording_per_sample_us < 0.0) {
			throw std::invalid_argument("RuntimeModel: durations must be >= 0.");
		}
	}
};

struct RuntimeEstimate
{
	std::size_t runs_total = 0;
	std::size_t depth = 0;
	double realtime_per_run_us = 0.0;
	double hardware_realtime_us = 0.0; // sum over levels: ceil(|level| / chips) runs
	double overhead_us = 0.0;
	double recording_us = 0.0;

	double total_us() const { return hardware_realtime_us + overhead_us + recording_us; }
};

// Hardware time scales with the schedule depth and with the ratio of
// concurrently executable partitions to available chips; host-side overheads
// accrue per run.
inline RuntimeEstimate estimate_runtime(
    Schedule const& schedule, RuntimeModel const& model, std::size_t chips)
{
	if (chips < 1) {
		throw std::invalid_argument("estimate_runtime: chips >= 1 required.");
	}
	model.check();
	RuntimeEstimate est;
	est.depth = schedule.depth();
	est.realtime_per_run_us = model.realtime_per_run_us();
	for (auto const& level : schedule.levels) {
		est.runs_total += level.size();
		auto const rounds = (level.size() + chips - 1) / chips;
		est.hardware_realtime_us += static_cast<double>(rounds) * est.realtime_per_run_us;
	}
	est.overhead_us = static_cast<double>(est.runs_total) * model.per_run_overhead_us;
	est.recording_us = static_cast<double>(est.runs_total) *
	                   static_cast<double>(model.samples_per_run) *
	                   model.recording_per_sample_us;
	return est;
}

// Remaps event source ids; times are preserved exactly.
inline EventStream translate_events(
    EventStream const& events, std::map<std::uint32_t, std::uint32_t> const& mapping)
{
	EventStream out;
	out.duration_us = events.duration_us;
	out.events.reserve(events.events.size());
	for (auto const& ev : events.events) {
		auto const it = mapping.find(ev.id);
		if (it == mapping.end()) {
			throw std::invalid_argument(
			    "translate_events: unmapped source id " + std::to_string(ev.id) + ".");
		}
		out.events.push_back({ev.time_us, it->second});
	}
	out.sort();
	return out;
}

struct TimingBreakdown
{
	double compile_us = 0.0;       // plan preparation / network compilation
	double event_encode_us = 0.0;  // building per-execution input streams
	double run_us = 0.0;           // backend execution
	double event_decode_us = 0.0;  // collecting spikes
	double trace_decode_us = 0.0;  // collecting membrane traces
	double realtime_model_us = 0.0;
};

struct ExecutionResult
{
	std::vector<EventStream> spikes; // per batch entry, execution-local ids
	TraceTensor traces;              // [batch, steps, local neurons]
	std::size_t dropped_events = 0;
};

struct RunResults
{
	std::vector<ExecutionResult> per_execution;
	// Observables reassembled by original neuron index.
	std::vector<Tensor> spikes_by_population; // [batch, steps, size], 0/1
	std::vector<TraceTensor> traces_by_population;
	TimingBreakdown timing;
	std::size_t dropped_events = 0;
};

struct OrchestratorOptions
{
	EmulatorConfig config;
	std::size_t workers = 1;
	// Per population [batch, size] delivery masks (1 keeps a spike, 0 drops
	// it before the next projection). Empty: no masking.
	std::vector<Tensor> const* delivery_masks = nullptr;
};

namespace detail {

inline double elapsed_us(std::chrono::steady_clock::time_point since)
{
	return std::chrono::duration<double, std::micro>(
	           std::chrono::steady_clock::now() - since)
	    .count();
}

} // namespace detail

// Runs a plan level by level: each execution runs once per batch, recorded
// source spikes are translated on the host and injected into dependent
// executions, results merge deterministically by execution id. Executions
// within a level may run on parallel workers; the output does not depend on
// the worker count.
inline RunResults orchestrate(
    NetworkGraph const& graph,
    ExecutionGraph const& plan,
    std::vector<std::vector<EventStream>> const& inputs, // [input id][batch entry]
    OrchestratorOptions const& options)
{
	auto const t0 = std::chrono::steady_clock::now();
	options.config.check();
	if (inputs.size() != graph.inputs().size()) {
		throw std::invalid_argument(
		    "orchestrate: expected " + std::to_string(graph.inputs().size()) +
		    " input streams, got " + std::to_string(inputs.size()) + ".");
	}
	std::size_t const batch = inputs.empty() ? 1 : inputs.front().size();
	for (auto const& per_input : inputs) {
		if (per_input.size() != batch) {
			throw std::invalid_argument("orchestrate: ragged input batch.");
		}
	}
	auto const schedule = topological_levels(plan);
	auto const steps = options.config.steps();

	// Compile every execution up front.
	std::vector<CompiledNetwork> nets;
	std::vector<EmulatorConfig> configs;
	nets.reserve(plan.executions.size());
	for (auto const& exec : plan.executions) {
		auto net = compile_execution(graph, exec);
		auto cfg = options.config;
		cfg.hardware_fidelity =
		    options.config.hardware_fidelity && exec.backend == Backend::emulated;
		if (cfg.hardware_fidelity) {
			apply_hardware_weights(net, cfg);
		}
		nets.push_back(std::move(net));
		configs.push_back(cfg);
	}

	RunResults results;
	results.per_execution.resize(plan.executions.size());
	results.timing.compile_us = detail::elapsed_us(t0);

	// Per-population records used both for event forwarding and reassembly.
	std::vector<PartitionRun> runs(plan.executions.size());

	for (auto const& level : schedule.levels) {
		// Build input streams for this level (source executions are complete).
		auto const t_encode = std::chrono::steady_clock::now();
		std::vector<std::vector<EventStream>> level_inputs(plan.executions.size());
		for (auto const e : level) {
			auto const& exec = plan.executions[e];
			std::vector<EventStream> streams(
			    batch, EventStream{options.config.duration_us, {}});
			// External inputs.
			for (auto const& block : exec.inputs) {
				if (!block.source.is_input()) {
					continue;
				}
				auto const& per_entry = inputs[block.source.index];
				for (std::size_t b = 0; b < batch; ++b) {
					for (auto const& ev : per_entry[b].events) {
						auto const it = std::lower_bound(
						    block.indices.begin(), block.indices.end(),
						    static_cast<std::size_t>(ev.id));
						if (it == block.indices.end() || *it != ev.id) {
							continue; // consumed by another part
						}
						auto const rank =
						    static_cast<std::size_t>(it - block.indices.begin());
						streams[b].events.push_back(
						    {ev.time_us,
						     static_cast<std::uint32_t>(block.channel_begin + rank)});
					}
				}
			}
			// Recorded spikes from source executions.
			for (auto const& edge : plan.edges) {
				if (edge.target != exec.id) {
					continue;
				}
				std::map<std::uint32_t, std::uint32_t> mapping(
				    edge.translation.begin(), edge.translation.end());
				auto const& source_exec = plan.executions[edge.source];
				auto const* masks = options.delivery_masks;
				for (std::size_t b = 0; b < batch; ++b) {
					for (auto const& ev : runs[edge.source].spikes[b].events) {
						auto const it = mapping.find(ev.id);
						if (it == mapping.end()) {
							continue; // other slice of the source execution
						}
						if (masks && !masks->empty()) {
							// Map back to (population, original index).
							std::uint32_t offset = 0;
							for (auto const& slice : source_exec.neurons) {
								auto const size =
								    static_cast<std::uint32_t>(slice.size());
								if (ev.id < offset + size) {
									auto const orig = slice.begin + (ev.id - offset);
									if ((*masks)[slice.population](b, orig) == 0.0) {
										goto next_event;
									}
									break;
								}
								offset += size;
							}
						}
						streams[b].events.push_back({ev.time_us, it->second});
					next_event:;
					}
				}
			}
			for (auto& s : streams) {
				s.sort();
			}
			level_inputs[e] = std::move(streams);
		}
		results.timing.event_encode_us += detail::elapsed_us(t_encode);

		// Run the level, possibly on parallel workers; results land in
		// per-execution slots, so the merge order is fixed.
		auto const t_run = std::chrono::steady_clock::now();
		auto run_one = [&](ExecutionId e) {
			try {
				runs[e] = run_partition(nets[e], level_inputs[e], configs[e]);
			} catch (std::exception const& err) {
				throw std::runtime_error(
				    "orchestrate: execution '" + plan.executions[e].name +
				    "' failed: " + err.what());
			}
		};
		auto const workers = std::max<std::size_t>(1, options.workers);
		if (workers == 1 || level.size() == 1) {
			for (auto const e : level) {
				run_one(e);
			}
		} else {
			std::vector<std::thread> pool;
			std::mutex error_mutex;
			std::exception_ptr error;
			std::size_t next = 0;
			std::mutex next_mutex;
			auto worker = [&]() {
				for (;;) {
					std::size_t idx;
					{
						std::lock_guard<std::mutex> lock(next_mutex);
						if (next >= level.size()) {
							return;
						}
						idx = next++;
					}
					try {
						run_one(level[idx]);
					} catch (...) {
						std::lock_guard<std::mutex> lock(error_mutex);
						if (!error) {
							error = std::current_exception();
						}
					}
				}
			};
			for (std::size_t w = 0; w < std::min(workers, level.size()); ++w) {
				pool.emplace_back(worker);
			}
			for (auto& th : pool) {
				th.join();
			}
			if (error) {
				std::rethrow_exception(error);
			}
		}
		results.timing.run_us += detail::elapsed_us(t_run);
	}

	// Collect per-execution results and reassemble by original neuron index.
	auto const t_decode = std::chrono::steady_clock::now();
	for (ExecutionId e = 0; e < plan.executions.size(); ++e) {
		results.per_execution[e].spikes = runs[e].spikes;
		results.per_execution[e].traces = runs[e].traces;
		results.per_execution[e].dropped_events = runs[e].dropped_events;
		results.dropped_events += runs[e].dropped_events;
	}
	results.timing.event_decode_us = detail::elapsed_us(t_decode);

	auto const t_traces = std::chrono::steady_clock::now();
	results.spikes_by_population.resize(graph.populations().size());
	results.traces_by_population.resize(graph.populations().size());
	for (PopulationId p = 0; p < graph.populations().size(); ++p) {
		auto const size = graph.population(p).size;
		results.spikes_by_population[p] = Tensor({batch, steps, size});
		results.traces_by_population[p].dt_us = options.config.dt_us;
		results.traces_by_population[p].values = Tensor({batch, steps, size});
	}
	for (ExecutionId e = 0; e < plan.executions.size(); ++e) {
		auto const& exec = plan.executions[e];
		std::size_t offset = 0;
		for (std::size_t g = 0; g < exec.neurons.size(); ++g) {
			auto const& slice = exec.neurons[g];
			for (std::size_t b = 0; b < batch; ++b) {
				for (std::size_t t = 0; t < steps; ++t) {
					for (std::size_t n = 0; n < slice.size(); ++n) {
						results.traces_by_population[slice.population].values(
						    b, t, slice.begin + n) =
						    runs[e].traces.values(b, t, offset + n);
						results.spikes_by_population[slice.population](
						    b, t, slice.begin + n) = static_cast<double>(
						    runs[e].detail[b].groups[g].spikes[t * slice.size() + n]);
					}
				}
			}
			offset += slice.size();
		}
	}
	results.timing.trace_decode_us = detail::elapsed_us(t_traces);
	return results;
}

} // namespace spikepart
