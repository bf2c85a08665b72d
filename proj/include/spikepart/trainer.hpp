#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spikepart/emulator.hpp"
#include "spikepart/network.hpp"
#include "spikepart/partition.hpp"
#include "spikepart/rng.hpp"
#include "spikepart/schedule.hpp"
#include "spikepart/tensor.hpp"

namespace spikepart {

// SuperSpike-style surrogate for the spike nonlinearity.
inline double surrogate_derivative(double v, double theta, double alpha)
{
	if (!(alpha > 0.0)) {
		throw std::invalid_argument("surrogate_derivative: alpha > 0 violated.");
	}
	double const d = alpha * std::abs(v - theta) + 1.0;
	return 1.0 / (d * d);
}

enum class DecodeMethod
{
	max_over_time,
	last_value
};

// Readout traces [batch, steps, classes] -> class scores [batch, classes].
inline Tensor decode(TraceTensor const& traces, DecodeMethod method, double readout_scale)
{
	if (traces.values.size() == 0) {
		throw std::invalid_argument("decode: empty traces.");
	}
	auto const batch = traces.batch();
	auto const steps = traces.steps();
	auto const classes = traces.neurons();
	Tensor scores({batch, classes});
	for (std::size_t b = 0; b < batch; ++b) {
		for (std::size_t k = 0; k < classes; ++k) {
			double value = traces.values(b, steps - 1, k);
			if (method == DecodeMethod::max_over_time) {
				value = traces.values(b, 0, k);
				for (std::size_t t = 1; t < steps; ++t) {
					value = std::max(value, traces.values(b, t, k));
				}
			}
			scores(b, k) = readout_scale * value;
		}
	}
	return scores;
}

// Ties break to the lowest class index.
inline std::size_t argmax_class(Tensor const& scores, std::size_t b)
{
	std::size_t best = 0;
	for (std::size_t k = 1; k < scores.dim(1); ++k) {
		if (scores(b, k) > scores(b, best)) {
			best = k;
		}
	}
	return best;
}

// Affine map taking recorded hardware traces into reference-unit dynamics:
// hw = factor * ref + offset.
struct TraceScale
{
	double factor = 1.0;
	double offset = 0.0;

	double to_reference(double hw) const { return (hw - offset) / factor; }
};

// Least-squares affine fit of a recorded trace against the reference trace.
inline TraceScale fit_trace_scale(
    std::vector<double> const& hw, std::vector<double> const& reference)
{
	if (hw.size() != reference.size() || hw.size() < 2) {
		throw std::invalid_argument("fit_trace_scale: need >= 2 paired samples.");
	}
	auto const n = static_cast<double>(hw.size());
	double mean_ref = 0.0, mean_hw = 0.0;
	for (std::size_t i = 0; i < hw.size(); ++i) {
		mean_ref += reference[i];
		mean_hw += hw[i];
	}
	mean_ref /= n;
	mean_hw /= n;
	double var = 0.0, cov = 0.0;
	for (std::size_t i = 0; i < hw.size(); ++i) {
		var += (reference[i] - mean_ref) * (reference[i] - mean_ref);
		cov += (reference[i] - mean_ref) * (hw[i] - mean_hw);
	}
	if (!(var > 1e-30)) {
		throw std::invalid_argument("fit_trace_scale: reference trace is constant.");
	}
	TraceScale scale;
	scale.factor = cov / var;
	scale.offset = mean_hw - scale.factor * mean_ref;
	return scale;
}

struct AdamParams
{
	double beta1 = 0.9;
	double beta2 = 0.999;
	double eps = 1e-8;
};

struct RegularizerConstants
{
	double burst = 0.0;   // squared per-step population spike count
	double theta_h = 0.0; // squared per-neuron spike count (rate), decays with gamma
	double theta_o = 0.0; // squared hinge on |w| above the hardware range
	double v_o = 0.0;     // mean squared readout membrane
	double gamma = 1.0;   // per-epoch decay of the rate term
	double w_max = 1.0;   // hardware weight range in model units

	void check() const
	{
		if (burst < 0.0 || theta_h < 0.0 || theta_o < 0.0 || v_o < 0.0) {
			throw std::invalid_argument("RegularizerConstants: constants must be >= 0.");
		}
		if (!(gamma > 0.0) || gamma > 1.0) {
			throw std::invalid_argument("RegularizerConstants: gamma in (0, 1] violated.");
		}
	}
};

enum class ForwardMode
{
	reference,
	partitioned,
	mixed
};

struct TrainConfig
{
	std::size_t batch_size = 100;
	double learning_rate = 2e-3;
	std::size_t epochs = 100;
	double lr_decay = 1.0;                   // exponential per-epoch factor
	std::vector<std::size_t> lr_milestones;  // halve after these epochs
	double dropout_p = 0.0;
	double superspike_alpha = 50.0;
	double readout_scale = 1.0;
	DecodeMethod decode = DecodeMethod::max_over_time;
	AdamParams adam;
	std::uint64_t seed = 0;
	ForwardMode mode = ForwardMode::reference;
	std::size_t workers = 1;
	std::optional<std::size_t> patience; // early stopping, in non-improving epochs

	void check() const
	{
		if (batch_size < 1 || !(learning_rate > 0.0) || !(superspike_alpha > 0.0)) {
			throw std::invalid_argument("TrainConfig: rates must be positive.");
		}
		if (dropout_p < 0.0 || dropout_p >= 1.0) {
			throw std::invalid_argument("TrainConfig: dropout_p in [0, 1) violated.");
		}
	}

	double lr_at_epoch(std::size_t epoch) const
	{
		double lr = learning_rate * std::pow(lr_decay, static_cast<double>(epoch));
		for (auto const m : lr_milestones) {
			if (epoch >= m) {
				lr *= 0.5;
			}
		}
		return lr;
	}
};

// A model ready for training: the graph owns the weights; the plan (when
// present) drives partitioned and mixed forward passes.
struct Model
{
	NetworkGraph graph;
	std::optional<ExecutionGraph> plan;

	// The unique sink LI population read out for classification.
	PopulationId readout() const
	{
		std::vector<char> has_efferent(graph.populations().size(), 0);
		for (auto const& proj : graph.projections()) {
			if (!proj.pre.is_input()) {
				has_efferent[proj.pre.index] = 1;
			}
		}
		std::optional<PopulationId> sink;
		for (PopulationId p = 0; p < graph.populations().size(); ++p) {
			if (!has_efferent[p] && graph.population(p).params.kind == NeuronKind::li) {
				if (sink) {
					throw std::runtime_error("Model: multiple readout candidates.");
				}
				sink = p;
			}
		}
		if (!sink) {
			throw std::runtime_error("Model: no sink LI population to read out.");
		}
		return *sink;
	}
};

// Everything the gradient computation substitutes into the unrolled graph:
// recorded spikes and membranes per population, the dropout masks that gated
// spike delivery, and the binned input events.
struct ForwardRecord
{
	std::vector<Tensor> spikes; // per population [batch, steps, size]
	std::vector<Tensor> traces; // per population [batch, steps, size]
	std::vector<Tensor> masks;  // per population [batch, size]; empty when unused
	// [input id][batch entry][step] -> spiking input indices, ascending
	std::vector<std::vector<std::vector<std::vector<std::uint32_t>>>> input_bins;
	double dt_us = 1.0;
	std::size_t steps = 0;
	std::size_t batch = 0;
};

namespace detail {

inline std::vector<std::vector<std::vector<std::uint32_t>>> bin_input_batch(
    std::vector<EventStream> const& batch, double dt_us, std::size_t steps)
{
	std::vector<std::vector<std::vector<std::uint32_t>>> out;
	out.reserve(batch.size());
	for (auto const& stream : batch) {
		out.push_back(bin_events(stream, dt_us, steps));
	}
	return out;
}

} // namespace detail

struct ForwardOptions
{
	EmulatorConfig config;
	ForwardMode mode = ForwardMode::reference;
	std::size_t workers = 1;
	std::vector<Tensor> const* delivery_masks = nullptr;
	TraceScale trace_scale; // hardware -> reference units (mixed mode)
};

// Runs the forward pass and collects the observables the backward pass needs.
// Reference mode integrates the whole network on the grid; partitioned and
// mixed modes delegate to the orchestrator (mixed keeps hardware fidelity on
// executions flagged `emulated` and maps their traces into reference units).
inline ForwardRecord forward(
    Model const& model,
    std::vector<std::vector<EventStream>> const& inputs, // [input id][batch entry]
    ForwardOptions const& options)
{
	auto const& graph = model.graph;
	options.config.check();
	auto const steps = options.config.steps();
	std::size_t const batch = inputs.empty() ? 0 : inputs.front().size();

	ForwardRecord record;
	record.dt_us = options.config.dt_us;
	record.steps = steps;
	record.batch = batch;
	if (options.delivery_masks) {
		record.masks = *options.delivery_masks;
	}
	record.input_bins.reserve(inputs.size());
	for (auto const& per_input : inputs) {
		record.input_bins.push_back(
		    detail::bin_input_batch(per_input, options.config.dt_us, steps));
	}

	if (options.mode == ForwardMode::reference) {
		auto cfg = options.config;
		cfg.hardware_fidelity = false;
		auto const net = compile_network(graph);
		record.spikes.resize(graph.populations().size());
		record.traces.resize(graph.populations().size());
		for (PopulationId p = 0; p < graph.populations().size(); ++p) {
			record.spikes[p] = Tensor({batch, steps, graph.population(p).size});
			record.traces[p] = Tensor({batch, steps, graph.population(p).size});
		}
		std::vector<std::vector<double>> mask_rows(graph.populations().size());
		for (std::size_t b = 0; b < batch; ++b) {
			EventStream merged;
			merged.duration_us = cfg.duration_us;
			for (InputId i = 0; i < inputs.size(); ++i) {
				auto const offset = net.blocks[i].channel_begin;
				for (auto const& ev : inputs[i][b].events) {
					merged.events.push_back(
					    {ev.time_us, static_cast<std::uint32_t>(offset + ev.id)});
				}
			}
			merged.sort();
			std::vector<std::vector<double> const*> masks;
			if (!record.masks.empty()) {
				for (PopulationId p = 0; p < graph.populations().size(); ++p) {
					auto const size = graph.population(p).size;
					mask_rows[p].assign(
					    record.masks[p].data() + b * size,
					    record.masks[p].data() + (b + 1) * size);
				}
				for (auto const& row : mask_rows) {
					masks.push_back(&row);
				}
			}
			auto entry = run_network_entry(net, merged, cfg, masks);
			for (PopulationId p = 0; p < graph.populations().size(); ++p) {
				auto const size = graph.population(p).size;
				for (std::size_t t = 0; t < steps; ++t) {
					for (std::size_t n = 0; n < size; ++n) {
						record.spikes[p](b, t, n) =
						    static_cast<double>(entry.groups[p].spikes[t * size + n]);
						record.traces[p](b, t, n) = entry.groups[p].traces[t * size + n];
					}
				}
			}
		}
		return record;
	}

	if (!model.plan) {
		throw std::invalid_argument("forward: partitioned mode requires a plan.");
	}
	OrchestratorOptions orch;
	orch.config = options.config;
	orch.config.hardware_fidelity =
	    options.mode == ForwardMode::mixed && options.config.hardware_fidelity;
	orch.workers = options.workers;
	orch.delivery_masks = options.delivery_masks;
	auto results = orchestrate(graph, *model.plan, inputs, orch);
	record.spikes = std::move(results.spikes_by_population);
	record.traces.resize(results.traces_by_population.size());
	for (PopulationId p = 0; p < record.traces.size(); ++p) {
		record.traces[p] = std::move(results.traces_by_population[p].values);
	}
	if (options.mode == ForwardMode::mixed && orch.config.hardware_fidelity) {
		// Map hardware-recorded membranes into reference units so the
		// surrogate sees idealized dynamics.
		for (auto const& exec : model.plan->executions) {
			if (exec.backend != Backend::emulated) {
				continue;
			}
			for (auto const& slice : exec.neurons) {
				auto& tr = record.traces[slice.population];
				for (std::size_t b = 0; b < batch; ++b) {
					for (std::size_t t = 0; t < steps; ++t) {
						for (std::size_t n = slice.begin; n < slice.end; ++n) {
							tr(b, t, n) = options.trace_scale.to_reference(tr(b, t, n));
						}
					}
				}
			}
		}
	}
	return record;
}

// Refractory clamp flags reconstructed from the spike record: after a spike,
// round(refractory / dt) steps are clamped and cannot spike.
inline Tensor reconstruct_clamped(Tensor const& spikes, std::int64_t refractory_steps)
{
	Tensor clamped(spikes.shape());
	if (refractory_steps <= 0) {
		return clamped;
	}
	auto const batch = spikes.dim(0);
	auto const steps = spikes.dim(1);
	auto const size = spikes.dim(2);
	for (std::size_t b = 0; b < batch; ++b) {
		for (std::size_t n = 0; n < size; ++n) {
			std::int64_t counter = 0;
			for (std::size_t t = 0; t < steps; ++t) {
				if (counter > 0) {
					clamped(b, t, n) = 1.0;
					--counter;
				} else if (spikes(b, t, n) != 0.0) {
					counter = refractory_steps;
				}
			}
		}
	}
	return clamped;
}

struct Gradients
{
	std::vector<Tensor> by_projection; // same shapes as the projection weights
};

struct BatchEvaluation
{
	double loss = 0.0;
	double cross_entropy = 0.0;
	double regularization = 0.0;
	std::size_t correct = 0;
	Tensor scores;
	Gradients grads;
};

// Regularization value on recorded observables: rate and burst penalties on
// hidden spikes (the rate term decays with gamma over epochs), a mean-square
// penalty on readout membranes and a squared hinge on weights beyond the
// hardware range.
inline double regularization_loss(
    std::vector<Tensor const*> const& hidden_spikes, // [batch, steps, n] each
    Tensor const& readout_traces,                    // [batch, steps, classes]
    std::vector<Tensor const*> const& weights,
    RegularizerConstants const& c,
    std::size_t epoch)
{
	c.check();
	double const gamma_e = std::pow(c.gamma, static_cast<double>(epoch));
	double loss = 0.0;
	for (auto const* s : hidden_spikes) {
		auto const batch = s->dim(0);
		auto const steps = s->dim(1);
		auto const n = s->dim(2);
		double rate = 0.0;
		for (std::size_t b = 0; b < batch; ++b) {
			for (std::size_t i = 0; i < n; ++i) {
				double count = 0.0;
				for (std::size_t t = 0; t < steps; ++t) {
					count += (*s)(b, t, i);
				}
				rate += count * count;
			}
		}
		loss += gamma_e * c.theta_h * rate / static_cast<double>(batch * n);
		double burst = 0.0;
		for (std::size_t b = 0; b < batch; ++b) {
			for (std::size_t t = 0; t < steps; ++t) {
				double count = 0.0;
				for (std::size_t i = 0; i < n; ++i) {
					count += (*s)(b, t, i);
				}
				burst += count * count;
			}
		}
		loss += c.burst * burst / static_cast<double>(batch * steps);
	}
	if (readout_traces.size() > 0) {
		double sq = 0.0;
		for (std::size_t i = 0; i < readout_traces.size(); ++i) {
			sq += readout_traces[i] * readout_traces[i];
		}
		loss += c.v_o * sq / static_cast<double>(readout_traces.size());
	}
	std::size_t total_weights = 0;
	double hinge = 0.0;
	for (auto const* w : weights) {
		total_weights += w->size();
		for (std::size_t i = 0; i < w->size(); ++i) {
			double const excess = std::abs((*w)[i]) - c.w_max;
			if (excess > 0.0) {
				hinge += excess * excess;
			}
		}
	}
	if (total_weights > 0) {
		loss += c.theta_o * hinge / static_cast<double>(total_weights);
	}
	return loss;
}

// Tap column of a receptive-field weight row for a given (post, source) pair.
inline std::size_t tap_of(Connectivity const& c, std::size_t post, std::size_t source)
{
	for (std::size_t tap = 0; tap < c.taps_per_post(); ++tap) {
		if (auto const src = c.tap_source(post, tap); src && *src == source) {
			return tap;
		}
	}
	throw std::logic_error("tap_of: source does not feed this post neuron.");
}

// Backpropagation through time over the recorded observables. The unrolled
// graph per LIF neuron and step is
//   i_t = a_syn i_{t-1} + sum w s_in,t
//   v_t = v_leak + (u_{t-1} - v_leak) a_mem + i_t dt
//   s_t = H(v_t - theta)          (surrogate derivative in the backward pass)
//   u_t = v_t (1 - s_t) + v_reset s_t
// with refractory-clamped steps treated as constants. Recorded spikes and
// membranes substitute the forward activations, so the same code serves
// reference, partitioned and hardware-in-the-loop records.
inline BatchEvaluation backward(
    Model const& model,
    ForwardRecord const& record,
    std::vector<int> const& labels,
    TrainConfig const& cfg,
    RegularizerConstants const& reg,
    std::size_t epoch,
    bool compute_grads = true)
{
	auto const& graph = model.graph;
	cfg.check();
	reg.check();
	auto const readout = model.readout();
	auto const batch = record.batch;
	auto const steps = record.steps;
	if (labels.size() != batch) {
		throw std::invalid_argument("backward: label count does not match batch.");
	}
	auto const structure = compile_network(graph);
	for (auto const& proj : structure.projections) {
		if (proj.back_edge) {
			throw std::invalid_argument(
			    "backward: recurrent networks are not supported by the trainer.");
		}
	}

	BatchEvaluation eval;
	eval.scores = decode(
	    TraceTensor{record.traces[readout], record.dt_us}, cfg.decode, cfg.readout_scale);
	auto const classes = eval.scores.dim(1);

	// Softmax cross-entropy and the score adjoints.
	Tensor dscores({batch, classes});
	for (std::size_t b = 0; b < batch; ++b) {
		double max_score = eval.scores(b, 0);
		for (std::size_t k = 1; k < classes; ++k) {
			max_score = std::max(max_score, eval.scores(b, k));
		}
		double z = 0.0;
		for (std::size_t k = 0; k < classes; ++k) {
			z += std::exp(eval.scores(b, k) - max_score);
		}
		auto const label = static_cast<std::size_t>(labels[b]);
		if (label >= classes) {
			throw std::invalid_argument("backward: label out of range.");
		}
		eval.cross_entropy +=
		    -(eval.scores(b, label) - max_score - std::log(z)) / static_cast<double>(batch);
		for (std::size_t k = 0; k < classes; ++k) {
			double const p = std::exp(eval.scores(b, k) - max_score) / z;
			dscores(b, k) =
			    (p - (k == label ? 1.0 : 0.0)) / static_cast<double>(batch);
		}
		if (argmax_class(eval.scores, b) == label) {
			++eval.correct;
		}
	}

	// Regularization value (shares the formulas of regularization_loss).
	std::vector<Tensor const*> hidden;
	for (PopulationId p = 0; p < graph.populations().size(); ++p) {
		if (p != readout && graph.population(p).params.kind == NeuronKind::lif) {
			hidden.push_back(&record.spikes[p]);
		}
	}
	std::vector<Tensor const*> weight_refs;
	for (auto const& proj : graph.projections()) {
		weight_refs.push_back(&proj.weights);
	}
	eval.regularization =
	    regularization_loss(hidden, record.traces[readout], weight_refs, reg, epoch);
	eval.loss = eval.cross_entropy + eval.regularization;
	if (!compute_grads) {
		return eval;
	}

	eval.grads.by_projection.clear();
	for (auto const& proj : graph.projections()) {
		eval.grads.by_projection.emplace_back(proj.weights.shape());
	}

	// Weight-range hinge gradient.
	std::size_t total_weights = 0;
	for (auto const* w : weight_refs) {
		total_weights += w->size();
	}
	if (reg.theta_o > 0.0 && total_weights > 0) {
		for (ProjectionId j = 0; j < graph.projections().size(); ++j) {
			auto const& w = graph.projection(j).weights;
			auto& gw = eval.grads.by_projection[j];
			for (std::size_t i = 0; i < w.size(); ++i) {
				double const excess = std::abs(w[i]) - reg.w_max;
				if (excess > 0.0) {
					gw[i] += reg.theta_o * 2.0 * excess * (w[i] > 0.0 ? 1.0 : -1.0) /
					         static_cast<double>(total_weights);
				}
			}
		}
	}

	double const gamma_e = std::pow(reg.gamma, static_cast<double>(epoch));

	// Per-population adjoint seeds.
	std::vector<Tensor> spike_seed(graph.populations().size());
	std::vector<Tensor> trace_seed(graph.populations().size());
	for (PopulationId p = 0; p < graph.populations().size(); ++p) {
		auto const size = graph.population(p).size;
		spike_seed[p] = Tensor({batch, steps, size});
		trace_seed[p] = Tensor({batch, steps, size});
		bool const is_hidden =
		    p != readout && graph.population(p).params.kind == NeuronKind::lif;
		if (is_hidden && (reg.theta_h > 0.0 || reg.burst > 0.0)) {
			auto const& s = record.spikes[p];
			for (std::size_t b = 0; b < batch; ++b) {
				std::vector<double> neuron_count(size, 0.0);
				std::vector<double> step_count(steps, 0.0);
				for (std::size_t t = 0; t < steps; ++t) {
					for (std::size_t n = 0; n < size; ++n) {
						neuron_count[n] += s(b, t, n);
						step_count[t] += s(b, t, n);
					}
				}
				for (std::size_t t = 0; t < steps; ++t) {
					for (std::size_t n = 0; n < size; ++n) {
						spike_seed[p](b, t, n) +=
						    gamma_e * reg.theta_h * 2.0 * neuron_count[n] /
						        static_cast<double>(batch * size) +
						    reg.burst * 2.0 * step_count[t] /
						        static_cast<double>(batch * steps);
					}
				}
			}
		}
	}
	{
		// Decode and readout-membrane seeds.
		auto const& traces = record.traces[readout];
		auto const size = graph.population(readout).size;
		for (std::size_t b = 0; b < batch; ++b) {
			for (std::size_t k = 0; k < size; ++k) {
				std::size_t t_star = steps - 1;
				if (cfg.decode == DecodeMethod::max_over_time) {
					t_star = 0;
					for (std::size_t t = 1; t < steps; ++t) {
						if (traces(b, t, k) > traces(b, t_star, k)) {
							t_star = t;
						}
					}
				}
				trace_seed[readout](b, t_star, k) += cfg.readout_scale * dscores(b, k);
			}
		}
		if (reg.v_o > 0.0) {
			for (std::size_t i = 0; i < traces.size(); ++i) {
				trace_seed[readout][i] +=
				    reg.v_o * 2.0 * traces[i] / static_cast<double>(traces.size());
			}
		}
	}

	// Clamp masks derived from the spike record.
	std::vector<Tensor> clamped(graph.populations().size());
	std::vector<std::int64_t> refractory_steps(graph.populations().size(), 0);
	for (PopulationId p = 0; p < graph.populations().size(); ++p) {
		refractory_steps[p] =
		    std::llround(graph.population(p).params.refractory_us / record.dt_us);
		clamped[p] = reconstruct_clamped(record.spikes[p], refractory_steps[p]);
	}

	// Reverse sweep, groups in reverse topological order. spike_seed doubles
	// as the running ds accumulator (downstream contributions are added as
	// their consumers are processed first).
	std::vector<Tensor> gi_store(graph.populations().size());
	for (auto it = structure.update_order.rbegin(); it != structure.update_order.rend();
	     ++it) {
		auto const g = *it;
		auto const& pop = graph.population(g);
		auto const size = pop.size;
		auto const& p = pop.params;
		double const a_mem = std::exp(-record.dt_us / p.tau_mem_us);
		double const a_syn = std::exp(-record.dt_us / p.tau_syn_us);
		gi_store[g] = Tensor({batch, steps, size});
		auto const& v = record.traces[g];
		auto const& s = record.spikes[g];
		auto const& cl = clamped[g];
		for (std::size_t b = 0; b < batch; ++b) {
			std::vector<double> gi_next(size, 0.0);
			std::vector<double> gu(size, 0.0);
			for (std::size_t t = steps; t-- > 0;) {
				for (std::size_t n = 0; n < size; ++n) {
					double gvt = 0.0;
					if (p.kind == NeuronKind::li) {
						gvt = trace_seed[g](b, t, n) + gu[n];
					} else if (cl(b, t, n) == 0.0) {
						double const spiked = s(b, t, n);
						double const gs_total =
						    spike_seed[g](b, t, n) + gu[n] * (p.v_reset - v(b, t, n));
						gvt = trace_seed[g](b, t, n) + gu[n] * (1.0 - spiked) +
						      gs_total *
						          surrogate_derivative(
						              v(b, t, n), p.v_thresh, cfg.superspike_alpha);
					}
					double const git = gvt * record.dt_us + a_syn * gi_next[n];
					gi_store[g](b, t, n) = git;
					gi_next[n] = git;
					gu[n] = gvt * a_mem;
				}
			}
		}

		// Distribute the current adjoints onto afferent weights and upstream
		// spike adjoints.
		for (auto const pi : structure.afferents[g]) {
			auto const& cproj = structure.projections[pi];
			auto const j = cproj.original;
			auto& gw = eval.grads.by_projection[j];
			auto const& proj = graph.projection(j);
			bool const dense = proj.connectivity.kind == Connectivity::Kind::dense;
			if (cproj.pre_group < 0) {
				// Input-fed: weight gradients only where the input spiked.
				auto const input_id = cproj.block;
				for (std::size_t b = 0; b < batch; ++b) {
					for (std::size_t t = 0; t < steps; ++t) {
						for (auto const pre : record.input_bins[input_id][b][t]) {
							for (auto const& [post, w] : cproj.fanout[pre]) {
								(void) w;
								if (dense) {
									gw(pre, post) += gi_store[g](b, t, post);
								} else {
									gw(post, tap_of(proj.connectivity, post, pre)) +=
									    gi_store[g](b, t, post);
								}
							}
						}
					}
				}
			} else {
				auto const src = static_cast<PopulationId>(cproj.pre_group);
				auto const src_size = graph.population(src).size;
				auto const* mask =
				    record.masks.empty() ? nullptr : &record.masks[src];
				auto const& src_spikes = record.spikes[src];
				for (std::size_t b = 0; b < batch; ++b) {
					for (std::size_t t = 0; t < steps; ++t) {
						for (std::size_t pre = 0; pre < src_size; ++pre) {
							double const m = mask ? (*mask)(b, pre) : 1.0;
							if (m == 0.0) {
								continue;
							}
							bool const spiked = src_spikes(b, t, pre) != 0.0;
							double gs_up = 0.0;
							for (auto const& [post, w] : cproj.fanout[pre]) {
								double const gpost = gi_store[g](b, t, post);
								gs_up += w * gpost;
								if (spiked) {
									if (dense) {
										gw(pre, post) += gpost;
									} else {
										gw(post,
										   tap_of(proj.connectivity, post, pre)) +=
										    gpost;
									}
								}
							}
							spike_seed[src](b, t, pre) += m * gs_up;
						}
					}
				}
			}
		}
	}
	return eval;
}

// ---------------------------------------------------------------------------
// Optimizer and training loop

struct AdamState
{
	std::vector<Tensor> m;
	std::vector<Tensor> v;
	std::size_t t = 0;
};

inline void adam_step(
    NetworkGraph& graph,
    Gradients const& grads,
    AdamState& state,
    AdamParams const& params,
    double lr)
{
	if (state.m.empty()) {
		for (auto const& proj : graph.projections()) {
			state.m.emplace_back(proj.weights.shape());
			state.v.emplace_back(proj.weights.shape());
		}
	}
	++state.t;
	double const bias1 = 1.0 - std::pow(params.beta1, static_cast<double>(state.t));
	double const bias2 = 1.0 - std::pow(params.beta2, static_cast<double>(state.t));
	for (ProjectionId j = 0; j < graph.projections().size(); ++j) {
		auto& w = graph.projection(j).weights;
		auto const& g = grads.by_projection[j];
		auto& m = state.m[j];
		auto& v = state.v[j];
		for (std::size_t i = 0; i < w.size(); ++i) {
			m[i] = params.beta1 * m[i] + (1.0 - params.beta1) * g[i];
			v[i] = params.beta2 * v[i] + (1.0 - params.beta2) * g[i] * g[i];
			w[i] -= lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + params.eps);
		}
	}
}

// Sample source for training: produces the input streams of one sample on
// demand (augmentation and encoding live behind this hook).
struct SampleProvider
{
	std::size_t size = 0;
	std::vector<int> labels;
	std::function<std::vector<EventStream>(std::size_t index, std::uint64_t seed, bool train)>
	    make;
};

struct EpochMetrics
{
	std::size_t epoch = 0;
	double train_loss = 0.0;
	double train_accuracy = 0.0;
	double val_loss = 0.0;
	double val_accuracy = 0.0;
	double learning_rate = 0.0;
};

struct TrainResult
{
	std::vector<EpochMetrics> history;
	std::vector<Tensor> best_weights;
	double best_val_accuracy = 0.0;
	std::size_t best_epoch = 0;
	bool diverged = false;
};

inline std::vector<Tensor> snapshot_weights(NetworkGraph const& graph)
{
	std::vector<Tensor> out;
	for (auto const& proj : graph.projections()) {
		out.push_back(proj.weights);
	}
	return out;
}

inline void restore_weights(NetworkGraph& graph, std::vector<Tensor> const& weights)
{
	for (ProjectionId j = 0; j < graph.projections().size(); ++j) {
		graph.projection(j).weights = weights[j];
	}
}

// Dropout masks for all hidden LIF populations: per entry and neuron, keep
// with probability 1 - p. Surviving spikes are not rescaled (spikes are
// binary events).
inline std::vector<Tensor> sample_dropout_masks(
    NetworkGraph const& graph,
    PopulationId readout,
    std::size_t batch,
    double dropout_p,
    std::uint64_t seed)
{
	std::vector<Tensor> masks;
	std::mt19937_64 rng(seed);
	std::bernoulli_distribution keep(1.0 - dropout_p);
	for (PopulationId p = 0; p < graph.populations().size(); ++p) {
		auto const size = graph.population(p).size;
		Tensor mask({batch, size});
		bool const is_hidden =
		    p != readout && graph.population(p).params.kind == NeuronKind::lif;
		for (std::size_t i = 0; i < mask.size(); ++i) {
			mask[i] = (!is_hidden || dropout_p == 0.0 || keep(rng)) ? 1.0 : 0.0;
		}
		masks.push_back(std::move(mask));
	}
	return masks;
}

inline BatchEvaluation evaluate_batch(
    Model const& model,
    std::vector<std::vector<EventStream>> const& inputs,
    std::vector<int> const& labels,
    TrainConfig const& cfg,
    RegularizerConstants const& reg,
    EmulatorConfig const& emulator,
    std::size_t epoch,
    bool compute_grads,
    std::vector<Tensor> const* masks = nullptr)
{
	ForwardOptions options;
	options.config = emulator;
	options.mode = cfg.mode;
	options.workers = cfg.workers;
	options.delivery_masks = masks;
	auto const record = forward(model, inputs, options);
	return backward(model, record, labels, cfg, reg, epoch, compute_grads);
}

// Full evaluation over a provider (no augmentation, no dropout).
inline std::pair<double, double> evaluate(
    Model const& model,
    SampleProvider const& provider,
    TrainConfig const& cfg,
    RegularizerConstants const& reg,
    EmulatorConfig const& emulator)
{
	double loss = 0.0;
	std::size_t correct = 0;
	std::size_t const n_inputs = model.graph.inputs().size();
	std::size_t done = 0;
	while (done < provider.size) {
		auto const take = std::min(cfg.batch_size, provider.size - done);
		std::vector<std::vector<EventStream>> inputs(n_inputs);
		std::vector<int> labels;
		for (std::size_t k = 0; k < take; ++k) {
			auto streams = provider.make(done + k, 0, false);
			for (std::size_t i = 0; i < n_inputs; ++i) {
				inputs[i].push_back(std::move(streams[i]));
			}
			labels.push_back(provider.labels[done + k]);
		}
		auto const eval =
		    evaluate_batch(model, inputs, labels, cfg, reg, emulator, 0, false);
		loss += eval.loss * static_cast<double>(take);
		correct += eval.correct;
		done += take;
	}
	return {loss / static_cast<double>(provider.size),
	        static_cast<double>(correct) / static_cast<double>(provider.size)};
}

// Adam on cross-entropy plus regularization with per-epoch learning-rate
// schedule, optional early stopping and best-on-validation checkpointing.
// Divergence (non-finite loss) aborts and restores the best checkpoint.
inline TrainResult train_loop(
    Model& model,
    SampleProvider const& train_set,
    SampleProvider const& val_set,
    TrainConfig const& cfg,
    RegularizerConstants const& reg,
    EmulatorConfig const& emulator,
    std::function<void(EpochMetrics const&)> const& on_epoch = {})
{
	cfg.check();
	reg.check();
	auto const readout = model.readout();
	std::size_t const n_inputs = model.graph.inputs().size();
	TrainResult result;
	result.best_weights = snapshot_weights(model.graph);
	result.best_val_accuracy = -1.0;
	AdamState adam;

	std::vector<std::size_t> order(train_set.size);
	for (std::size_t i = 0; i < order.size(); ++i) {
		order[i] = i;
	}

	for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
		double const lr = cfg.lr_at_epoch(epoch);
		std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, "shuffle", epoch));
		std::shuffle(order.begin(), order.end(), shuffle_rng);

		double train_loss = 0.0;
		std::size_t train_correct = 0;
		std::size_t done = 0;
		std::size_t batch_index = 0;
		bool aborted = false;
		while (done < train_set.size) {
			auto const take = std::min(cfg.batch_size, train_set.size - done);
			std::vector<std::vector<EventStream>> inputs(n_inputs);
			std::vector<int> labels;
			for (std::size_t k = 0; k < take; ++k) {
				auto const idx = order[done + k];
				auto streams = train_set.make(
				    idx, derive_seed(cfg.seed, "augment", epoch * 1000003 + idx), true);
				for (std::size_t i = 0; i < n_inputs; ++i) {
					inputs[i].push_back(std::move(streams[i]));
				}
				labels.push_back(train_set.labels[idx]);
			}
			auto const masks = sample_dropout_masks(
			    model.graph, readout, take, cfg.dropout_p,
			    derive_seed(cfg.seed, "dropout", epoch * 1000003 + batch_index));
			auto const eval = evaluate_batch(
			    model, inputs, labels, cfg, reg, emulator, epoch, true, &masks);
			if (!std::isfinite(eval.loss)) {
				result.diverged = true;
				aborted = true;
				break;
			}
			train_loss += eval.loss * static_cast<double>(take);
			train_correct += eval.correct;
			adam_step(model.graph, eval.grads, adam, cfg.adam, lr);
			done += take;
			++batch_index;
		}
		if (aborted) {
			break;
		}

		EpochMetrics metrics;
		metrics.epoch = epoch;
		metrics.learning_rate = lr;
		metrics.train_loss = train_loss / static_cast<double>(train_set.size);
		metrics.train_accuracy =
		    static_cast<double>(train_correct) / static_cast<double>(train_set.size);
		if (val_set.size > 0) {
			auto const [vl, va] = evaluate(model, val_set, cfg, reg, emulator);
			metrics.val_loss = vl;
			metrics.val_accuracy = va;
		} else {
			metrics.val_loss = metrics.train_loss;
			metrics.val_accuracy = metrics.train_accuracy;
		}
		result.history.push_back(metrics);
		if (on_epoch) {
			on_epoch(metrics);
		}

		if (metrics.val_accuracy > result.best_val_accuracy) {
			result.best_val_accuracy = metrics.val_accuracy;
			result.best_weights = snapshot_weights(model.graph);
			result.best_epoch = epoch;
		} else if (cfg.patience && epoch - result.best_epoch > *cfg.patience) {
			break;
		}
	}
	if (result.diverged) {
		restore_weights(model.graph, result.best_weights);
	}
	return result;
}

} // namespace spikepart
