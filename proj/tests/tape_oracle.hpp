#pragma once

// Test-only scalar reverse-mode autodiff. Rebuilds the trainer's unrolled
// computation node by node and backpropagates along the tape, with a spike
// node whose backward is the surrogate derivative. Independent of the
// analytic BPTT implementation it checks.

#include <cmath>
#include <cstddef>
#include <vector>

#include "spikepart/trainer.hpp"

namespace spikepart::testing::tape {

enum class Op
{
	leaf,
	add,
	sub,
	mul,
	scale,     // a * aux
	offset,    // a + aux
	exp_op,
	log_op,
	maximum,   // max(a, b); gradient to b only when strictly larger
	spike      // step(a - theta) with surrogate backward; aux = theta, aux2 = alpha
};

struct Node
{
	Op op = Op::leaf;
	double value = 0.0;
	double grad = 0.0;
	int a = -1;
	int b = -1;
	double aux = 0.0;
	double aux2 = 0.0;
};

class Tape
{
public:
	int leaf(double v)
	{
		nodes.push_back({Op::leaf, v});
		return last();
	}
	int add(int x, int y)
	{
		nodes.push_back({Op::add, nodes[x].value + nodes[y].value, 0.0, x, y});
		return last();
	}
	int sub(int x, int y)
	{
		nodes.push_back({Op::sub, nodes[x].value - nodes[y].value, 0.0, x, y});
		return last();
	}
	int mul(int x, int y)
	{
		nodes.push_back({Op::mul, nodes[x].value * nodes[y].value, 0.0, x, y});
		return last();
	}
	int scale(int x, double c)
	{
		nodes.push_back({Op::scale, nodes[x].value * c, 0.0, x, -1, c});
		return last();
	}
	int offset(int x, double c)
	{
		nodes.push_back({Op::offset, nodes[x].value + c, 0.0, x, -1, c});
		return last();
	}
	int exp_of(int x)
	{
		nodes.push_back({Op::exp_op, std::exp(nodes[x].value), 0.0, x});
		return last();
	}
	int log_of(int x)
	{
		nodes.push_back({Op::log_op, std::log(nodes[x].value), 0.0, x});
		return last();
	}
	int maximum(int x, int y)
	{
		nodes.push_back(
		    {Op::maximum, nodes[y].value > nodes[x].value ? nodes[y].value : nodes[x].value,
		     0.0, x, y});
		return last();
	}
	int spike(int v, double theta, double alpha)
	{
		nodes.push_back(
		    {Op::spike, nodes[v].value >= theta ? 1.0 : 0.0, 0.0, v, -1, theta, alpha});
		return last();
	}

	double value(int x) const { return nodes[x].value; }
	double grad(int x) const { return nodes[x].grad; }

	void backward(int loss)
	{
		for (auto& n : nodes) {
			n.grad = 0.0;
		}
		nodes[loss].grad = 1.0;
		for (int i = static_cast<int>(nodes.size()) - 1; i >= 0; --i) {
			auto const& n = nodes[i];
			if (n.grad == 0.0) {
				continue;
			}
			switch (n.op) {
				case Op::leaf:
					break;
				case Op::add:
					nodes[n.a].grad += n.grad;
					nodes[n.b].grad += n.grad;
					break;
				case Op::sub:
					nodes[n.a].grad += n.grad;
					nodes[n.b].grad -= n.grad;
					break;
				case Op::mul:
					nodes[n.a].grad += n.grad * nodes[n.b].value;
					nodes[n.b].grad += n.grad * nodes[n.a].value;
					break;
				case Op::scale:
					nodes[n.a].grad += n.grad * n.aux;
					break;
				case Op::offset:
					nodes[n.a].grad += n.grad;
					break;
				case Op::exp_op:
					nodes[n.a].grad += n.grad * n.value;
					break;
				case Op::log_op:
					nodes[n.a].grad += n.grad / nodes[n.a].value;
					break;
				case Op::maximum:
					if (nodes[n.b].value > nodes[n.a].value) {
						nodes[n.b].grad += n.grad;
					} else {
						nodes[n.a].grad += n.grad;
					}
					break;
				case Op::spike:
					nodes[n.a].grad +=
					    n.grad * surrogate_derivative(nodes[n.a].value, n.aux, n.aux2);
					break;
			}
		}
	}

	std::size_t size() const { return nodes.size(); }

private:
	int last() const { return static_cast<int>(nodes.size()) - 1; }
	std::vector<Node> nodes;
};

// Naive unrolled forward + loss for a feed-forward chain, mirroring the
// trainer's graph definition. Returns per-projection weight gradients.
struct OracleResult
{
	double loss = 0.0;
	std::vector<Tensor> grads;
};

inline OracleResult run_oracle(
    Model const& model,
    std::vector<std::vector<EventStream>> const& inputs,
    std::vector<int> const& labels,
    TrainConfig const& cfg,
    RegularizerConstants const& reg,
    EmulatorConfig const& emulator,
    std::size_t epoch,
    std::vector<Tensor> const* masks = nullptr)
{
	auto const& graph = model.graph;
	auto const readout = model.readout();
	auto const steps = emulator.steps();
	auto const dt = emulator.dt_us;
	std::size_t const batch = inputs.front().size();
	auto const structure = compile_network(graph);

	OracleResult result;
	for (auto const& proj : graph.projections()) {
		result.grads.emplace_back(proj.weights.shape());
	}

	double const gamma_e = std::pow(reg.gamma, static_cast<double>(epoch));
	std::size_t total_weights = 0;
	for (auto const& proj : graph.projections()) {
		total_weights += proj.weights.size();
	}

	for (std::size_t b = 0; b < batch; ++b) {
		Tape tape;
		// Weight leaves.
		std::vector<std::vector<int>> w_nodes;
		for (auto const& proj : graph.projections()) {
			std::vector<int> nodes(proj.weights.size());
			for (std::size_t i = 0; i < proj.weights.size(); ++i) {
				nodes[i] = tape.leaf(proj.weights[i]);
			}
			w_nodes.push_back(std::move(nodes));
		}

		// Binned input spikes as constants.
		std::vector<std::vector<std::vector<std::uint32_t>>> bins;
		for (auto const& per_input : inputs) {
			bins.push_back(bin_events(per_input[b], dt, steps));
		}

		// Per population: i, u (post-reset), spike nodes, trace nodes.
		auto const n_pops = graph.populations().size();
		std::vector<std::vector<int>> i_nodes(n_pops), u_nodes(n_pops);
		std::vector<std::vector<std::vector<int>>> s_nodes(n_pops), v_nodes(n_pops);
		std::vector<std::vector<std::int64_t>> refractory(n_pops);
		for (PopulationId p = 0; p < n_pops; ++p) {
			auto const size = graph.population(p).size;
			i_nodes[p].assign(size, -1);
			u_nodes[p].assign(size, -1);
			s_nodes[p].assign(steps, std::vector<int>(size, -1));
			v_nodes[p].assign(steps, std::vector<int>(size, -1));
			refractory[p].assign(size, 0);
		}

		for (std::size_t t = 0; t < steps; ++t) {
			for (auto const g : structure.update_order) {
				auto const& pop = graph.population(g);
				auto const& params = pop.params;
				double const a_m = std::exp(-dt / params.tau_mem_us);
				double const a_s = std::exp(-dt / params.tau_syn_us);
				auto const size = pop.size;
				std::vector<int> drive(size, -1);
				for (auto const pi : structure.afferents[g]) {
					auto const& cproj = structure.projections[pi];
					auto const j = cproj.original;
					auto const& proj = graph.projection(j);
					bool const dense =
					    proj.connectivity.kind == Connectivity::Kind::dense;
					auto accumulate = [&](std::size_t pre, int s_node) {
						for (auto const& [post, w] : cproj.fanout[pre]) {
							(void) w;
							std::size_t const widx =
							    dense ? pre * proj.weights.dim(1) + post
							          : post * proj.weights.dim(1) +
							                tap_of(proj.connectivity, post, pre);
							auto const term =
							    tape.mul(w_nodes[j][widx], s_node);
							drive[post] = drive[post] < 0
							                  ? term
							                  : tape.add(drive[post], term);
						}
					};
					if (cproj.pre_group < 0) {
						for (auto const pre : bins[cproj.block][t]) {
							accumulate(pre, tape.leaf(1.0));
						}
					} else {
						// Zero-valued spike terms stay on the tape: adding
						// w * 0 keeps the forward value bit-identical while
						// the surrogate path to subthreshold neurons remains.
						auto const src = static_cast<PopulationId>(cproj.pre_group);
						for (std::size_t pre = 0; pre < graph.population(src).size;
						     ++pre) {
							auto const s = s_nodes[src][t][pre];
							if (s < 0) {
								continue;
							}
							double const m =
							    masks ? (*masks)[src](b, pre) : 1.0;
							if (m == 0.0) {
								continue;
							}
							accumulate(pre, s);
						}
					}
				}
				for (std::size_t n = 0; n < size; ++n) {
					// i_t = a_s i_{t-1} + drive
					int i_new;
					if (i_nodes[g][n] < 0) {
						i_new = drive[n] < 0 ? tape.leaf(0.0)
						                     : tape.offset(drive[n], 0.0);
					} else {
						auto const decayed = tape.scale(i_nodes[g][n], a_s);
						i_new = drive[n] < 0 ? decayed
						                     : tape.add(decayed, drive[n]);
					}
					i_nodes[g][n] = i_new;

					if (params.kind == NeuronKind::lif && refractory[g][n] > 0) {
						--refractory[g][n];
						auto const clamped = tape.leaf(params.v_reset);
						v_nodes[g][t][n] = clamped;
						s_nodes[g][t][n] = tape.leaf(0.0);
						u_nodes[g][n] = clamped;
						continue;
					}

					// v_t = v_leak + (u_{t-1} - v_leak) a_m + i_t dt
					int v_new;
					{
						int const u_prev = u_nodes[g][n];
						int decay;
						if (u_prev < 0) {
							decay = tape.leaf(params.v_leak);
						} else {
							decay = tape.offset(
							    tape.scale(
							        tape.offset(u_prev, -params.v_leak), a_m),
							    params.v_leak);
						}
						v_new = tape.add(decay, tape.scale(i_nodes[g][n], dt));
					}
					v_nodes[g][t][n] = v_new;

					if (params.kind == NeuronKind::li) {
						u_nodes[g][n] = v_new;
						continue;
					}
					auto const s = tape.spike(
					    v_new, params.v_thresh, cfg.superspike_alpha);
					s_nodes[g][t][n] = s;
					// u_t = v_t (1 - s_t) + v_reset s_t
					auto const keep =
					    tape.mul(v_new, tape.offset(tape.scale(s, -1.0), 1.0));
					u_nodes[g][n] = tape.add(keep, tape.scale(s, params.v_reset));
					if (tape.value(s) != 0.0) {
						refractory[g][n] =
						    std::llround(params.refractory_us / dt);
					}
				}
			}
		}

		// Decode scores.
		auto const classes = graph.population(readout).size;
		std::vector<int> scores(classes);
		for (std::size_t k = 0; k < classes; ++k) {
			int acc = v_nodes[readout][0][k];
			if (cfg.decode == DecodeMethod::max_over_time) {
				for (std::size_t t = 1; t < steps; ++t) {
					acc = tape.maximum(acc, v_nodes[readout][t][k]);
				}
			} else {
				acc = v_nodes[readout][steps - 1][k];
			}
			scores[k] = tape.scale(acc, cfg.readout_scale);
		}

		// Cross entropy with a detached max shift.
		double shift = tape.value(scores[0]);
		for (auto const s : scores) {
			shift = std::max(shift, tape.value(s));
		}
		int sum = -1;
		for (auto const s : scores) {
			auto const e = tape.exp_of(tape.offset(s, -shift));
			sum = sum < 0 ? e : tape.add(sum, e);
		}
		auto const log_z = tape.offset(tape.log_of(sum), shift);
		int loss = tape.scale(
		    tape.sub(log_z, scores[static_cast<std::size_t>(labels[b])]),
		    1.0 / static_cast<double>(batch));

		// Regularizers (per-sample terms).
		for (PopulationId p = 0; p < n_pops; ++p) {
			bool const hidden =
			    p != readout && graph.population(p).params.kind == NeuronKind::lif;
			if (!hidden || (reg.theta_h == 0.0 && reg.burst == 0.0)) {
				continue;
			}
			auto const size = graph.population(p).size;
			if (reg.theta_h > 0.0) {
				int rate = -1;
				for (std::size_t n = 0; n < size; ++n) {
					int count = -1;
					for (std::size_t t = 0; t < steps; ++t) {
						auto const s = s_nodes[p][t][n];
						count = count < 0 ? s : tape.add(count, s);
					}
					auto const sq = tape.mul(count, count);
					rate = rate < 0 ? sq : tape.add(rate, sq);
				}
				loss = tape.add(
				    loss, tape.scale(
				              rate, gamma_e * reg.theta_h /
				                        static_cast<double>(batch * size)));
			}
			if (reg.burst > 0.0) {
				int burst = -1;
				for (std::size_t t = 0; t < steps; ++t) {
					int count = -1;
					for (std::size_t n = 0; n < size; ++n) {
						auto const s = s_nodes[p][t][n];
						count = count < 0 ? s : tape.add(count, s);
					}
					auto const sq = tape.mul(count, count);
					burst = burst < 0 ? sq : tape.add(burst, sq);
				}
				loss = tape.add(
				    loss, tape.scale(
				              burst, reg.burst / static_cast<double>(batch * steps)));
			}
		}
		if (reg.v_o > 0.0) {
			auto const size = graph.population(readout).size;
			int sq_sum = -1;
			for (std::size_t t = 0; t < steps; ++t) {
				for (std::size_t k = 0; k < size; ++k) {
					auto const v = v_nodes[readout][t][k];
					auto const sq = tape.mul(v, v);
					sq_sum = sq_sum < 0 ? sq : tape.add(sq_sum, sq);
				}
			}
			loss = tape.add(
			    loss,
			    tape.scale(
			        sq_sum, reg.v_o / static_cast<double>(batch * steps * size)));
		}
		if (reg.theta_o > 0.0 && b == 0) {
			// Batch-independent weight hinge, added once.
			int hinge = -1;
			for (ProjectionId j = 0; j < graph.projections().size(); ++j) {
				for (std::size_t i = 0; i < graph.projection(j).weights.size(); ++i) {
					double const w = graph.projection(j).weights[i];
					if (std::abs(w) <= reg.w_max) {
						continue;
					}
					auto const excess = w > 0.0
					                        ? tape.offset(w_nodes[j][i], -reg.w_max)
					                        : tape.scale(
					                              tape.offset(w_nodes[j][i], reg.w_max),
					                              -1.0);
					auto const sq = tape.mul(excess, excess);
					hinge = hinge < 0 ? sq : tape.add(hinge, sq);
				}
			}
			if (hinge >= 0) {
				loss = tape.add(
				    loss, tape.scale(
				              hinge, reg.theta_o / static_cast<double>(total_weights)));
			}
		}

		tape.backward(loss);
		result.loss += tape.value(loss);
		for (ProjectionId j = 0; j < graph.projections().size(); ++j) {
			for (std::size_t i = 0; i < graph.projection(j).weights.size(); ++i) {
				result.grads[j][i] += tape.grad(w_nodes[j][i]);
			}
		}
	}
	return result;
}

} // namespace spikepart::testing::tape
