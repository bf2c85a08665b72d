#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "spikepart/network.hpp"

using namespace spikepart;

namespace {

NeuronParams lif_params()
{
	NeuronParams p;
	p.kind = NeuronKind::lif;
	p.tau_mem_us = 6.0;
	p.tau_syn_us = 5.7;
	p.v_leak = 0.0;
	p.v_reset = 0.0;
	p.v_thresh = 1.0;
	return p;
}

NeuronParams li_params()
{
	NeuronParams p = lif_params();
	p.kind = NeuronKind::li;
	return p;
}

Tensor dense_weights(std::size_t pre, std::size_t post, double value = 0.1)
{
	Tensor w({pre, post});
	for (std::size_t i = 0; i < w.size(); ++i) {
		w[i] = value;
	}
	return w;
}

// Reachability by brute force, used as the SCC oracle on small graphs.
std::vector<std::vector<bool>> reachability(NetworkGraph const& graph)
{
	auto const n = graph.populations().size();
	std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
	for (auto const& proj : graph.projections()) {
		if (!proj.pre.is_input()) {
			reach[proj.pre.index][proj.post] = true;
		}
	}
	for (std::size_t k = 0; k < n; ++k) {
		for (std::size_t i = 0; i < n; ++i) {
			for (std::size_t j = 0; j < n; ++j) {
				if (reach[i][k] && reach[k][j]) {
					reach[i][j] = true;
				}
			}
		}
	}
	return reach;
}

} // namespace

TEST_CASE("add_population returns unique ids and appends")
{
	NetworkGraph graph;
	auto const p1 = graph.add_population(256, lif_params());
	CHECK(p1 == 0);
	CHECK(graph.populations().size() == 1);
	CHECK(graph.population(p1).size == 256);

	auto const p2 = graph.add_population(10, li_params());
	CHECK(p2 == 1);
	CHECK(graph.populations().size() == 2);
}

TEST_CASE("add_population rejects invalid arguments")
{
	NetworkGraph graph;
	CHECK_THROWS_WITH(
	    graph.add_population(0, lif_params()), Catch::Matchers::ContainsSubstring("size >= 1"));

	NeuronParams bad = lif_params();
	bad.tau_mem_us = 0.0;
	CHECK_THROWS_WITH(
	    graph.add_population(1, bad), Catch::Matchers::ContainsSubstring("tau_mem"));

	NeuronParams inverted = lif_params();
	inverted.v_thresh = inverted.v_reset - 1.0;
	CHECK_THROWS_WITH(
	    graph.add_population(1, inverted),
	    Catch::Matchers::ContainsSubstring("v_thresh > v_reset"));
}

TEST_CASE("add_projection validates shapes and endpoints")
{
	NetworkGraph graph;
	auto const img = graph.add_input("img", 784);
	auto const hidden = graph.add_population(256, lif_params());

	CHECK_NOTHROW(graph.add_projection(
	    Endpoint::input(img), hidden, Connectivity::dense_all(), dense_weights(784, 256)));

	// Transposed weights are rejected.
	CHECK_THROWS(graph.add_projection(
	    Endpoint::input(img), hidden, Connectivity::dense_all(), dense_weights(256, 784)));

	// Unknown endpoints.
	CHECK_THROWS(graph.add_projection(
	    Endpoint::population(42), hidden, Connectivity::dense_all(),
	    dense_weights(1, 256)));
}

TEST_CASE("receptive field on a 64x64x3 input yields 484 posts with 27 inputs")
{
	auto const conn = Connectivity::receptive_field(3, 3, 3, 3, 64, 64);
	CHECK(conn.post_count() == 484);
	CHECK(conn.taps_per_post() == 27);

	NetworkGraph graph;
	auto const img = graph.add_input("img", 64 * 64 * 3);
	auto const l1 = graph.add_population(484, lif_params());
	CHECK_NOTHROW(graph.add_projection(
	    Endpoint::input(img), l1, conn, dense_weights(484, 27)));

	// Border windows keep weight slots; their clipped taps connect nowhere.
	std::size_t wired = 0;
	for (std::size_t post = 0; post < 484; ++post) {
		for (std::size_t tap = 0; tap < 27; ++tap) {
			if (conn.tap_source(post, tap)) {
				++wired;
			}
		}
	}
	CHECK(wired == 64 * 64 * 3); // receptive fields tile the image exactly once
}

TEST_CASE("validate flags recurrence spanning executions")
{
	NetworkGraph graph;
	auto const a = graph.add_population(4, lif_params(), "one", "a");
	auto const b = graph.add_population(4, lif_params(), "two", "b");
	graph.add_projection(
	    Endpoint::population(a), b, Connectivity::dense_all(), dense_weights(4, 4), "two");
	graph.add_projection(
	    Endpoint::population(b), a, Connectivity::dense_all(), dense_weights(4, 4), "one");

	auto const report = graph.validate();
	REQUIRE_FALSE(report.clean());
	CHECK_THAT(report.issues.front().message, Catch::Matchers::ContainsSubstring("recurrent"));
}

TEST_CASE("validate accepts recurrence within one execution and clean feed-forward chains")
{
	NetworkGraph graph;
	auto const a = graph.add_population(4, lif_params(), "one", "a");
	auto const b = graph.add_population(4, lif_params(), "one", "b");
	graph.add_projection(
	    Endpoint::population(a), b, Connectivity::dense_all(), dense_weights(4, 4), "one");
	graph.add_projection(
	    Endpoint::population(b), a, Connectivity::dense_all(), dense_weights(4, 4), "one");
	CHECK(graph.validate().clean());

	NetworkGraph ff;
	auto const in = ff.add_input("in", 8);
	auto const h1 = ff.add_population(8, lif_params());
	auto const h2 = ff.add_population(8, lif_params());
	auto const out = ff.add_population(4, li_params());
	ff.add_projection(Endpoint::input(in), h1, Connectivity::dense_all(), dense_weights(8, 8));
	ff.add_projection(
	    Endpoint::population(h1), h2, Connectivity::dense_all(), dense_weights(8, 8));
	ff.add_projection(
	    Endpoint::population(h2), out, Connectivity::dense_all(), dense_weights(8, 4));
	CHECK(ff.validate().clean());
}

TEST_CASE("SCC computation matches brute-force reachability on random graphs")
{
	std::mt19937_64 rng(7);
	for (int trial = 0; trial < 200; ++trial) {
		NetworkGraph graph;
		auto const n = 2 + rng() % 7; // up to 8 populations
		for (std::size_t i = 0; i < n; ++i) {
			graph.add_population(2, lif_params());
		}
		std::uniform_real_distribution<double> coin(0.0, 1.0);
		for (std::size_t i = 0; i < n; ++i) {
			for (std::size_t j = 0; j < n; ++j) {
				if (i != j && coin(rng) < 0.25) {
					graph.add_projection(
					    Endpoint::population(i), j, Connectivity::dense_all(),
					    dense_weights(2, 2));
				}
			}
		}
		auto const reach = reachability(graph);
		auto const components = graph.strongly_connected_components();
		std::vector<std::size_t> component_of(n, 0);
		for (std::size_t c = 0; c < components.size(); ++c) {
			for (auto const p : components[c]) {
				component_of[p] = c;
			}
		}
		for (std::size_t i = 0; i < n; ++i) {
			for (std::size_t j = 0; j < n; ++j) {
				if (i == j) {
					continue;
				}
				bool const same_scc = reach[i][j] && reach[j][i];
				CHECK(same_scc == (component_of[i] == component_of[j]));
			}
		}
	}
}

TEST_CASE("construction is append-only")
{
	NetworkGraph graph;
	auto const in = graph.add_input("in", 4);
	graph.add_population(4, lif_params());
	auto const before_pops = graph.populations();
	auto const before_inputs = graph.inputs();

	graph.add_population(2, li_params());
	graph.add_projection(
	    Endpoint::input(in), 0, Connectivity::dense_all(), dense_weights(4, 4));

	for (std::size_t i = 0; i < before_pops.size(); ++i) {
		CHECK(graph.populations()[i] == before_pops[i]);
	}
	for (std::size_t i = 0; i < before_inputs.size(); ++i) {
		CHECK(graph.inputs()[i] == before_inputs[i]);
	}
}

TEST_CASE("self-recurrent projection forms a flagged single-population component")
{
	NetworkGraph graph;
	auto const a = graph.add_population(4, lif_params(), "one", "a");
	graph.add_projection(
	    Endpoint::population(a), a, Connectivity::dense_all(), dense_weights(4, 4), "one");
	CHECK(graph.validate().clean());

	// A self-loop whose projection is annotated elsewhere crosses executions.
	NetworkGraph bad;
	auto const b = bad.add_population(4, lif_params(), "one", "b");
	bad.add_projection(
	    Endpoint::population(b), b, Connectivity::dense_all(), dense_weights(4, 4), "two");
	CHECK_FALSE(bad.validate().clean());
}
