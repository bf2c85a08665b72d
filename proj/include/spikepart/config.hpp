#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spikepart/chip.hpp"
#include "spikepart/emulator.hpp"
#include "spikepart/encoders.hpp"
#include "spikepart/io.hpp"
#include "spikepart/network.hpp"
#include "spikepart/partition.hpp"
#include "spikepart/trainer.hpp"

namespace spikepart {

// Declarative text format shared by network descriptions, chip specs, plan
// files and experiment settings. Line oriented: "[section]" headers, then one
// record per line as "<name> key=value key=value ...". '#' starts a comment.

namespace cfg {

struct Record
{
	std::string name;
	std::vector<std::pair<std::string, std::string>> fields;

	std::optional<std::string> find(std::string const& key) const
	{
		for (auto const& [k, v] : fields) {
			if (k == key) {
				return v;
			}
		}
		return std::nullopt;
	}

	std::string get(std::string const& key) const
	{
		if (auto const v = find(key)) {
			return *v;
		}
		throw std::runtime_error(
		    "config: record '" + name + "' is missing required key '" + key + "'.");
	}

	double get_double(std::string const& key) const { return std::stod(get(key)); }
	std::size_t get_size(std::string const& key) const { return std::stoull(get(key)); }

	double get_double(std::string const& key, double fallback) const
	{
		auto const v = find(key);
		return v ? std::stod(*v) : fallback;
	}
	std::size_t get_size(std::string const& key, std::size_t fallback) const
	{
		auto const v = find(key);
		return v ? std::stoull(*v) : fallback;
	}

	void set(std::string key, std::string value)
	{
		fields.emplace_back(std::move(key), std::move(value));
	}
};

struct Section
{
	std::string name;
	std::vector<Record> records;
};

struct File
{
	std::vector<Section> sections;

	Section const* find(std::string const& name) const
	{
		for (auto const& s : sections) {
			if (s.name == name) {
				return &s;
			}
		}
		return nullptr;
	}

	Section& add(std::string name)
	{
		sections.push_back({std::move(name), {}});
		return sections.back();
	}
};

inline File parse(std::string const& text)
{
	File file;
	Section* current = nullptr;
	std::istringstream in(text);
	std::string line;
	std::size_t line_no = 0;
	while (std::getline(in, line)) {
		++line_no;
		if (auto const hash = line.find('#'); hash != std::string::npos) {
			line.erase(hash);
		}
		std::istringstream fields(line);
		std::string token;
		if (!(fields >> token)) {
			continue;
		}
		if (token.front() == '[') {
			if (token.back() != ']') {
				throw std::runtime_error(
				    "config: malformed section header at line " +
				    std::to_string(line_no) + ".");
			}
			current = &file.add(token.substr(1, token.size() - 2));
			continue;
		}
		if (!current) {
			throw std::runtime_error(
			    "config: record before any section at line " + std::to_string(line_no) +
			    ".");
		}
		Record record;
		record.name = token;
		while (fields >> token) {
			auto const eq = token.find('=');
			if (eq == std::string::npos) {
				throw std::runtime_error(
				    "config: expected key=value at line " + std::to_string(line_no) +
				    ", got '" + token + "'.");
			}
			record.fields.emplace_back(token.substr(0, eq), token.substr(eq + 1));
		}
		current->records.push_back(std::move(record));
	}
	return file;
}

inline std::string serialize(File const& file)
{
	std::string out;
	for (auto const& section : file.sections) {
		out += "[" + section.name + "]\n";
		for (auto const& record : section.records) {
			out += record.name;
			for (auto const& [k, v] : record.fields) {
				out += " " + k + "=" + v;
			}
			out += "\n";
		}
		out += "\n";
	}
	return out;
}

inline std::string format_double(double v)
{
	char buf[40];
	std::snprintf(buf, sizeof(buf), "%.17g", v);
	return buf;
}

// Compact index list: sorted indices as comma-separated runs "a:b" (half
// open) and singletons.
inline std::string encode_indices(std::vector<std::size_t> const& indices)
{
	std::string out;
	std::size_t i = 0;
	while (i < indices.size()) {
		std::size_t j = i;
		while (j + 1 < indices.size() && indices[j + 1] == indices[j] + 1) {
			++j;
		}
		if (!out.empty()) {
			out += ",";
		}
		if (j > i) {
			out += std::to_string(indices[i]) + ":" + std::to_string(indices[j] + 1);
		} else {
			out += std::to_string(indices[i]);
		}
		i = j + 1;
	}
	return out.empty() ? "-" : out;
}

inline std::vector<std::size_t> decode_indices(std::string const& text)
{
	std::vector<std::size_t> out;
	if (text == "-") {
		return out;
	}
	std::istringstream in(text);
	std::string item;
	while (std::getline(in, item, ',')) {
		auto const colon = item.find(':');
		if (colon == std::string::npos) {
			out.push_back(std::stoull(item));
		} else {
			auto const a = std::stoull(item.substr(0, colon));
			auto const b = std::stoull(item.substr(colon + 1));
			for (auto k = a; k < b; ++k) {
				out.push_back(k);
			}
		}
	}
	return out;
}

} // namespace cfg

// ---------------------------------------------------------------------------
// Weights: inline "r0c0,r0c1;r1c0,r1c1" or a tensor file reference "@path"
// (relative to the config file).

inline Tensor parse_weights(
    std::string const& spec,
    std::size_t rows,
    std::size_t cols,
    std::filesystem::path const& base_dir)
{
	Tensor weights;
	if (!spec.empty() && spec.front() == '@') {
		weights = load_tensor(base_dir / spec.substr(1));
	} else {
		std::string_view body = spec;
		if (body.rfind("inline:", 0) == 0) {
			body.remove_prefix(7);
		}
		std::vector<double> values;
		std::vector<std::size_t> row_sizes;
		std::size_t row_len = 0;
		std::string token;
		for (auto const c : body) {
			if (c == ',' || c == ';') {
				values.push_back(std::stod(token));
				token.clear();
				++row_len;
				if (c == ';') {
					row_sizes.push_back(row_len);
					row_len = 0;
				}
			} else {
				token += c;
			}
		}
		if (!token.empty()) {
			values.push_back(std::stod(token));
			++row_len;
		}
		if (row_len) {
			row_sizes.push_back(row_len);
		}
		weights = Tensor({row_sizes.size(), row_sizes.empty() ? 0 : row_sizes[0]},
		                 std::move(values));
	}
	if (weights.rank() != 2 || weights.dim(0) != rows || weights.dim(1) != cols) {
		throw std::runtime_error(
		    "config: weight matrix must be [" + std::to_string(rows) + " x " +
		    std::to_string(cols) + "].");
	}
	return weights;
}

inline std::string serialize_weights_inline(Tensor const& weights)
{
	std::string out = "inline:";
	for (std::size_t r = 0; r < weights.dim(0); ++r) {
		if (r) {
			out += ";";
		}
		for (std::size_t c = 0; c < weights.dim(1); ++c) {
			if (c) {
				out += ",";
			}
			out += cfg::format_double(weights(r, c));
		}
	}
	return out;
}

// ---------------------------------------------------------------------------
// Network description

inline NetworkGraph parse_network(cfg::File const& file, std::filesystem::path const& base_dir)
{
	NetworkGraph graph;
	if (auto const* inputs = file.find("inputs")) {
		for (auto const& r : inputs->records) {
			graph.add_input(r.name, r.get_size("size"));
		}
	}
	if (auto const* populations = file.find("populations")) {
		for (auto const& r : populations->records) {
			NeuronParams params;
			auto const kind = r.find("kind").value_or("lif");
			params.kind = kind == "li" ? NeuronKind::li : NeuronKind::lif;
			params.tau_mem_us = r.get_double("tau_mem", params.tau_mem_us);
			params.tau_syn_us = r.get_double("tau_syn", params.tau_syn_us);
			params.v_leak = r.get_double("v_leak", params.v_leak);
			params.v_reset = r.get_double("v_reset", params.v_reset);
			params.v_thresh = r.get_double("v_thresh", params.v_thresh);
			params.refractory_us = r.get_double("refractory", params.refractory_us);
			graph.add_population(r.get_size("size"), params, r.find("execution"), r.name);
		}
	}
	if (auto const* projections = file.find("projections")) {
		for (auto const& r : projections->records) {
			auto const pre_name = r.get("pre");
			Endpoint pre;
			std::size_t in_h = 0, in_w = 0, channels = 1;
			if (auto const input = graph.find_input(pre_name)) {
				pre = Endpoint::input(*input);
				if (auto const* inputs = file.find("inputs")) {
					for (auto const& ir : inputs->records) {
						if (ir.name == pre_name) {
							in_h = ir.get_size("height", 0);
							in_w = ir.get_size("width", 0);
							channels = ir.get_size("channels", 1);
						}
					}
				}
			} else if (auto const pop = graph.find_population(pre_name)) {
				pre = Endpoint::population(*pop);
			} else {
				throw std::runtime_error(
				    "config: projection '" + r.name + "' references unknown pre '" +
				    pre_name + "'.");
			}
			auto const post = graph.find_population(r.get("post"));
			if (!post) {
				throw std::runtime_error(
				    "config: projection '" + r.name + "' references unknown post '" +
				    r.get("post") + "'.");
			}
			Connectivity conn;
			auto const kind = r.find("connectivity").value_or("dense");
			if (kind == "rf" || kind == "receptive_field") {
				conn = Connectivity::receptive_field(
				    r.get_size("kernel_h"), r.get_size("kernel_w"),
				    r.get_size("channels", channels), r.get_size("stride"),
				    r.get_size("in_h", in_h), r.get_size("in_w", in_w));
			}
			std::size_t const rows =
			    conn.kind == Connectivity::Kind::dense ? graph.endpoint_size(pre)
			                                           : graph.population(*post).size;
			std::size_t const cols = conn.kind == Connectivity::Kind::dense
			                             ? graph.population(*post).size
			                             : conn.taps_per_post();
			auto weights = parse_weights(r.get("weights"), rows, cols, base_dir);
			graph.add_projection(
			    pre, *post, conn, std::move(weights), r.find("execution"), r.name);
		}
	}
	return graph;
}

inline std::map<std::string, Backend> parse_execution_backends(cfg::File const& file)
{
	std::map<std::string, Backend> backends;
	if (auto const* executions = file.find("executions")) {
		for (auto const& r : executions->records) {
			auto const b = r.find("backend").value_or("emulated");
			backends[r.name] =
			    b == "reference" ? Backend::reference_simulated : Backend::emulated;
		}
	}
	return backends;
}

inline void serialize_network(cfg::File& file, NetworkGraph const& graph)
{
	if (!graph.inputs().empty()) {
		auto& inputs = file.add("inputs");
		for (auto const& input : graph.inputs()) {
			cfg::Record r;
			r.name = input.name;
			r.set("size", std::to_string(input.size));
			inputs.records.push_back(std::move(r));
		}
	}
	auto& populations = file.add("populations");
	for (auto const& pop : graph.populations()) {
		cfg::Record r;
		r.name = pop.name;
		r.set("size", std::to_string(pop.size));
		r.set("kind", pop.params.kind == NeuronKind::li ? "li" : "lif");
		r.set("tau_mem", cfg::format_double(pop.params.tau_mem_us));
		r.set("tau_syn", cfg::format_double(pop.params.tau_syn_us));
		r.set("v_leak", cfg::format_double(pop.params.v_leak));
		r.set("v_reset", cfg::format_double(pop.params.v_reset));
		r.set("v_thresh", cfg::format_double(pop.params.v_thresh));
		r.set("refractory", cfg::format_double(pop.params.refractory_us));
		if (pop.execution) {
			r.set("execution", *pop.execution);
		}
		populations.records.push_back(std::move(r));
	}
	auto& projections = file.add("projections");
	for (auto const& proj : graph.projections()) {
		cfg::Record r;
		r.name = proj.name;
		r.set("pre", proj.pre.is_input() ? graph.input(proj.pre.index).name
		                                 : graph.population(proj.pre.index).name);
		r.set("post", graph.population(proj.post).name);
		if (proj.connectivity.kind == Connectivity::Kind::dense) {
			r.set("connectivity", "dense");
		} else {
			r.set("connectivity", "rf");
			r.set("kernel_h", std::to_string(proj.connectivity.kernel_h));
			r.set("kernel_w", std::to_string(proj.connectivity.kernel_w));
			r.set("channels", std::to_string(proj.connectivity.channels));
			r.set("stride", std::to_string(proj.connectivity.stride));
			r.set("in_h", std::to_string(proj.connectivity.in_h));
			r.set("in_w", std::to_string(proj.connectivity.in_w));
		}
		r.set("weights", serialize_weights_inline(proj.weights));
		if (proj.execution) {
			r.set("execution", *proj.execution);
		}
		projections.records.push_back(std::move(r));
	}
}

// ---------------------------------------------------------------------------
// Chip section

inline ChipSpec parse_chip(cfg::File const& file)
{
	ChipSpec chip;
	if (auto const* section = file.find("chip")) {
		if (!section->records.empty()) {
			auto const& r = section->records.front();
			chip.neuron_circuits = r.get_size("neuron_circuits", chip.neuron_circuits);
			chip.synapses_per_circuit =
			    r.get_size("synapses_per_circuit", chip.synapses_per_circuit);
			chip.max_circuits_per_neuron =
			    r.get_size("max_circuits_per_neuron", chip.max_circuits_per_neuron);
			chip.labels_per_row = r.get_size("labels_per_row", chip.labels_per_row);
			chip.synapses_per_signed_weight = r.get_size(
			    "synapses_per_signed_weight", chip.synapses_per_signed_weight);
			chip.weight_bits = r.get_size("weight_bits", chip.weight_bits);
			chip.events_per_cycle = r.get_size("events_per_cycle", chip.events_per_cycle);
			chip.clock_mhz = r.get_double("clock_mhz", chip.clock_mhz);
			chip.input_buffer = r.get_size("input_buffer", chip.input_buffer);
		}
	}
	chip.check();
	return chip;
}

inline void serialize_chip(cfg::File& file, ChipSpec const& chip)
{
	auto& section = file.add("chip");
	cfg::Record r;
	r.name = "chip";
	r.set("neuron_circuits", std::to_string(chip.neuron_circuits));
	r.set("synapses_per_circuit", std::to_string(chip.synapses_per_circuit));
	r.set("max_circuits_per_neuron", std::to_string(chip.max_circuits_per_neuron));
	r.set("labels_per_row", std::to_string(chip.labels_per_row));
	r.set("synapses_per_signed_weight", std::to_string(chip.synapses_per_signed_weight));
	r.set("weight_bits", std::to_string(chip.weight_bits));
	r.set("events_per_cycle", std::to_string(chip.events_per_cycle));
	r.set("clock_mhz", cfg::format_double(chip.clock_mhz));
	r.set("input_buffer", std::to_string(chip.input_buffer));
	section.records.push_back(std::move(r));
}

// ---------------------------------------------------------------------------
// Plan section: the compiled ExecutionGraph with per-execution resource usage.

inline void serialize_plan(cfg::File& file, NetworkGraph const& graph, ExecutionGraph const& plan)
{
	auto& section = file.add("plan");
	for (auto const& exec : plan.executions) {
		cfg::Record r;
		r.name = "execution";
		r.set("id", std::to_string(exec.id));
		r.set("name", exec.name);
		r.set(
		    "backend",
		    exec.backend == Backend::reference_simulated ? "reference" : "emulated");
		r.set("circuits_used", std::to_string(exec.fit.circuits_used));
		r.set("rows_used", std::to_string(exec.fit.rows_used));
		section.records.push_back(std::move(r));
		for (auto const& slice : exec.neurons) {
			cfg::Record s;
			s.name = "slice";
			s.set("execution", std::to_string(exec.id));
			s.set("population", graph.population(slice.population).name);
			s.set("begin", std::to_string(slice.begin));
			s.set("end", std::to_string(slice.end));
			section.records.push_back(std::move(s));
		}
		for (auto const& aff : exec.afferents) {
			cfg::Record a;
			a.name = "afferent";
			a.set("execution", std::to_string(exec.id));
			a.set("projection", graph.projection(aff.projection).name);
			a.set("post_begin", std::to_string(aff.post_begin));
			a.set("post_end", std::to_string(aff.post_end));
			a.set("internal", aff.pre_internal ? "1" : "0");
			a.set("block", std::to_string(aff.block));
			section.records.push_back(std::move(a));
		}
		for (std::size_t b = 0; b < exec.inputs.size(); ++b) {
			auto const& block = exec.inputs[b];
			cfg::Record br;
			br.name = "block";
			br.set("execution", std::to_string(exec.id));
			br.set("index", std::to_string(b));
			br.set(
			    "source", (block.source.is_input()
			                   ? "input:" + graph.input(block.source.index).name
			                   : "population:" +
			                         graph.population(block.source.index).name));
			br.set("channel_begin", std::to_string(block.channel_begin));
			br.set("indices", cfg::encode_indices(block.indices));
			section.records.push_back(std::move(br));
		}
	}
	for (auto const& edge : plan.edges) {
		cfg::Record e;
		e.name = "edge";
		e.set("source", std::to_string(edge.source));
		e.set("target", std::to_string(edge.target));
		e.set("population", graph.population(edge.source_slice.population).name);
		e.set("begin", std::to_string(edge.source_slice.begin));
		e.set("end", std::to_string(edge.source_slice.end));
		e.set("projection", graph.projection(edge.projection).name);
		std::string map;
		for (auto const& [from, to] : edge.translation) {
			if (!map.empty()) {
				map += ",";
			}
			map += std::to_string(from) + ":" + std::to_string(to);
		}
		e.set("map", map.empty() ? "-" : map);
		section.records.push_back(std::move(e));
	}
}

inline ExecutionGraph parse_plan(cfg::File const& file, NetworkGraph const& graph)
{
	auto const* section = file.find("plan");
	if (!section) {
		throw std::runtime_error("config: no [plan] section found.");
	}
	ExecutionGraph plan;
	auto pop_id = [&](std::string const& name) {
		auto const p = graph.find_population(name);
		if (!p) {
			throw std::runtime_error("config: plan references unknown population '" +
			                         name + "'.");
		}
		return *p;
	};
	auto proj_id = [&](std::string const& name) {
		for (ProjectionId j = 0; j < graph.projections().size(); ++j) {
			if (graph.projection(j).name == name) {
				return j;
			}
		}
		throw std::runtime_error(
		    "config: plan references unknown projection '" + name + "'.");
	};
	for (auto const& r : section->records) {
		if (r.name == "execution") {
			ExecutionInstance exec;
			exec.id = r.get_size("id");
			exec.name = r.get("name");
			exec.backend = r.get("backend") == "reference" ? Backend::reference_simulated
			                                               : Backend::emulated;
			exec.fit.circuits_used = r.get_size("circuits_used", 0);
			exec.fit.rows_used = r.get_size("rows_used", 0);
			exec.fit.fits = true;
			if (exec.id != plan.executions.size()) {
				throw std::runtime_error("config: plan execution ids must be dense.");
			}
			plan.executions.push_back(std::move(exec));
		} else if (r.name == "slice") {
			auto& exec = plan.executions.at(r.get_size("execution"));
			exec.neurons.push_back(
			    {pop_id(r.get("population")), r.get_size("begin"), r.get_size("end")});
		} else if (r.name == "afferent") {
			auto& exec = plan.executions.at(r.get_size("execution"));
			exec.afferents.push_back(
			    {proj_id(r.get("projection")), r.get_size("post_begin"),
			     r.get_size("post_end"), r.get("internal") == "1", r.get_size("block")});
		} else if (r.name == "block") {
			auto& exec = plan.executions.at(r.get_size("execution"));
			InputBlock block;
			auto const source = r.get("source");
			auto const colon = source.find(':');
			auto const kind = source.substr(0, colon);
			auto const name = source.substr(colon + 1);
			if (kind == "input") {
				auto const input = graph.find_input(name);
				if (!input) {
					throw std::runtime_error(
					    "config: plan references unknown input '" + name + "'.");
				}
				block.source = Endpoint::input(*input);
			} else {
				block.source = Endpoint::population(pop_id(name));
			}
			block.channel_begin = r.get_size("channel_begin");
			block.indices = cfg::decode_indices(r.get("indices"));
			exec.inputs.push_back(std::move(block));
		} else if (r.name == "edge") {
			InterExecutionProjection edge;
			edge.source = r.get_size("source");
			edge.target = r.get_size("target");
			edge.source_slice = {
			    pop_id(r.get("population")), r.get_size("begin"), r.get_size("end")};
			edge.projection = proj_id(r.get("projection"));
			auto const map = r.get("map");
			if (map != "-") {
				std::istringstream in(map);
				std::string item;
				while (std::getline(in, item, ',')) {
					auto const c = item.find(':');
					edge.translation.emplace_back(
					    static_cast<std::uint32_t>(std::stoul(item.substr(0, c))),
					    static_cast<std::uint32_t>(std::stoul(item.substr(c + 1))));
				}
			}
			plan.edges.push_back(std::move(edge));
		} else {
			throw std::runtime_error("config: unknown plan record '" + r.name + "'.");
		}
	}
	plan.check(graph);
	return plan;
}

// ---------------------------------------------------------------------------
// Experiment settings (training, regularization, emulation, encoding,
// augmentation).

struct EncoderSettings
{
	enum class Kind
	{
		linear,
		current
	};
	Kind kind = Kind::linear;
	LinearTtfsParams linear;
	CurrentTtfsParams current;
};

struct ExperimentSettings
{
	TrainConfig train;
	RegularizerConstants reg;
	EmulatorConfig emulator;
	EncoderSettings encoder;
	AugmentConfig augment;
};

inline ExperimentSettings parse_experiment(cfg::File const& file)
{
	ExperimentSettings s;
	if (auto const* section = file.find("train"); section && !section->records.empty()) {
		auto const& r = section->records.front();
		s.train.batch_size = r.get_size("batch_size", s.train.batch_size);
		s.train.learning_rate = r.get_double("learning_rate", s.train.learning_rate);
		s.train.epochs = r.get_size("epochs", s.train.epochs);
		s.train.lr_decay = r.get_double("lr_decay", s.train.lr_decay);
		if (auto const m = r.find("lr_milestones"); m && *m != "-") {
			for (auto const i : cfg::decode_indices(*m)) {
				s.train.lr_milestones.push_back(i);
			}
		}
		s.train.dropout_p = r.get_double("dropout", s.train.dropout_p);
		s.train.superspike_alpha = r.get_double("alpha", s.train.superspike_alpha);
		s.train.readout_scale = r.get_double("readout_scale", s.train.readout_scale);
		if (auto const d = r.find("decode")) {
			s.train.decode = *d == "last" ? DecodeMethod::last_value
			                              : DecodeMethod::max_over_time;
		}
		if (auto const m = r.find("mode")) {
			s.train.mode = *m == "partitioned" ? ForwardMode::partitioned
			               : *m == "mixed"     ? ForwardMode::mixed
			                                   : ForwardMode::reference;
		}
		s.train.seed = r.get_size("seed", s.train.seed);
		s.train.workers = r.get_size("workers", s.train.workers);
		if (auto const p = r.find("patience")) {
			s.train.patience = std::stoull(*p);
		}
	}
	if (auto const* section = file.find("regularizer"); section && !section->records.empty()) {
		auto const& r = section->records.front();
		s.reg.burst = r.get_double("burst", s.reg.burst);
		s.reg.theta_h = r.get_double("theta_h", s.reg.theta_h);
		s.reg.theta_o = r.get_double("theta_o", s.reg.theta_o);
		s.reg.v_o = r.get_double("v_o", s.reg.v_o);
		s.reg.gamma = r.get_double("gamma", s.reg.gamma);
		s.reg.w_max = r.get_double("w_max", s.reg.w_max);
	}
	if (auto const* section = file.find("emulator"); section && !section->records.empty()) {
		auto const& r = section->records.front();
		s.emulator.dt_us = r.get_double("dt", s.emulator.dt_us);
		s.emulator.duration_us = r.get_double("T", s.emulator.duration_us);
		s.emulator.hardware_fidelity =
		    r.get_size("hardware_fidelity", s.emulator.hardware_fidelity ? 1 : 0) != 0;
		s.emulator.weight_scale = r.get_double("weight_scale", s.emulator.weight_scale);
		s.emulator.weight_bits = r.get_size("weight_bits", s.emulator.weight_bits);
		s.emulator.trace_clip.scale =
		    r.get_double("trace_scale", s.emulator.trace_clip.scale);
		s.emulator.trace_clip.lo = r.get_double("trace_lo", s.emulator.trace_clip.lo);
		s.emulator.trace_clip.hi = r.get_double("trace_hi", s.emulator.trace_clip.hi);
		s.emulator.bandwidth.events_per_cycle =
		    r.get_size("bw_events_per_cycle", s.emulator.bandwidth.events_per_cycle);
		s.emulator.bandwidth.cycles_per_dt =
		    r.get_double("bw_cycles_per_dt", s.emulator.bandwidth.cycles_per_dt);
		s.emulator.bandwidth.buffer_len =
		    r.get_size("bw_buffer", s.emulator.bandwidth.buffer_len);
		s.emulator.seed = r.get_size("seed", s.emulator.seed);
	}
	if (auto const* section = file.find("encoder"); section && !section->records.empty()) {
		auto const& r = section->records.front();
		auto const kind = r.find("kind").value_or("linear");
		s.encoder.kind = kind == "current" ? EncoderSettings::Kind::current
		                                   : EncoderSettings::Kind::linear;
		s.encoder.linear.duration_us = r.get_double("T", s.emulator.duration_us);
		s.encoder.linear.dt_us = r.get_double("dt", s.emulator.dt_us);
		s.encoder.linear.x_min = r.get_double("x_min", s.encoder.linear.x_min);
		s.encoder.linear.x_max = r.get_double("x_max", s.encoder.linear.x_max);
		s.encoder.current.tau_en_us = r.get_double("tau_en", s.encoder.current.tau_en_us);
		s.encoder.current.theta_en = r.get_double("theta_en", s.encoder.current.theta_en);
		s.encoder.current.x_min = r.get_double(
		    "x_min", kind == "current" ? s.encoder.current.x_min : 0.1);
		s.encoder.current.sigma_in = r.get_double("sigma_in", s.encoder.current.sigma_in);
		s.encoder.current.time_resolution_us =
		    r.get_double("resolution", s.encoder.current.time_resolution_us);
	}
	if (auto const* section = file.find("augment"); section && !section->records.empty()) {
		auto const& r = section->records.front();
		s.augment.rotate_deg = r.get_double("rotate_deg", s.augment.rotate_deg);
		s.augment.rotate_prob = r.get_double("rotate_prob", s.augment.rotate_prob);
		s.augment.hflip_prob = r.get_double("hflip_prob", s.augment.hflip_prob);
		s.augment.vflip_prob = r.get_double("vflip_prob", s.augment.vflip_prob);
		s.augment.normalize = r.get_size("normalize", s.augment.normalize ? 1 : 0) != 0;
	}
	return s;
}

// ---------------------------------------------------------------------------
// Whole-file helpers

inline std::string read_text_file(std::filesystem::path const& path)
{
	std::ifstream in(path);
	if (!in) {
		throw std::runtime_error("cannot open '" + path.string() + "'.");
	}
	std::ostringstream out;
	out << in.rdbuf();
	return out.str();
}

inline void write_text_file(std::filesystem::path const& path, std::string const& text)
{
	std::ofstream out(path);
	if (!out) {
		throw std::runtime_error("cannot open '" + path.string() + "' for writing.");
	}
	out << text;
}

struct NetworkFile
{
	NetworkGraph graph;
	std::optional<ChipSpec> chip;
	std::optional<ExecutionGraph> plan;
	std::map<std::string, Backend> backends;
	ExperimentSettings experiment;
};

inline NetworkFile load_network_file(std::filesystem::path const& path)
{
	auto const file = cfg::parse(read_text_file(path));
	NetworkFile out;
	out.graph = parse_network(file, path.parent_path());
	if (file.find("chip")) {
		out.chip = parse_chip(file);
	}
	out.backends = parse_execution_backends(file);
	if (file.find("plan")) {
		out.plan = parse_plan(file, out.graph);
	}
	out.experiment = parse_experiment(file);
	return out;
}

inline std::string serialize_plan_file(
    NetworkGraph const& graph, ExecutionGraph const& plan, ChipSpec const& chip)
{
	cfg::File file;
	serialize_network(file, graph);
	serialize_chip(file, chip);
	serialize_plan(file, graph, plan);
	return cfg::serialize(file);
}

} // namespace spikepart
