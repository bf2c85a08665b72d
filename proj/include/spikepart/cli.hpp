#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spikepart/config.hpp"
#include "spikepart/encoders.hpp"
#include "spikepart/io.hpp"
#include "spikepart/schedule.hpp"
#include "spikepart/trainer.hpp"

namespace spikepart {

namespace cli_detail {

inline std::map<std::string, std::size_t> parse_split_factors(
    std::vector<std::string> const& specs)
{
	std::map<std::string, std::size_t> factors;
	for (auto const& spec : specs) {
		auto const eq = spec.find('=');
		if (eq == std::string::npos) {
			throw std::invalid_argument("--split expects <population>=<parts>.");
		}
		factors[spec.substr(0, eq)] = std::stoull(spec.substr(eq + 1));
	}
	return factors;
}

// Input event files: <input name>_<entry>.events in one directory.
inline std::vector<std::vector<EventStream>> load_input_streams(
    NetworkGraph const& graph, std::filesystem::path const& dir, std::size_t batch_hint)
{
	std::vector<std::vector<EventStream>> inputs(graph.inputs().size());
	for (InputId i = 0; i < graph.inputs().size(); ++i) {
		auto const& name = graph.input(i).name;
		for (std::size_t b = 0;; ++b) {
			auto const path = dir / (name + "_" + std::to_string(b) + ".events");
			if (!std::filesystem::exists(path)) {
				break;
			}
			inputs[i].push_back(load_events(path));
		}
		if (inputs[i].empty()) {
			throw std::runtime_error(
			    "run: no event files for input '" + name + "' in '" + dir.string() +
			    "'.");
		}
		if (batch_hint && inputs[i].size() > batch_hint) {
			inputs[i].resize(batch_hint);
		}
	}
	for (auto const& per_input : inputs) {
		if (per_input.size() != inputs.front().size()) {
			throw std::runtime_error("run: inputs have differing batch sizes.");
		}
	}
	return inputs;
}

inline int command_compile(
    std::string const& network_path,
    std::string const& chip_path,
    std::string const& out_path,
    bool manual,
    bool pow2,
    std::vector<std::string> const& split_specs)
{
	auto const loaded = load_network_file(network_path);
	ChipSpec chip = loaded.chip.value_or(ChipSpec{});
	if (!chip_path.empty()) {
		chip = parse_chip(cfg::parse(read_text_file(chip_path)));
	}
	auto const policy =
	    pow2 ? CircuitPolicy::round_to_power_of_two : CircuitPolicy::exact_minimum;
	ExecutionGraph plan;
	if (manual) {
		plan = assign_manual(loaded.graph, chip, policy, loaded.backends);
	} else {
		plan = partition_feedforward(
		    loaded.graph, chip, policy, parse_split_factors(split_specs),
		    loaded.backends);
	}
	std::cout << "executions " << plan.executions.size() << "\n";
	std::cout << "edges " << plan.edges.size() << "\n";
	for (auto const& exec : plan.executions) {
		std::cout << "execution " << exec.id << " name=" << exec.name
		          << " neurons=" << exec.neuron_count()
		          << " circuits_used=" << exec.fit.circuits_used
		          << " rows_used=" << exec.fit.rows_used
		          << " channels=" << exec.channel_count() << "\n";
	}
	if (!out_path.empty()) {
		write_text_file(out_path, serialize_plan_file(loaded.graph, plan, chip));
		std::cout << "plan written to " << out_path << "\n";
	}
	return 0;
}

inline int command_estimate(
    std::string const& plan_path,
    std::size_t chips,
    std::size_t batch,
    double experiment_us,
    double wait_us,
    double per_run_overhead_us,
    double recording_per_sample_us,
    std::size_t samples_per_run)
{
	auto const loaded = load_network_file(plan_path);
	if (!loaded.plan) {
		throw std::runtime_error("estimate: '" + plan_path + "' has no [plan] section.");
	}
	auto const schedule = topological_levels(*loaded.plan);
	RuntimeModel model;
	model.batch_size = batch;
	model.experiment_us = experiment_us;
	model.relax_wait_us = wait_us;
	model.per_run_overhead_us = per_run_overhead_us;
	model.recording_per_sample_us = recording_per_sample_us;
	model.samples_per_run = samples_per_run;
	auto const est = estimate_runtime(schedule, model, chips);
	std::cout << "depth " << est.depth << "\n";
	std::cout << "runs_total " << est.runs_total << "\n";
	std::cout << "realtime_per_run_us " << cfg::format_double(est.realtime_per_run_us)
	          << "\n";
	std::cout << "hardware_realtime_us " << cfg::format_double(est.hardware_realtime_us)
	          << "\n";
	std::cout << "overhead_us " << cfg::format_double(est.overhead_us) << "\n";
	std::cout << "recording_us " << cfg::format_double(est.recording_us) << "\n";
	std::cout << "total_us " << cfg::format_double(est.total_us()) << "\n";
	return 0;
}

inline int command_encode(
    std::string const& tensor_path,
    std::string const& out_dir,
    std::string const& settings_path,
    std::string const& prefix,
    std::uint64_t seed)
{
	auto const images = load_tensor(tensor_path);
	ExperimentSettings settings;
	if (!settings_path.empty()) {
		settings = parse_experiment(cfg::parse(read_text_file(settings_path)));
	}
	std::filesystem::create_directories(out_dir);
	std::size_t const count = images.rank() >= 3 ? images.dim(0) : 1;
	std::size_t const pixels = images.size() / count;
	auto const name =
	    prefix.empty() ? std::filesystem::path(tensor_path).stem().string() : prefix;
	for (std::size_t k = 0; k < count; ++k) {
		std::vector<double> flat(
		    images.data() + k * pixels, images.data() + (k + 1) * pixels);
		EventStream stream;
		if (settings.encoder.kind == EncoderSettings::Kind::linear) {
			stream = encode_image_linear(flat.data(), pixels, settings.encoder.linear);
		} else {
			if (settings.encoder.current.sigma_in > 0.0) {
				Tensor jittered = jitter(
				    Tensor({pixels}, flat), settings.encoder.current.sigma_in,
				    derive_seed(seed, "jitter", k));
				flat = jittered.values();
			}
			stream = encode_image_current(
			    flat.data(), pixels, settings.encoder.current,
			    settings.emulator.duration_us);
		}
		save_events(
		    std::filesystem::path(out_dir) / (name + "_" + std::to_string(k) + ".events"),
		    stream);
	}
	std::cout << "encoded " << count << " images to " << out_dir << "\n";
	return 0;
}

inline int command_run(
    std::string const& plan_path,
    std::string const& inputs_dir,
    std::string const& out_dir,
    std::string const& mode,
    std::size_t batch,
    std::size_t workers,
    std::uint64_t seed)
{
	auto const loaded = load_network_file(plan_path);
	auto settings = loaded.experiment;
	settings.emulator.seed = seed;

	RunManifest manifest;
	manifest.plan_path = plan_path;
	manifest.input_hashes.emplace_back(plan_path, fnv1a_file(plan_path));
	auto const inputs =
	    load_input_streams(loaded.graph, inputs_dir, batch);

	std::filesystem::create_directories(out_dir);
	auto const out = std::filesystem::path(out_dir);

	RunResults results;
	if (mode == "reference") {
		auto net = compile_network(loaded.graph);
		auto cfg = settings.emulator;
		cfg.hardware_fidelity = false;
		std::size_t const entries = inputs.empty() ? 0 : inputs.front().size();
		std::vector<EventStream> merged(entries, EventStream{cfg.duration_us, {}});
		for (InputId i = 0; i < inputs.size(); ++i) {
			for (std::size_t b = 0; b < entries; ++b) {
				for (auto const& ev : inputs[i][b].events) {
					merged[b].events.push_back(
					    {ev.time_us, static_cast<std::uint32_t>(
					                     net.blocks[i].channel_begin + ev.id)});
				}
			}
		}
		for (auto& m : merged) {
			m.sort();
		}
		auto run = run_partition(net, merged, cfg);
		results.per_execution.push_back(
		    {run.spikes, run.traces, run.dropped_events});
		results.dropped_events = run.dropped_events;
	} else {
		if (!loaded.plan) {
			throw std::runtime_error("run: '" + plan_path + "' has no [plan] section.");
		}
		OrchestratorOptions options;
		options.config = settings.emulator;
		options.config.hardware_fidelity = mode == "mixed";
		options.workers = workers;
		results = orchestrate(loaded.graph, *loaded.plan, inputs, options);
	}

	for (std::size_t e = 0; e < results.per_execution.size(); ++e) {
		auto const& res = results.per_execution[e];
		for (std::size_t b = 0; b < res.spikes.size(); ++b) {
			auto const path =
			    out / ("exec" + std::to_string(e) + "_spikes_" + std::to_string(b) +
			           ".events");
			save_events(path, res.spikes[b]);
			manifest.output_paths.push_back(path.string());
		}
		auto const trace_path = out / ("exec" + std::to_string(e) + "_traces.cspt");
		save_tensor(trace_path, res.traces.values);
		manifest.output_paths.push_back(trace_path.string());
	}
	for (PopulationId p = 0; p < results.traces_by_population.size(); ++p) {
		auto const path =
		    out / ("pop_" + loaded.graph.population(p).name + "_traces.cspt");
		save_tensor(path, results.traces_by_population[p].values);
		manifest.output_paths.push_back(path.string());
	}

	manifest.timing = {
	    {"compile_us", results.timing.compile_us},
	    {"event_encode_us", results.timing.event_encode_us},
	    {"run_us", results.timing.run_us},
	    {"event_decode_us", results.timing.event_decode_us},
	    {"trace_decode_us", results.timing.trace_decode_us},
	    {"dropped_events", static_cast<double>(results.dropped_events)},
	};
	{
		std::ofstream timing(out / "timing.txt");
		for (auto const& [key, value] : manifest.timing) {
			timing << key << " " << cfg::format_double(value) << "\n";
		}
	}
	save_manifest(out / "manifest.txt", manifest);
	std::cout << "results written to " << out_dir << "\n";
	return 0;
}

inline int command_validate(std::string const& network_path, std::string const& chip_path)
{
	auto const loaded = load_network_file(network_path);
	ChipSpec chip = loaded.chip.value_or(ChipSpec{});
	if (!chip_path.empty()) {
		chip = parse_chip(cfg::parse(read_text_file(chip_path)));
	}
	auto report = loaded.graph.validate();

	// Feasibility beyond graph structure: per-population fan-in must be
	// satisfiable and every recurrent component must fit on one chip.
	std::vector<bool> self_loop(loaded.graph.populations().size(), false);
	for (auto const& proj : loaded.graph.projections()) {
		if (!proj.pre.is_input() && proj.pre.index == proj.post) {
			self_loop[proj.post] = true;
		}
	}
	for (PopulationId p = 0; p < loaded.graph.populations().size(); ++p) {
		try {
			circuits_required(loaded.graph.fan_in(p), chip);
		} catch (std::invalid_argument const& e) {
			report.issues.push_back(
			    {"population '" + loaded.graph.population(p).name + "': " + e.what()});
		}
	}
	for (auto const& component : loaded.graph.strongly_connected_components()) {
		bool const recurrent = component.size() >= 2 || self_loop[component.front()];
		if (!recurrent) {
			continue;
		}
		std::vector<PopulationSlice> slices;
		for (auto const p : component) {
			slices.push_back({p, 0, loaded.graph.population(p).size});
		}
		auto const fit = check_fit(loaded.graph, slices, chip);
		if (!fit.fits) {
			for (auto const& v : fit.violations) {
				report.issues.push_back(
				    {"recurrent component around '" +
				     loaded.graph.population(component.front()).name +
				     "' does not fit one chip: " + v.resource + " requires " +
				     std::to_string(v.required) + ", available " +
				     std::to_string(v.available) + "."});
			}
		}
	}

	if (report.clean()) {
		std::cout << "network is valid\n";
		return 0;
	}
	for (auto const& issue : report.issues) {
		std::cout << "violation: " << issue.message << "\n";
	}
	return 1;
}

inline Tensor load_image_tensor(std::string const& path, bool labels)
{
	if (std::filesystem::path(path).extension() == ".cspt") {
		return load_tensor(path);
	}
	return load_idx(path, !labels);
}

inline int command_train(
    std::string const& config_path,
    std::string const& images_path,
    std::string const& labels_path,
    std::string const& test_images_path,
    std::string const& test_labels_path,
    std::size_t train_count,
    std::size_t test_count,
    std::string const& out_dir)
{
	auto loaded = load_network_file(config_path);
	auto const& settings = loaded.experiment;
	Model model;
	model.graph = std::move(loaded.graph);
	if (settings.train.mode != ForwardMode::reference) {
		if (loaded.plan) {
			model.plan = std::move(loaded.plan);
		} else {
			auto const chip = loaded.chip.value_or(ChipSpec{});
			model.plan = partition_feedforward(
			    model.graph, chip, CircuitPolicy::round_to_power_of_two, {},
			    loaded.backends);
			std::cout << "compiled plan with " << model.plan->executions.size()
			          << " executions\n";
		}
	}

	auto make_provider = [&](Tensor images, Tensor labels_tensor,
	                         std::size_t limit) -> SampleProvider {
		SampleProvider provider;
		std::size_t const count = images.rank() >= 3 ? images.dim(0) : 1;
		provider.size = limit ? std::min(limit, count) : count;
		std::size_t const pixels = images.size() / count;
		std::vector<std::size_t> image_shape(
		    images.shape().begin() + 1, images.shape().end());
		for (std::size_t k = 0; k < provider.size; ++k) {
			provider.labels.push_back(static_cast<int>(labels_tensor[k]));
		}
		auto const encoder = settings.encoder;
		auto const augment = settings.augment;
		auto const duration = settings.emulator.duration_us;
		auto images_ptr = std::make_shared<Tensor>(std::move(images));
		provider.make = [=](std::size_t index, std::uint64_t seed,
		                    bool train) -> std::vector<EventStream> {
			std::vector<double> flat(
			    images_ptr->data() + index * pixels,
			    images_ptr->data() + (index + 1) * pixels);
			if (train && (augment.rotate_prob > 0.0 || augment.hflip_prob > 0.0 ||
			              augment.vflip_prob > 0.0 || augment.normalize)) {
				Tensor img(image_shape, flat);
				img = augment_image(img, augment, seed);
				flat = img.values();
			}
			EventStream stream;
			if (encoder.kind == EncoderSettings::Kind::linear) {
				stream = encode_image_linear(flat.data(), pixels, encoder.linear);
			} else {
				if (train && encoder.current.sigma_in > 0.0) {
					Tensor jittered = jitter(
					    Tensor({pixels}, flat), encoder.current.sigma_in,
					    mix_seed(seed));
					flat = jittered.values();
				}
				stream = encode_image_current(
				    flat.data(), pixels, encoder.current, duration);
			}
			return {std::move(stream)};
		};
		return provider;
	};

	auto const train_provider = make_provider(
	    load_image_tensor(images_path, false), load_image_tensor(labels_path, true),
	    train_count);
	SampleProvider test_provider;
	if (!test_images_path.empty()) {
		test_provider = make_provider(
		    load_image_tensor(test_images_path, false),
		    load_image_tensor(test_labels_path, true), test_count);
	}

	std::filesystem::create_directories(out_dir);
	std::ofstream metrics(std::filesystem::path(out_dir) / "metrics.log");
	auto const result = train_loop(
	    model, train_provider, test_provider, settings.train, settings.reg,
	    settings.emulator, [&](EpochMetrics const& m) {
		    char line[256];
		    std::snprintf(
		        line, sizeof(line), "%zu %.6f %.4f %.6f %.4f %.6g", m.epoch,
		        m.train_loss, m.train_accuracy, m.val_loss, m.val_accuracy,
		        m.learning_rate);
		    metrics << line << "\n";
		    metrics.flush();
		    std::cout << "epoch " << m.epoch << " train_acc " << m.train_accuracy
		              << " val_acc " << m.val_accuracy << "\n";
	    });

	auto const checkpoint = std::filesystem::path(out_dir) / "checkpoint_best";
	std::filesystem::create_directories(checkpoint);
	for (ProjectionId j = 0; j < model.graph.projections().size(); ++j) {
		save_tensor(
		    checkpoint / (model.graph.projection(j).name + ".cspt"),
		    result.best_weights[j]);
	}
	write_text_file(
	    std::filesystem::path(out_dir) / "config_snapshot.cfg",
	    read_text_file(config_path));
	std::cout << "best_val_accuracy " << result.best_val_accuracy << " (epoch "
	          << result.best_epoch << ")\n";
	if (result.diverged) {
		std::cerr << "training diverged; best checkpoint restored\n";
		return 1;
	}
	return 0;
}

} // namespace cli_detail

// Command-line driver; returns the process exit code. 0 success, 1 validation
// failure, 2 I/O or runtime error, 64 usage error.
inline int run_cli(std::vector<std::string> const& args)
{
	CLI::App app{"spikepart: partitioning compiler, scheduler and emulator for "
	             "spiking neural networks"};
	app.require_subcommand(1);

	// compile
	std::string network_path, chip_path, out_path;
	bool manual = false, pow2 = false;
	std::vector<std::string> split_specs;
	auto* compile = app.add_subcommand("compile", "partition a network into a plan");
	compile->add_option("network", network_path, "network description file")->required();
	compile->add_option("--chip", chip_path, "chip spec file");
	compile->add_option("-o,--out", out_path, "plan output file");
	compile->add_flag("--manual", manual, "use explicit execution annotations");
	compile->add_flag("--pow2", pow2, "round circuits per neuron to a power of two");
	compile->add_option("--split", split_specs, "per-population split override, pop=k");

	// estimate
	std::string plan_path;
	std::size_t chips = 1, batch = 100, samples_per_run = 0;
	double experiment_us = 30.0, wait_us = 50.0;
	double per_run_overhead_us = 0.0, recording_per_sample_us = 0.0;
	auto* estimate = app.add_subcommand("estimate", "estimate plan runtime");
	estimate->add_option("plan", plan_path, "plan file")->required();
	estimate->add_option("--chips", chips, "available chips");
	estimate->add_option("--batch", batch, "batch size");
	estimate->add_option("--experiment-us", experiment_us, "per-sample experiment time");
	estimate->add_option("--wait-us", wait_us, "inter-sample relaxation wait");
	estimate->add_option("--per-run-overhead-us", per_run_overhead_us, "fixed per-run cost");
	estimate->add_option(
	    "--recording-per-sample-us", recording_per_sample_us, "readout cost per sample");
	estimate->add_option("--samples-per-run", samples_per_run, "recorded samples per run");

	// encode
	std::string tensor_path, encode_out, settings_path, prefix;
	std::uint64_t seed = 0;
	auto* encode = app.add_subcommand("encode", "encode image tensors to event files");
	encode->add_option("tensor", tensor_path, "image tensor file")->required();
	encode->add_option("-o,--out", encode_out, "output directory")->required();
	encode->add_option("--settings", settings_path, "config with [encoder] section");
	encode->add_option("--prefix", prefix, "event file prefix (default: tensor stem)");
	encode->add_option("--seed", seed, "jitter seed");

	// run
	std::string run_plan, inputs_dir, run_out, mode = "partitioned";
	std::size_t run_batch = 0, workers = 1;
	std::uint64_t run_seed = 0;
	auto* run = app.add_subcommand("run", "execute a plan on input event streams");
	run->add_option("--plan", run_plan, "plan file")->required();
	run->add_option("--inputs", inputs_dir, "directory with <input>_<k>.events")->required();
	run->add_option("-o,--out", run_out, "output directory")->required();
	run->add_option("--mode", mode, "reference|partitioned|mixed")
	    ->check(CLI::IsMember({"reference", "partitioned", "mixed"}));
	run->add_option("--batch", run_batch, "limit batch entries");
	run->add_option("--workers", workers, "parallel workers per level");
	run->add_option("--seed", run_seed, "emulator seed");

	// train
	std::string train_config, images_path, labels_path, test_images_path, test_labels_path,
	    train_out = "train_out";
	std::size_t train_count = 0, test_count = 0;
	auto* train = app.add_subcommand("train", "train a model");
	train->add_option("config", train_config, "network + training config")->required();
	train->add_option("--images", images_path, "training images (IDX or tensor)")
	    ->required();
	train->add_option("--labels", labels_path, "training labels (IDX)")->required();
	train->add_option("--test-images", test_images_path, "held-out images");
	train->add_option("--test-labels", test_labels_path, "held-out labels");
	train->add_option("--train-count", train_count, "limit training samples");
	train->add_option("--test-count", test_count, "limit held-out samples");
	train->add_option("-o,--out", train_out, "output directory");

	// validate
	std::string validate_path, validate_chip;
	auto* validate = app.add_subcommand("validate", "check a network description");
	validate->add_option("network", validate_path, "network description file")->required();
	validate->add_option("--chip", validate_chip, "chip spec file");

	std::vector<char*> argv;
	std::vector<std::string> storage = args;
	storage.insert(storage.begin(), "spikepart");
	for (auto& s : storage) {
		argv.push_back(s.data());
	}
	try {
		app.parse(static_cast<int>(argv.size()), argv.data());
	} catch (CLI::CallForHelp const& e) {
		return app.exit(e);
	} catch (CLI::ParseError const& e) {
		std::cerr << e.what() << "\n" << app.help() << "\n";
		return 64;
	}

	try {
		if (compile->parsed()) {
			return cli_detail::command_compile(
			    network_path, chip_path, out_path, manual, pow2, split_specs);
		}
		if (estimate->parsed()) {
			return cli_detail::command_estimate(
			    plan_path, chips, batch, experiment_us, wait_us, per_run_overhead_us,
			    recording_per_sample_us, samples_per_run);
		}
		if (encode->parsed()) {
			return cli_detail::command_encode(
			    tensor_path, encode_out, settings_path, prefix, seed);
		}
		if (run->parsed()) {
			return cli_detail::command_run(
			    run_plan, inputs_dir, run_out, mode, run_batch, workers, run_seed);
		}
		if (train->parsed()) {
			return cli_detail::command_train(
			    train_config, images_path, labels_path, test_images_path,
			    test_labels_path, train_count, test_count, train_out);
		}
		if (validate->parsed()) {
			return cli_detail::command_validate(validate_path, validate_chip);
		}
	} catch (std::invalid_argument const& e) {
		std::cerr << "error: " << e.what() << "\n";
		return 1;
	} catch (std::exception const& e) {
		std::cerr << "error: " << e.what() << "\n";
		return 2;
	}
	return 64;
}

} // namespace spikepart
