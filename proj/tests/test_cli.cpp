#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>
#include <sstream>

#include "spikepart/cli.hpp"

using namespace spikepart;

namespace {

std::filesystem::path work_dir()
{
	auto const dir = std::filesystem::temp_directory_path() / "spikepart_cli_test";
	std::filesystem::create_directories(dir);
	return dir;
}

// stdout capture for CLI output checks.
struct CaptureStdout
{
	std::ostringstream stream;
	std::streambuf* old;
	CaptureStdout() : old(std::cout.rdbuf(stream.rdbuf())) {}
	~CaptureStdout() { std::cout.rdbuf(old); }
	std::string text() const { return stream.str(); }
};

void write_mnist_like_config(std::filesystem::path const& dir)
{
	std::mt19937_64 rng(3);
	std::normal_distribution<float> weight(0.0f, 0.05f);
	Tensor w1({784, 256}), w2({256, 10});
	for (auto& v : w1.values()) {
		v = static_cast<double>(weight(rng));
	}
	for (auto& v : w2.values()) {
		v = static_cast<double>(weight(rng));
	}
	save_tensor(dir / "w1.cspt", w1);
	save_tensor(dir / "w2.cspt", w2);
	write_text_file(
	    dir / "net.cfg",
	    "[inputs]\n"
	    "img size=784 height=28 width=28 channels=1\n"
	    "[populations]\n"
	    "hidden size=256 kind=lif tau_mem=6 tau_syn=5.7 v_leak=0 v_reset=0 v_thresh=1\n"
	    "out size=10 kind=li tau_mem=6 tau_syn=5.7 v_leak=0\n"
	    "[projections]\n"
	    "syn1 pre=img post=hidden connectivity=dense weights=@w1.cspt\n"
	    "syn2 pre=hidden post=out connectivity=dense weights=@w2.cspt\n"
	    "[emulator]\n"
	    "e dt=1 T=30\n"
	    "[encoder]\n"
	    "enc kind=linear x_min=0 x_max=1\n");
}

} // namespace

TEST_CASE("compile produces a five-execution plan for the 784-256-10 model")
{
	auto const dir = work_dir();
	write_mnist_like_config(dir);
	CaptureStdout capture;
	auto const code = run_cli(
	    {"compile", (dir / "net.cfg").string(), "--pow2", "-o",
	     (dir / "plan.cfg").string()});
	REQUIRE(code == 0);
	CHECK_THAT(capture.text(), Catch::Matchers::ContainsSubstring("executions 5"));

	auto const loaded = load_network_file(dir / "plan.cfg");
	REQUIRE(loaded.plan.has_value());
	CHECK(loaded.plan->executions.size() == 5);
}

TEST_CASE("estimate prints the 40 ms hardware minimum for the five-partition plan")
{
	auto const dir = work_dir();
	write_mnist_like_config(dir);
	REQUIRE(
	    run_cli(
	        {"compile", (dir / "net.cfg").string(), "--pow2", "-o",
	         (dir / "plan.cfg").string()}) == 0);
	CaptureStdout capture;
	auto const code = run_cli(
	    {"estimate", (dir / "plan.cfg").string(), "--chips", "1", "--batch", "100",
	     "--experiment-us", "30", "--wait-us", "50"});
	REQUIRE(code == 0);
	CHECK_THAT(capture.text(), Catch::Matchers::ContainsSubstring("realtime_per_run_us 8000"));
	CHECK_THAT(capture.text(), Catch::Matchers::ContainsSubstring("hardware_realtime_us 40000"));
}

TEST_CASE("encode then run a partitioned plan end to end")
{
	auto const dir = work_dir();
	write_mnist_like_config(dir);
	REQUIRE(
	    run_cli(
	        {"compile", (dir / "net.cfg").string(), "--pow2", "-o",
	         (dir / "plan.cfg").string()}) == 0);

	// Two 28x28 images.
	Tensor images({2, 28, 28});
	std::mt19937_64 rng(5);
	std::uniform_real_distribution<double> pixel(0.0, 1.0);
	for (auto& v : images.values()) {
		v = pixel(rng) < 0.2 ? pixel(rng) : 0.0;
	}
	save_tensor(dir / "images.cspt", images);

	CaptureStdout capture;
	REQUIRE(
	    run_cli(
	        {"encode", (dir / "images.cspt").string(), "-o", (dir / "events").string(),
	         "--settings", (dir / "net.cfg").string(), "--prefix", "img"}) == 0);
	CHECK(std::filesystem::exists(dir / "events" / "img_0.events"));
	CHECK(std::filesystem::exists(dir / "events" / "img_1.events"));

	REQUIRE(
	    run_cli(
	        {"run", "--plan", (dir / "plan.cfg").string(), "--inputs",
	         (dir / "events").string(), "-o", (dir / "results").string(), "--mode",
	         "partitioned"}) == 0);
	CHECK(std::filesystem::exists(dir / "results" / "exec0_spikes_0.events"));
	CHECK(std::filesystem::exists(dir / "results" / "exec4_traces.cspt"));
	CHECK(std::filesystem::exists(dir / "results" / "pop_out_traces.cspt"));
	CHECK(std::filesystem::exists(dir / "results" / "timing.txt"));
	CHECK(std::filesystem::exists(dir / "results" / "manifest.txt"));

	auto const traces = load_tensor(dir / "results" / "pop_out_traces.cspt");
	CHECK(traces.shape() == std::vector<std::size_t>{2, 30, 10});
}

TEST_CASE("validate: clean network exits 0, oversize recurrent network exits 1")
{
	auto const dir = work_dir();
	write_mnist_like_config(dir);
	CHECK(run_cli({"validate", (dir / "net.cfg").string()}) == 0);

	// A recurrent population too large for one chip.
	std::mt19937_64 rng(7);
	Tensor big({600, 600});
	save_tensor(dir / "wrec.cspt", big);
	write_text_file(
	    dir / "recurrent.cfg",
	    "[populations]\n"
	    "loop size=600 kind=lif v_thresh=1\n"
	    "[projections]\n"
	    "self pre=loop post=loop connectivity=dense weights=@wrec.cspt\n");
	CaptureStdout capture;
	CHECK(run_cli({"validate", (dir / "recurrent.cfg").string()}) == 1);
	CHECK_THAT(capture.text(), Catch::Matchers::ContainsSubstring("violation"));
}

TEST_CASE("usage errors exit with 64 and missing files with 2")
{
	CHECK(run_cli({"compile"}) == 64);
	CHECK(run_cli({"--bogus-flag"}) == 64);
	CHECK(run_cli({}) == 64);
	CHECK(run_cli({"validate", "/nonexistent/net.cfg"}) == 2);
}

TEST_CASE("train command writes metrics and checkpoints")
{
	auto const dir = work_dir();
	// A small two-class model and dataset.
	std::mt19937_64 rng(11);
	std::normal_distribution<float> weight(0.1f, 0.1f);
	Tensor w1({64, 16}), w2({16, 2});
	for (auto& v : w1.values()) {
		v = static_cast<double>(weight(rng));
	}
	for (auto& v : w2.values()) {
		v = static_cast<double>(weight(rng)) * 0.3;
	}
	save_tensor(dir / "tw1.cspt", w1);
	save_tensor(dir / "tw2.cspt", w2);
	write_text_file(
	    dir / "train.cfg",
	    "[inputs]\n"
	    "img size=64 height=8 width=8 channels=1\n"
	    "[populations]\n"
	    "hidden size=16 kind=lif tau_mem=6 tau_syn=5.7 v_thresh=1\n"
	    "out size=2 kind=li tau_mem=6 tau_syn=5.7\n"
	    "[projections]\n"
	    "syn1 pre=img post=hidden connectivity=dense weights=@tw1.cspt\n"
	    "syn2 pre=hidden post=out connectivity=dense weights=@tw2.cspt\n"
	    "[train]\n"
	    "t batch_size=8 learning_rate=0.01 epochs=2 alpha=10 readout_scale=1 seed=3\n"
	    "[emulator]\n"
	    "e dt=1 T=16\n"
	    "[encoder]\n"
	    "enc kind=linear x_min=0 x_max=1\n");

	// Images: class 0 bright top half, class 1 bright bottom half.
	Tensor images({16, 8, 8});
	Tensor labels({16});
	for (std::size_t k = 0; k < 16; ++k) {
		auto const cls = k % 2;
		labels[k] = static_cast<double>(cls);
		for (std::size_t y = 0; y < 4; ++y) {
			for (std::size_t x = 0; x < 8; ++x) {
				images(k, cls == 0 ? y : y + 4, x) = 0.9;
			}
		}
	}
	save_tensor(dir / "imgs.cspt", images);
	save_tensor(dir / "labels.cspt", labels);

	CaptureStdout capture;
	auto const code = run_cli(
	    {"train", (dir / "train.cfg").string(), "--images", (dir / "imgs.cspt").string(),
	     "--labels", (dir / "labels.cspt").string(), "-o", (dir / "out").string()});
	REQUIRE(code == 0);
	CHECK(std::filesystem::exists(dir / "out" / "metrics.log"));
	CHECK(std::filesystem::exists(dir / "out" / "checkpoint_best" / "syn1.cspt"));
	CHECK(std::filesystem::exists(dir / "out" / "checkpoint_best" / "syn2.cspt"));
	auto const metrics = read_text_file(dir / "out" / "metrics.log");
	CHECK_FALSE(metrics.empty());
}
