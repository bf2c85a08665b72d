#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spikepart/event.hpp"
#include "spikepart/tensor.hpp"

namespace spikepart {

// ---------------------------------------------------------------------------
// Binary tensor file: magic "CSPT", u32 rank, u32 dims..., then float32
// little-endian row-major payload (16-byte header for the rank-2 case).

inline void save_tensor(std::filesystem::path const& path, Tensor const& tensor)
{
	std::ofstream out(path, std::ios::binary);
	if (!out) {
		throw std::runtime_error("save_tensor: cannot open '" + path.string() + "'.");
	}
	out.write("CSPT", 4);
	auto write_u32 = [&](std::uint32_t v) {
		std::array<char, 4> b{
		    static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
		    static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
		out.write(b.data(), 4);
	};
	write_u32(static_cast<std::uint32_t>(tensor.rank()));
	for (auto const d : tensor.shape()) {
		write_u32(static_cast<std::uint32_t>(d));
	}
	for (std::size_t i = 0; i < tensor.size(); ++i) {
		auto const f = static_cast<float>(tensor[i]);
		std::uint32_t bits;
		std::memcpy(&bits, &f, 4);
		write_u32(bits);
	}
	if (!out) {
		throw std::runtime_error("save_tensor: write failed on '" + path.string() + "'.");
	}
}

inline Tensor load_tensor(std::filesystem::path const& path)
{
	std::ifstream in(path, std::ios::binary);
	if (!in) {
		throw std::runtime_error("load_tensor: cannot open '" + path.string() + "'.");
	}
	char magic[4];
	in.read(magic, 4);
	if (!in || std::memcmp(magic, "CSPT", 4) != 0) {
		throw std::runtime_error("load_tensor: bad magic in '" + path.string() + "'.");
	}
	auto read_u32 = [&]() {
		std::array<unsigned char, 4> b{};
		in.read(reinterpret_cast<char*>(b.data()), 4);
		if (!in) {
			throw std::runtime_error(
			    "load_tensor: truncated file '" + path.string() + "'.");
		}
		return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
		       (static_cast<std::uint32_t>(b[2]) << 16) |
		       (static_cast<std::uint32_t>(b[3]) << 24);
	};
	auto const rank = read_u32();
	if (rank > 8) {
		throw std::runtime_error("load_tensor: implausible rank in '" + path.string() + "'.");
	}
	std::vector<std::size_t> shape;
	for (std::uint32_t i = 0; i < rank; ++i) {
		shape.push_back(read_u32());
	}
	Tensor tensor(shape);
	for (std::size_t i = 0; i < tensor.size(); ++i) {
		auto const bits = read_u32();
		float f;
		std::memcpy(&f, &bits, 4);
		tensor[i] = static_cast<double>(f);
	}
	return tensor;
}

// ---------------------------------------------------------------------------
// Event file: line-oriented text, header "#duration_us <N>", one event per
// line as "<t_us>\t<id>". Times print with 17 significant digits so replay is
// bit-exact.

inline void save_events(std::filesystem::path const& path, EventStream const& stream)
{
	std::ofstream out(path);
	if (!out) {
		throw std::runtime_error("save_events: cannot open '" + path.string() + "'.");
	}
	char buf[64];
	std::snprintf(buf, sizeof(buf), "%.17g", stream.duration_us);
	out << "#duration_us " << buf << "\n";
	for (auto const& ev : stream.events) {
		std::snprintf(buf, sizeof(buf), "%.17g", ev.time_us);
		out << buf << "\t" << ev.id << "\n";
	}
}

inline EventStream load_events(std::filesystem::path const& path)
{
	std::ifstream in(path);
	if (!in) {
		throw std::runtime_error("load_events: cannot open '" + path.string() + "'.");
	}
	EventStream stream;
	std::string line;
	bool have_header = false;
	std::size_t line_no = 0;
	while (std::getline(in, line)) {
		++line_no;
		if (line.empty()) {
			continue;
		}
		if (line[0] == '#') {
			std::istringstream header(line.substr(1));
			std::string key;
			header >> key >> stream.duration_us;
			if (key != "duration_us" || !header) {
				throw std::runtime_error(
				    "load_events: bad header in '" + path.string() + "'.");
			}
			have_header = true;
			continue;
		}
		std::istringstream fields(line);
		SpikeEvent ev;
		fields >> ev.time_us >> ev.id;
		if (!fields) {
			throw std::runtime_error(
			    "load_events: parse error at line " + std::to_string(line_no) + " of '" +
			    path.string() + "'.");
		}
		stream.events.push_back(ev);
	}
	if (!have_header) {
		throw std::runtime_error("load_events: missing header in '" + path.string() + "'.");
	}
	stream.sort();
	return stream;
}

// ---------------------------------------------------------------------------
// IDX files (big-endian dimensions). With normalize, unsigned byte data is
// scaled to [0, 1]; label files should load with normalize = false.

inline Tensor load_idx(std::filesystem::path const& path, bool normalize = true)
{
	std::ifstream in(path, std::ios::binary);
	if (!in) {
		throw std::runtime_error("load_idx: cannot open '" + path.string() + "'.");
	}
	std::size_t offset = 0;
	auto read_bytes = [&](char* dst, std::size_t n) {
		in.read(dst, static_cast<std::streamsize>(n));
		if (static_cast<std::size_t>(in.gcount()) != n) {
			throw std::runtime_error(
			    "load_idx: truncated file '" + path.string() + "' at byte offset " +
			    std::to_string(offset + static_cast<std::size_t>(in.gcount())) + ".");
		}
		offset += n;
	};
	unsigned char magic[4];
	read_bytes(reinterpret_cast<char*>(magic), 4);
	if (magic[0] != 0 || magic[1] != 0) {
		throw std::runtime_error("load_idx: bad magic in '" + path.string() + "'.");
	}
	auto const dtype = magic[2];
	auto const ndim = magic[3];
	std::vector<std::size_t> shape;
	std::size_t count = 1;
	for (unsigned d = 0; d < ndim; ++d) {
		unsigned char b[4];
		read_bytes(reinterpret_cast<char*>(b), 4);
		std::size_t const dim = (static_cast<std::size_t>(b[0]) << 24) |
		                        (static_cast<std::size_t>(b[1]) << 16) |
		                        (static_cast<std::size_t>(b[2]) << 8) |
		                        static_cast<std::size_t>(b[3]);
		shape.push_back(dim);
		count *= dim;
	}
	Tensor tensor(shape);
	if (dtype == 0x08) { // unsigned byte
		std::vector<unsigned char> raw(count);
		read_bytes(reinterpret_cast<char*>(raw.data()), count);
		for (std::size_t i = 0; i < count; ++i) {
			tensor[i] = normalize ? static_cast<double>(raw[i]) / 255.0
			                      : static_cast<double>(raw[i]);
		}
	} else if (dtype == 0x0d) { // float32 big-endian
		for (std::size_t i = 0; i < count; ++i) {
			unsigned char b[4];
			read_bytes(reinterpret_cast<char*>(b), 4);
			std::uint32_t const bits = (static_cast<std::uint32_t>(b[0]) << 24) |
			                           (static_cast<std::uint32_t>(b[1]) << 16) |
			                           (static_cast<std::uint32_t>(b[2]) << 8) |
			                           static_cast<std::uint32_t>(b[3]);
			float f;
			std::memcpy(&f, &bits, 4);
			tensor[i] = static_cast<double>(f);
		}
	} else {
		throw std::runtime_error(
		    "load_idx: unsupported data type 0x" + std::to_string(dtype) + " in '" +
		    path.string() + "'.");
	}
	return tensor;
}

// ---------------------------------------------------------------------------
// Dataset split: deterministic shuffled split into train/val/test index
// lists; disjoint and covering.

struct DatasetSplit
{
	std::vector<std::size_t> train;
	std::vector<std::size_t> val;
	std::vector<std::size_t> test;
};

inline DatasetSplit split_dataset(
    std::size_t count, std::array<double, 3> const& ratios, std::uint64_t seed)
{
	double const sum = ratios[0] + ratios[1] + ratios[2];
	if (std::abs(sum - 1.0) > 1e-9 || ratios[0] < 0.0 || ratios[1] < 0.0 || ratios[2] < 0.0) {
		throw std::invalid_argument("split_dataset: ratios must be >= 0 and sum to 1.");
	}
	std::vector<std::size_t> indices(count);
	std::iota(indices.begin(), indices.end(), 0);
	std::mt19937_64 rng(seed);
	std::shuffle(indices.begin(), indices.end(), rng);
	auto const n_train = static_cast<std::size_t>(std::llround(ratios[0] * count));
	auto const n_val = std::min(
	    count - n_train, static_cast<std::size_t>(std::llround(ratios[1] * count)));
	DatasetSplit split;
	split.train.assign(indices.begin(), indices.begin() + n_train);
	split.val.assign(indices.begin() + n_train, indices.begin() + n_train + n_val);
	split.test.assign(indices.begin() + n_train + n_val, indices.end());
	return split;
}

// ---------------------------------------------------------------------------
// Run manifest: inputs are hashed before the run.

inline std::uint64_t fnv1a_file(std::filesystem::path const& path)
{
	std::ifstream in(path, std::ios::binary);
	if (!in) {
		throw std::runtime_error("fnv1a_file: cannot open '" + path.string() + "'.");
	}
	std::uint64_t h = 0xcbf29ce484222325ull;
	char buf[4096];
	while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
		for (std::streamsize i = 0; i < in.gcount(); ++i) {
			h = (h ^ static_cast<unsigned char>(buf[i])) * 0x100000001b3ull;
		}
	}
	return h;
}

struct RunManifest
{
	std::string plan_path;
	std::string config_snapshot;
	std::vector<std::pair<std::string, std::uint64_t>> input_hashes;
	std::vector<std::string> output_paths;
	std::vector<std::pair<std::string, double>> timing;
};

inline void save_manifest(std::filesystem::path const& path, RunManifest const& manifest)
{
	std::ofstream out(path);
	if (!out) {
		throw std::runtime_error("save_manifest: cannot open '" + path.string() + "'.");
	}
	out << "plan " << manifest.plan_path << "\n";
	for (auto const& [name, hash] : manifest.input_hashes) {
		char buf[32];
		std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
		out << "input " << name << " " << buf << "\n";
	}
	for (auto const& p : manifest.output_paths) {
		out << "output " << p << "\n";
	}
	for (auto const& [key, value] : manifest.timing) {
		out << key << " " << value << "\n";
	}
	if (!manifest.config_snapshot.empty()) {
		out << "config_begin\n" << manifest.config_snapshot << "config_end\n";
	}
}

// ---------------------------------------------------------------------------
// Image augmentation used by the training pipeline.

// Rotates an [H, W] or [H, W, C] image around its center by `degrees`,
// sampling bilinearly; out-of-range samples are zero.
inline Tensor rotate_bilinear(Tensor const& image, double degrees)
{
	auto const h = image.dim(0);
	auto const w = image.dim(1);
	auto const channels = image.rank() == 3 ? image.dim(2) : 1;
	Tensor out(image.shape());
	double const rad = degrees * std::acos(-1.0) / 180.0;
	double const cy = (static_cast<double>(h) - 1.0) / 2.0;
	double const cx = (static_cast<double>(w) - 1.0) / 2.0;
	double const c = std::cos(rad);
	double const s = std::sin(rad);
	auto at = [&](std::size_t y, std::size_t x, std::size_t ch) {
		return image.rank() == 3 ? image(y, x, ch) : image(y, x);
	};
	for (std::size_t y = 0; y < h; ++y) {
		for (std::size_t x = 0; x < w; ++x) {
			// Inverse mapping.
			double const dy = static_cast<double>(y) - cy;
			double const dx = static_cast<double>(x) - cx;
			double const sy = c * dy + s * dx + cy;
			double const sx = -s * dy + c * dx + cx;
			auto const y0 = static_cast<std::int64_t>(std::floor(sy));
			auto const x0 = static_cast<std::int64_t>(std::floor(sx));
			double const fy = sy - static_cast<double>(y0);
			double const fx = sx - static_cast<double>(x0);
			for (std::size_t ch = 0; ch < channels; ++ch) {
				auto sample = [&](std::int64_t yy, std::int64_t xx) {
					if (yy < 0 || xx < 0 || yy >= static_cast<std::int64_t>(h) ||
					    xx >= static_cast<std::int64_t>(w)) {
						return 0.0;
					}
					return at(
					    static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), ch);
				};
				double const value = (1 - fy) * ((1 - fx) * sample(y0, x0) +
				                                 fx * sample(y0, x0 + 1)) +
				                     fy * ((1 - fx) * sample(y0 + 1, x0) +
				                           fx * sample(y0 + 1, x0 + 1));
				if (image.rank() == 3) {
					out(y, x, ch) = value;
				} else {
					out(y, x) = value;
				}
			}
		}
	}
	return out;
}

inline Tensor flip_horizontal(Tensor const& image)
{
	auto const h = image.dim(0);
	auto const w = image.dim(1);
	auto const channels = image.rank() == 3 ? image.dim(2) : 1;
	Tensor out(image.shape());
	for (std::size_t y = 0; y < h; ++y) {
		for (std::size_t x = 0; x < w; ++x) {
			for (std::size_t ch = 0; ch < channels; ++ch) {
				if (image.rank() == 3) {
					out(y, x, ch) = image(y, w - 1 - x, ch);
				} else {
					out(y, x) = image(y, w - 1 - x);
				}
			}
		}
	}
	return out;
}

inline Tensor flip_vertical(Tensor const& image)
{
	auto const h = image.dim(0);
	Tensor out(image.shape());
	auto const row = image.size() / h;
	for (std::size_t y = 0; y < h; ++y) {
		std::copy(
		    image.data() + (h - 1 - y) * row, image.data() + (h - y) * row,
		    out.data() + y * row);
	}
	return out;
}

// Min-max normalization to [0, 1]; constant images map to zero.
inline Tensor normalize_01(Tensor const& image)
{
	double lo = image[0], hi = image[0];
	for (std::size_t i = 0; i < image.size(); ++i) {
		lo = std::min(lo, image[i]);
		hi = std::max(hi, image[i]);
	}
	Tensor out(image.shape());
	if (hi - lo < 1e-12) {
		return out;
	}
	for (std::size_t i = 0; i < image.size(); ++i) {
		out[i] = (image[i] - lo) / (hi - lo);
	}
	return out;
}

struct AugmentConfig
{
	double rotate_deg = 0.0;
	double rotate_prob = 0.0;
	double hflip_prob = 0.0;
	double vflip_prob = 0.0;
	bool normalize = false;
};

inline Tensor augment_image(Tensor const& image, AugmentConfig const& cfg, std::uint64_t seed)
{
	std::mt19937_64 rng(seed);
	std::uniform_real_distribution<double> uniform(0.0, 1.0);
	Tensor out = image;
	if (cfg.rotate_prob > 0.0 && uniform(rng) < cfg.rotate_prob) {
		std::uniform_real_distribution<double> angle(-cfg.rotate_deg, cfg.rotate_deg);
		out = rotate_bilinear(out, angle(rng));
	}
	if (cfg.hflip_prob > 0.0 && uniform(rng) < cfg.hflip_prob) {
		out = flip_horizontal(out);
	}
	if (cfg.vflip_prob > 0.0 && uniform(rng) < cfg.vflip_prob) {
		out = flip_vertical(out);
	}
	if (cfg.normalize) {
		out = normalize_01(out);
	}
	return out;
}

} // namespace spikepart
