#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace spikepart {

// Dense row-major tensor of doubles. Small utility type; not a linear-algebra
// library, just indexed storage for weights, images and recorded traces.
class Tensor
{
public:
	Tensor() = default;

	explicit Tensor(std::vector<std::size_t> shape) : m_shape(std::move(shape))
	{
		m_data.assign(element_count(m_shape), 0.0);
	}

	Tensor(std::vector<std::size_t> shape, std::vector<double> data) :
	    m_shape(std::move(shape)), m_data(std::move(data))
	{
		if (m_data.size() != element_count(m_shape)) {
			throw std::invalid_argument(
			    "Tensor: data size " + std::to_string(m_data.size()) +
			    " does not match shape (" + std::to_string(element_count(m_shape)) +
			    " elements).");
		}
	}

	static Tensor zeros(std::initializer_list<std::size_t> shape)
	{
		return Tensor(std::vector<std::size_t>(shape));
	}

	std::size_t rank() const { return m_shape.size(); }
	std::size_t size() const { return m_data.size(); }
	std::vector<std::size_t> const& shape() const { return m_shape; }
	std::size_t dim(std::size_t i) const { return m_shape.at(i); }

	double* data() { return m_data.data(); }
	double const* data() const { return m_data.data(); }
	std::vector<double>& values() { return m_data; }
	std::vector<double> const& values() const { return m_data; }

	double& operator[](std::size_t flat) { return m_data[flat]; }
	double operator[](std::size_t flat) const { return m_data[flat]; }

	double& operator()(std::size_t i, std::size_t j)
	{
		return m_data[i * m_shape[1] + j];
	}
	double operator()(std::size_t i, std::size_t j) const
	{
		return m_data[i * m_shape[1] + j];
	}
	double& operator()(std::size_t i, std::size_t j, std::size_t k)
	{
		return m_data[(i * m_shape[1] + j) * m_shape[2] + k];
	}
	double operator()(std::size_t i, std::size_t j, std::size_t k) const
	{
		return m_data[(i * m_shape[1] + j) * m_shape[2] + k];
	}

	bool operator==(Tensor const& other) const
	{
		return m_shape == other.m_shape && m_data == other.m_data;
	}

	static std::size_t element_count(std::vector<std::size_t> const& shape)
	{
		std::size_t n = 1;
		for (auto d : shape) {
			n *= d;
		}
		return shape.empty() ? 0 : n;
	}

private:
	std::vector<std::size_t> m_shape;
	std::vector<double> m_data;
};

} // namespace spikepart
