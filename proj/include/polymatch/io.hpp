#pragma once

#include <string>

#include "polymatch/costs.hpp"
#include "polymatch/m3g.hpp"
#include "polymatch/tensor.hpp"

namespace polymatch {

/// Binary tensor format "PMT1": a one-line JSON header
///   {"magic":"PMT1","k":K,"n":N,"dtype":"f64","order":"row-major"}
/// terminated by a newline, then n^k little-endian 64-bit floats in the
/// tensor's row-major (axis 1 slowest) order. Readers validate the magic,
/// dtype, order and shape fields and the exact payload length; values must
/// be finite.
void write_tensor(const std::string& path, const DenseTensor& t);
DenseTensor read_tensor(const std::string& path);

/// Binary embedding format "PME1": a one-line JSON header
///   {"magic":"PME1","k":K,"n":N,"d":D,"dtype":"f64"}
/// + newline + k*n*d little-endian 64-bit floats in [view][point][dim]
/// order. read_embeddings additionally enforces unit-norm rows (it builds an
/// EmbeddingBatch); gradients use the same container layout without the
/// sphere constraint, so they get their own reader.
void write_embeddings(const std::string& path, const EmbeddingBatch& x);
EmbeddingBatch read_embeddings(const std::string& path);

void write_gradient(const std::string& path, const GradientBatch& g);
GradientBatch read_gradient(const std::string& path);

/// Text alternative for small tensors: nested JSON arrays, k levels deep,
/// every level of length n. The shape is inferred from the nesting on the
/// way back in.
std::string tensor_to_json(const DenseTensor& t);
DenseTensor tensor_from_json(const std::string& text);

}  // namespace polymatch
