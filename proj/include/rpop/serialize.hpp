#pragma once

#include <string>

#include "rpop/tokenizer.hpp"
#include "rpop/world_model.hpp"

namespace rpop {

// Flat binary model format "RPOPv1": the magic string, a little-endian u32
// header (layers, heads, d_model, d_ffn, K, N, |A|), then float64 matrices in
// declaration order. A bundle file appends a u32 sub-header (d_embed,
// reward_dim, blocks_per_chunk, context_blocks) and the embedding tables and
// heads after the stack section.

void save_stack(const std::string& path, const StackParams<double>& stack);
StackParams<double> load_stack(const std::string& path);

void save_bundle(const std::string& path, const WorldModel<double>& model);
WorldModel<double> load_bundle(const std::string& path);

// Standalone codebook dump (".codebook.f64"): u32 N, u32 d_embed, raw rows.
void save_codebook(const std::string& path, const Codebook& cb);
Codebook load_codebook(const std::string& path);

}  // namespace rpop
