#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "flowrecon/params.hpp"
#include "flowrecon/tensor.hpp"

namespace flowrecon {

// Binary tensor file: magic "FRT1", u8 dtype (0=f32, 1=f64), u8 rank,
// rank x u32 extents, then little-endian row-major values.
void write_tensor(const std::string& path, const Tensor& t);
Tensor read_tensor(const std::string& path);

// Archive of named FRT1 entries ("FRA1" container) plus ordered
// key/value metadata; a text manifest (name, shape, dtype per line and
// the metadata) is written next to the archive as `path + ".txt"`.
struct Checkpoint {
    std::map<std::string, Tensor> tensors;
    std::vector<std::pair<std::string, std::string>> meta;

    const std::string* find_meta(const std::string& key) const;
    void set_meta(const std::string& key, const std::string& value);
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Parameter/optimizer state <-> checkpoint entries. Optimizer moments
// are stored under "opt.m1/" and "opt.m2/" prefixes; the Adam timestep
// under meta key "adam.step".
void store_params(Checkpoint& ck, const ParameterStore& params, bool with_optimizer_state);
void restore_params(const Checkpoint& ck, ParameterStore& params);

// 8-bit PGM preview, per-image min-max scaled; the applied scaling is
// recorded in `path + ".txt"`.
void write_pgm(const std::string& path, const Tensor& image);

void write_text(const std::string& path, const std::string& content);

// CSV with one header row; every row must match the header arity.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

std::string format_double(double v);  // round-trip-exact, "inf" for infinities

}  // namespace flowrecon
