#pragma once

#include <map>
#include <string>
#include <vector>

#include "lsc/autodiff.hpp"

// Flat parameter container: magic "LSCP", version byte, a free-form JSON meta
// string (model config preamble), then name -> shape-prefixed little-endian
// f32 arrays. Full layout documented in docs/formats.md.
namespace lsc::ckpt {

void save(const std::string& path, const std::vector<const ad::Param*>& params,
          const std::string& meta_json);

struct Loaded {
  std::string meta_json;
  std::map<std::string, Tensor> tensors;
};

Loaded load(const std::string& path);

// Copies loaded tensors into same-named parameters; every parameter must be
// present with a matching shape.
void restore(const Loaded& loaded, const std::vector<ad::Param*>& params);

}  // namespace lsc::ckpt
