// Copyright 2026 The emdistill Authors.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Plain-text model checkpoints, version 1:
//
//   emdistill-checkpoint 1
//   num_layers <int>        (one line per TransformerConfig field)
//   ...
//   params <count>
//   <name> <rank> <dim_0> ... <dim_rank-1>
//   <value> <value> ...     (C99 hexadecimal floats, row-major)
//   ...
//   end
//
// Hexadecimal floats make the round trip bit-exact.

#ifndef EMDISTILL_CHECKPOINT_HPP_
#define EMDISTILL_CHECKPOINT_HPP_

#include <filesystem>
#include <iosfwd>
#include <stdexcept>

#include "emdistill/model.hpp"

namespace emdistill {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_checkpoint(std::ostream& out, const Transformer& model);
Transformer read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path,
                     const Transformer& model);
Transformer load_checkpoint(const std::filesystem::path& path);

}  // namespace emdistill

#endif  // EMDISTILL_CHECKPOINT_HPP_
