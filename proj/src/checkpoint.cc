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

#include "emdistill/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

namespace emdistill {
namespace {

constexpr const char* kMagic = "emdistill-checkpoint";
constexpr int kVersion = 1;

std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

template <typename T>
T expect_field(std::istream& in, const std::string& key) {
  std::string got;
  T value{};
  if (!(in >> got) || got != key || !(in >> value)) {
    throw CheckpointError("checkpoint: expected field '" + key + "'");
  }
  return value;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Transformer& model) {
  const TransformerConfig& c = model.config();
  out << kMagic << ' ' << kVersion << '\n'
      << "num_layers " << c.num_layers << '\n'
      << "num_heads " << c.num_heads << '\n'
      << "hidden_size " << c.hidden_size << '\n'
      << "ff_size " << c.ff_size << '\n'
      << "vocab_size " << c.vocab_size << '\n'
      << "max_seq_len " << c.max_seq_len << '\n'
      << "num_classes " << c.num_classes << '\n'
      << "seed " << c.seed << '\n'
      << "params " << model.parameters().size() << '\n';
  for (const Parameter& p : model.parameters()) {
    const Shape& s = p.tensor.shape();
    out << p.name << ' ' << s.size();
    for (Index d : s) out << ' ' << d;
    out << '\n';
    const Vector& v = p.tensor.data();
    for (Index i = 0; i < v.size(); ++i) {
      out << (i ? " " : "") << hex(v[i]);
    }
    out << '\n';
  }
  out << "end\n";
}

Transformer read_checkpoint(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kMagic) {
    throw CheckpointError("not an emdistill checkpoint");
  }
  if (version != kVersion) {
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  }
  TransformerConfig c;
  c.num_layers = expect_field<int>(in, "num_layers");
  c.num_heads = expect_field<int>(in, "num_heads");
  c.hidden_size = expect_field<int>(in, "hidden_size");
  c.ff_size = expect_field<int>(in, "ff_size");
  c.vocab_size = expect_field<int>(in, "vocab_size");
  c.max_seq_len = expect_field<int>(in, "max_seq_len");
  c.num_classes = expect_field<int>(in, "num_classes");
  c.seed = expect_field<std::uint64_t>(in, "seed");
  const auto count = expect_field<std::size_t>(in, "params");

  Transformer model(c);
  if (count != model.parameters().size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(count) +
                          " parameters, config implies " +
                          std::to_string(model.parameters().size()));
  }
  for (std::size_t k = 0; k < count; ++k) {
    std::string name;
    std::size_t rank = 0;
    if (!(in >> name >> rank)) throw CheckpointError("truncated checkpoint");
    Shape shape(rank);
    for (Index& d : shape) {
      if (!(in >> d)) throw CheckpointError("truncated shape for " + name);
    }
    Parameter* found = nullptr;
    for (Parameter& q : model.parameters()) {
      if (q.name == name) found = &q;
    }
    if (found == nullptr) throw CheckpointError("unknown parameter " + name);
    Parameter& p = *found;
    if (p.tensor.shape() != shape) {
      throw CheckpointError("parameter " + name + " has shape " +
                            to_string(shape) + ", expected " +
                            to_string(p.tensor.shape()));
    }
    Vector& v = p.tensor.mutable_data();
    std::string token;
    for (Index i = 0; i < v.size(); ++i) {
      if (!(in >> token)) throw CheckpointError("truncated values for " + name);
      char* end = nullptr;
      v[i] = std::strtod(token.c_str(), &end);
      if (end == token.c_str() || *end != '\0') {
        throw CheckpointError("bad value '" + token + "' in " + name);
      }
    }
  }
  std::string tail;
  if (!(in >> tail) || tail != "end") {
    throw CheckpointError("checkpoint missing end marker");
  }
  return model;
}

void save_checkpoint(const std::filesystem::path& path,
                     const Transformer& model) {
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write " + path.string());
  write_checkpoint(out, model);
  if (!out) throw CheckpointError("failed writing " + path.string());
}

Transformer load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace emdistill
