// Copyright 2026 The qsim Authors. All Rights Reserved.
//
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

// On-disk formats.
//
// Model manifest (text, one directive per line, '#' starts a comment):
//
//   qsim-manifest 1
//   model <name>
//   input <width>
//   embedding <vocab> <max_seq> <dim>
//   loss none|mse|cross_entropy
//   linear <name> <in> <out> bias|nobias
//   attention <name> <dim> <heads> causal|full
//   layernorm <name> <dim> <eps>
//   activation <name> gelu|relu|softmax
//   conv2d <name> <in_ch> <out_ch> <kernel> <stride> <padding> bias|nobias
//   flatten <name>
//   residual <name>        opens a residual body ...
//   end <name>             ... and closes it
//   param <layer>.<param> <file> <d0> <d1> ...
//
// Every parameter lives in a raw little-endian float32 blob, row-major,
// named "<layer>.<param>.bin" next to the manifest.
//
// Tensor archive (datasets): "QSIMTAR1", u32 entry count, then per entry
// u32 name length, name bytes, u32 rank, rank x u64 dims, float32 data.
// All integers little-endian.

#ifndef QSIM_IO_HPP_
#define QSIM_IO_HPP_

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "qsim/error.hpp"
#include "qsim/graph.hpp"
#include "qsim/tensor.hpp"

namespace qsim {

namespace fs = std::filesystem;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_f32(std::string& out, double v) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  double f32() { return static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(uint(4)))); }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError(what_ + ": truncated at byte " + std::to_string(pos_));
  }
  const std::string& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Raw float32 blobs

inline std::string encode_blob(const Tensor& t) {
  std::string out;
  out.reserve(t.numel() * 4);
  for (double v : t.values()) detail::put_f32(out, v);
  return out;
}

inline Tensor decode_blob(const std::string& bytes, const Shape& shape, const std::string& what) {
  const std::size_t n = shape_numel(shape);
  if (bytes.size() != 4 * n) {
    throw DataError(what + ": expected " + std::to_string(4 * n) + " bytes for shape " +
                    shape_string(shape) + ", found " + std::to_string(bytes.size()));
  }
  detail::ByteReader r(bytes, what);
  Tensor t(shape);
  for (std::size_t i = 0; i < n; ++i) t[i] = r.f32();
  return t;
}

/// Round every parameter to float32, as a save/load round trip would.
inline void round_parameters_to_f32(ModelGraph& g) {
  visit_parameters(g, [](const std::string&, Parameter& p) {
    for (auto& v : p.value.storage()) v = static_cast<double>(static_cast<float>(v));
  });
}

// ---------------------------------------------------------------------------
// Manifest

inline std::string manifest_text(const ModelGraph& g) {
  std::ostringstream out;
  out << "qsim-manifest 1\n";
  out << "model " << g.name << "\n";
  if (g.input_dim) out << "input " << g.input_dim << "\n";
  if (g.embedding) {
    out << "embedding " << g.embedding->vocab << " " << g.embedding->max_seq << " " << g.embedding->dim << "\n";
  }
  out << "loss " << to_string(g.loss) << "\n";
  std::function<void(const Layer&)> emit = [&](const Layer& l) {
    switch (l.kind) {
      case LayerKind::Linear:
        out << "linear " << l.name << " " << l.in_features << " " << l.out_features << " "
            << (l.bias ? "bias" : "nobias") << "\n";
        break;
      case LayerKind::Attention:
        out << "attention " << l.name << " " << l.in_features << " " << l.heads << " "
            << (l.causal ? "causal" : "full") << "\n";
        break;
      case LayerKind::LayerNorm:
        out << "layernorm " << l.name << " " << l.in_features << " " << format_double(l.eps) << "\n";
        break;
      case LayerKind::Activation:
        out << "activation " << l.name << " " << to_string(l.activation) << "\n";
        break;
      case LayerKind::Conv2d:
        out << "conv2d " << l.name << " " << l.in_features << " " << l.out_features << " " << l.kernel
            << " " << l.stride << " " << l.padding << " " << (l.bias ? "bias" : "nobias") << "\n";
        break;
      case LayerKind::Flatten:
        out << "flatten " << l.name << "\n";
        break;
      case LayerKind::Residual:
        out << "residual " << l.name << "\n";
        for (const auto& c : l.children) emit(c);
        out << "end " << l.name << "\n";
        break;
    }
  };
  for (const auto& l : g.layers) emit(l);
  visit_parameters(g, [&](const std::string& name, const Parameter& p) {
    out << "param " << name << " " << name << ".bin";
    for (auto d : p.value.shape()) out << " " << d;
    out << "\n";
  });
  return out.str();
}

/// Write `<dir>/model.manifest` and one blob per parameter.
inline fs::path save_model(const ModelGraph& g, const fs::path& dir) {
  fs::create_directories(dir);
  const fs::path manifest = dir / "model.manifest";
  write_file(manifest, manifest_text(g));
  visit_parameters(g, [&](const std::string& name, const Parameter& p) {
    write_file(dir / (name + ".bin"), encode_blob(p.value));
  });
  return manifest;
}

namespace detail {

inline std::size_t parse_size(const std::string& tok, const std::string& where) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(tok, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used != tok.size() || tok.empty() || tok[0] == '-') {
    throw DataError(where + ": expected a non-negative integer, found '" + tok + "'");
  }
  return static_cast<std::size_t>(v);
}

inline bool parse_flag(const std::string& tok, const char* yes, const char* no, const std::string& where) {
  if (tok == yes) return true;
  if (tok == no) return false;
  throw DataError(where + ": expected " + yes + " or " + no + ", found '" + tok + "'");
}

}  // namespace detail

/// Parse a manifest. Parameter blobs are read from `blob_dir`; pass an empty
/// path to skip loading (parameters stay zero-initialized).
inline ModelGraph parse_manifest(const std::string& text, const fs::path& blob_dir) {
  ModelGraph g;
  std::vector<std::vector<Layer>*> stack{&g.layers};
  std::vector<std::string> open;
  struct ParamLine {
    std::string name, file;
    Shape shape;
    std::size_t line;
  };
  std::vector<ParamLine> params;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    const std::string where = "manifest line " + std::to_string(lineno);
    auto need = [&](std::size_t n) {
      if (tok.size() != n) {
        throw DataError(where + ": '" + tok[0] + "' takes " + std::to_string(n - 1) + " fields, found " +
                        std::to_string(tok.size() - 1));
      }
    };
    auto num = [&](std::size_t i) { return detail::parse_size(tok[i], where); };
    const std::string& d = tok[0];
    if (!saw_header) {
      if (d != "qsim-manifest" || tok.size() != 2 || tok[1] != "1") {
        throw DataError(where + ": expected 'qsim-manifest 1' header");
      }
      saw_header = true;
      continue;
    }
    try {
      if (d == "model") {
        need(2);
        g.name = tok[1];
      } else if (d == "input") {
        need(2);
        g.input_dim = num(1);
      } else if (d == "embedding") {
        need(4);
        g.embedding = make_embedding(num(1), num(2), num(3));
      } else if (d == "loss") {
        need(2);
        g.loss = parse_loss(tok[1]);
      } else if (d == "linear") {
        need(5);
        stack.back()->push_back(make_linear(tok[1], num(2), num(3), detail::parse_flag(tok[4], "bias", "nobias", where)));
      } else if (d == "attention") {
        need(5);
        stack.back()->push_back(make_attention(tok[1], num(2), num(3), detail::parse_flag(tok[4], "causal", "full", where)));
      } else if (d == "layernorm") {
        need(4);
        stack.back()->push_back(make_layernorm(tok[1], num(2), std::stod(tok[3])));
      } else if (d == "activation") {
        need(3);
        stack.back()->push_back(make_activation(tok[1], parse_activation(tok[2])));
      } else if (d == "conv2d") {
        need(8);
        stack.back()->push_back(make_conv2d(tok[1], num(2), num(3), num(4), num(5), num(6),
                                            detail::parse_flag(tok[7], "bias", "nobias", where)));
      } else if (d == "flatten") {
        need(2);
        stack.back()->push_back(make_flatten(tok[1]));
      } else if (d == "residual") {
        need(2);
        stack.back()->push_back(make_residual(tok[1], {}));
        stack.push_back(&stack.back()->back().children);
        open.push_back(tok[1]);
      } else if (d == "end") {
        need(2);
        if (open.empty() || open.back() != tok[1]) throw DataError(where + ": unmatched 'end " + tok[1] + "'");
        open.pop_back();
        stack.pop_back();
      } else if (d == "param") {
        if (tok.size() < 3) throw DataError(where + ": 'param' needs a name and a file");
        Shape shape;
        for (std::size_t i = 3; i < tok.size(); ++i) shape.push_back(num(i));
        params.push_back({tok[1], tok[2], shape, lineno});
      } else {
        throw DataError(where + ": unknown directive '" + d + "'");
      }
    } catch (const DataError&) {
      throw;
    } catch (const Error& e) {
      throw DataError(where + ": " + e.what());
    } catch (const std::logic_error&) {
      throw DataError(where + ": malformed number");
    }
  }
  if (!saw_header) throw DataError("manifest is empty");
  if (!open.empty()) throw DataError("manifest: residual '" + open.back() + "' is never closed");

  std::set<std::string> names;
  visit_layers(g, [&](const Layer& l) {
    if (!names.insert(l.name).second) throw DataError("manifest: duplicate layer name " + l.name);
  });

  std::map<std::string, Parameter*> slots;
  visit_parameters(g, [&](const std::string& name, Parameter& p) { slots[name] = &p; });
  std::set<std::string> loaded;
  for (const auto& pl : params) {
    const std::string where = "manifest line " + std::to_string(pl.line);
    auto it = slots.find(pl.name);
    if (it == slots.end()) throw DataError(where + ": no parameter named " + pl.name);
    if (pl.shape != it->second->value.shape()) {
      throw DataError(where + ": " + pl.name + " declared " + shape_string(pl.shape) + ", layer needs " +
                      shape_string(it->second->value.shape()));
    }
    if (!loaded.insert(pl.name).second) throw DataError(where + ": " + pl.name + " listed twice");
    if (!blob_dir.empty()) {
      it->second->value = decode_blob(read_file(blob_dir / pl.file), pl.shape, pl.file);
      if (!it->second->value.all_finite()) throw DataError(pl.file + ": non-finite parameter values");
    }
  }
  if (!blob_dir.empty()) {
    for (const auto& [name, p] : slots) {
      if (!loaded.count(name)) throw DataError("manifest does not list parameter " + name);
    }
  }
  zero_grad(g);
  return g;
}

inline ModelGraph load_model(const fs::path& manifest) {
  return parse_manifest(read_file(manifest), manifest.parent_path().empty() ? fs::path(".") : manifest.parent_path());
}

// ---------------------------------------------------------------------------
// Tensor archives

using TensorArchive = std::map<std::string, Tensor>;

inline std::string encode_archive(const TensorArchive& a) {
  std::string out = "QSIMTAR1";
  detail::put_u32(out, static_cast<std::uint32_t>(a.size()));
  for (const auto& [name, t] : a) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put_u64(out, d);
    out += encode_blob(t);
  }
  return out;
}

inline TensorArchive decode_archive(const std::string& bytes, const std::string& what) {
  detail::ByteReader r(bytes, what);
  if (r.str(8) != "QSIMTAR1") throw DataError(what + ": not a qsim tensor archive");
  const auto count = r.uint(4);
  TensorArchive a;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.str(static_cast<std::size_t>(r.uint(4)));
    const auto rank = r.uint(4);
    if (rank > 8) throw DataError(what + ": entry " + name + " has implausible rank " + std::to_string(rank));
    Shape shape;
    for (std::uint64_t k = 0; k < rank; ++k) shape.push_back(static_cast<std::size_t>(r.uint(8)));
    const std::size_t n = shape_numel(shape);
    if (n > r.remaining() / 4) throw DataError(what + ": entry " + name + " is truncated");
    Tensor t(shape);
    for (std::size_t k = 0; k < n; ++k) t[k] = r.f32();
    if (!a.emplace(name, std::move(t)).second) throw DataError(what + ": duplicate entry " + name);
  }
  if (!r.done()) throw DataError(what + ": trailing bytes");
  return a;
}

inline void save_archive(const TensorArchive& a, const fs::path& path) { write_file(path, encode_archive(a)); }

inline TensorArchive load_archive(const fs::path& path) { return decode_archive(read_file(path), path.string()); }

inline const Tensor& archive_entry(const TensorArchive& a, const std::string& name) {
  auto it = a.find(name);
  if (it == a.end()) throw DataError("dataset has no entry '" + name + "'");
  return it->second;
}

/// Split the leading axis of `t` into batches of at most `batch` rows.
inline std::vector<Tensor> split_batches(const Tensor& t, std::size_t batch) {
  std::vector<Tensor> out;
  if (t.rank() == 0 || t.dim(0) == 0) return out;
  const std::size_t rows = t.dim(0), stride = t.numel() / rows;
  batch = std::max<std::size_t>(batch, 1);
  for (std::size_t r = 0; r < rows; r += batch) {
    const std::size_t n = std::min(batch, rows - r);
    Shape s = t.shape();
    s[0] = n;
    std::vector<double> data(t.values().begin() + static_cast<std::ptrdiff_t>(r * stride),
                             t.values().begin() + static_cast<std::ptrdiff_t>((r + n) * stride));
    out.emplace_back(s, std::move(data));
  }
  return out;
}

}  // namespace qsim

#endif  // QSIM_IO_HPP_
