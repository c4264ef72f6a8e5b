#include "lmaug/neural/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "lmaug/error.hpp"
#include "lmaug/random.hpp"

namespace lmaug::nn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void TransformerConfig::validate() const {
  if (n_blocks <= 0 || n_heads <= 0 || d_model <= 0 || d_ff <= 0 || max_seq_len <= 0 ||
      vocab_size <= 0) {
    throw Error("transformer config: all dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw Error("transformer config: d_model (" + std::to_string(d_model) +
                ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw Error("transformer config: dropout_rate must be in [0, 1)");
  }
}

std::string TransformerConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "n_blocks=" << n_blocks << "\n"
     << "n_heads=" << n_heads << "\n"
     << "d_model=" << d_model << "\n"
     << "d_ff=" << d_ff << "\n"
     << "max_seq_len=" << max_seq_len << "\n"
     << "vocab_size=" << vocab_size << "\n"
     << "dropout_rate=" << dropout_rate << "\n"
     << "tie_embeddings=" << (tie_embeddings ? 1 : 0) << "\n";
  return os.str();
}

TransformerConfig TransformerConfig::from_text(const std::string& text) {
  TransformerConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("config line without '=': " + line);
    const auto key = line.substr(0, eq);
    const auto val = line.substr(eq + 1);
    try {
      if (key == "n_blocks") c.n_blocks = std::stoi(val);
      else if (key == "n_heads") c.n_heads = std::stoi(val);
      else if (key == "d_model") c.d_model = std::stoi(val);
      else if (key == "d_ff") c.d_ff = std::stoi(val);
      else if (key == "max_seq_len") c.max_seq_len = std::stoi(val);
      else if (key == "vocab_size") c.vocab_size = std::stoi(val);
      else if (key == "dropout_rate") c.dropout_rate = std::stod(val);
      else if (key == "tie_embeddings") c.tie_embeddings = std::stoi(val) != 0;
      else throw Error("unknown config key: " + key);
    } catch (const std::invalid_argument&) {
      throw Error("non-numeric config value for " + key);
    }
  }
  return c;
}

std::vector<std::string> TransformerConfig::diff(const TransformerConfig& o) const {
  std::vector<std::string> d;
  if (n_blocks != o.n_blocks) d.push_back("n_blocks");
  if (n_heads != o.n_heads) d.push_back("n_heads");
  if (d_model != o.d_model) d.push_back("d_model");
  if (d_ff != o.d_ff) d.push_back("d_ff");
  if (max_seq_len != o.max_seq_len) d.push_back("max_seq_len");
  if (vocab_size != o.vocab_size) d.push_back("vocab_size");
  if (dropout_rate != o.dropout_rate) d.push_back("dropout_rate");
  if (tie_embeddings != o.tie_embeddings) d.push_back("tie_embeddings");
  return d;
}

std::size_t ParamLayout::add(std::string name, std::vector<std::size_t> shape) {
  TensorInfo t;
  t.name = std::move(name);
  t.shape = std::move(shape);
  t.size = 1;
  for (auto s : t.shape) t.size *= s;
  t.offset = total_;
  total_ += t.size;
  tensors_.push_back(std::move(t));
  return tensors_.back().offset;
}

ParamLayout::ParamLayout(const TransformerConfig& c) {
  c.validate();
  const auto V = static_cast<std::size_t>(c.vocab_size);
  const auto D = static_cast<std::size_t>(c.d_model);
  const auto F = static_cast<std::size_t>(c.d_ff);
  const auto L = static_cast<std::size_t>(c.max_seq_len);
  tok_emb = add("tok_emb", {V, D});
  pos_emb = add("pos_emb", {L, D});
  for (int b = 0; b < c.n_blocks; ++b) {
    const std::string p = "blocks." + std::to_string(b) + ".";
    Block blk{};
    blk.ln1_gain = add(p + "ln1.gain", {D});
    blk.ln1_bias = add(p + "ln1.bias", {D});
    blk.wq = add(p + "attn.wq", {D, D});
    blk.bq = add(p + "attn.bq", {D});
    blk.wk = add(p + "attn.wk", {D, D});
    blk.bk = add(p + "attn.bk", {D});
    blk.wv = add(p + "attn.wv", {D, D});
    blk.bv = add(p + "attn.bv", {D});
    blk.wo = add(p + "attn.wo", {D, D});
    blk.bo = add(p + "attn.bo", {D});
    blk.ln2_gain = add(p + "ln2.gain", {D});
    blk.ln2_bias = add(p + "ln2.bias", {D});
    blk.w1 = add(p + "ffn.w1", {D, F});
    blk.b1 = add(p + "ffn.b1", {F});
    blk.w2 = add(p + "ffn.w2", {F, D});
    blk.b2 = add(p + "ffn.b2", {D});
    blocks.push_back(blk);
  }
  lnf_gain = add("ln_f.gain", {D});
  lnf_bias = add("ln_f.bias", {D});
  if (!c.tie_embeddings) out_w = add("out.w", {D, V});
  out_bias = add("out.bias", {V});
}

const TensorInfo& ParamLayout::find(const std::string& name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw Error("no parameter tensor named " + name);
}

std::span<const float> Checkpoint::tensor(const std::string& name) const {
  const auto& t = ParamLayout(config).find(name);
  return std::span<const float>(params).subspan(t.offset, t.size);
}

std::span<float> Checkpoint::tensor(const std::string& name) {
  const auto& t = ParamLayout(config).find(name);
  return std::span<float>(params).subspan(t.offset, t.size);
}

void Checkpoint::check_finite() const {
  const ParamLayout layout(config);
  for (const auto& t : layout.tensors()) {
    for (std::size_t i = 0; i < t.size; ++i) {
      if (!std::isfinite(params[t.offset + i])) {
        throw Error("non-finite value in parameter " + t.name);
      }
    }
  }
}

Checkpoint init_params(const TransformerConfig& config, std::uint64_t seed) {
  const ParamLayout layout(config);
  Checkpoint ck;
  ck.config = config;
  ck.rng_seed = seed;
  ck.params.assign(layout.total_size(), 0.0f);
  ck.optimizer.m.assign(layout.total_size(), 0.0);
  ck.optimizer.v.assign(layout.total_size(), 0.0);

  Rng rng(seed);
  const double base = 0.02;
  const double resid = base / std::sqrt(2.0 * config.n_blocks);
  auto ends_with = [](const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (const auto& t : layout.tensors()) {
    float* p = ck.params.data() + t.offset;
    if (ends_with(t.name, ".gain")) {
      std::fill(p, p + t.size, 1.0f);
    } else if (t.shape.size() == 2) {
      const double scale =
          (ends_with(t.name, "attn.wo") || ends_with(t.name, "ffn.w2")) ? resid : base;
      for (std::size_t i = 0; i < t.size; ++i) p[i] = static_cast<float>(scale * rng.normal());
    }
  }
  return ck;
}

namespace {

constexpr char kMagic[] = "LMAUG-CHECKPOINT";
constexpr int kFormatVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw Error(path + ": truncated checkpoint");
  return v;
}

void write_tensor(std::ostream& os, const std::string& name, const std::vector<std::size_t>& shape,
                  const void* data, std::size_t count, std::uint8_t elem_size) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) put<std::uint64_t>(os, d);
  put<std::uint8_t>(os, elem_size);
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(count * elem_size));
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const ParamLayout layout(ck.config);
  if (ck.params.size() != layout.total_size()) throw Error("checkpoint size does not match config");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write checkpoint: " + path);
  const bool has_moments = ck.optimizer.m.size() == layout.total_size();
  const std::size_t n_tensors = layout.tensors().size() * (has_moments ? 3 : 1);
  os << kMagic << ' ' << kFormatVersion << '\n'
     << ck.config.to_text() << "rng_seed=" << ck.rng_seed << '\n'
     << "step=" << ck.optimizer.step << '\n'
     << "tensors=" << n_tensors << '\n'
     << "end_header\n";
  for (const auto& t : layout.tensors()) {
    write_tensor(os, t.name, t.shape, ck.params.data() + t.offset, t.size, 4);
  }
  if (has_moments) {
    for (const auto& t : layout.tensors()) {
      write_tensor(os, "adam.m." + t.name, t.shape, ck.optimizer.m.data() + t.offset, t.size, 8);
    }
    for (const auto& t : layout.tensors()) {
      write_tensor(os, "adam.v." + t.name, t.shape, ck.optimizer.v.data() + t.offset, t.size, 8);
    }
  }
  if (!os) throw Error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint: " + path);
  std::string line;
  std::getline(is, line);
  if (line != std::string(kMagic) + " " + std::to_string(kFormatVersion)) {
    throw Error(path + ": not a version " + std::to_string(kFormatVersion) + " checkpoint");
  }
  std::string config_text;
  Checkpoint ck;
  std::size_t n_tensors = 0;
  while (std::getline(is, line) && line != "end_header") {
    if (line.rfind("rng_seed=", 0) == 0) {
      ck.rng_seed = std::stoull(line.substr(9));
    } else if (line.rfind("step=", 0) == 0) {
      ck.optimizer.step = std::stoll(line.substr(5));
    } else if (line.rfind("tensors=", 0) == 0) {
      n_tensors = std::stoull(line.substr(8));
    } else {
      config_text += line + "\n";
    }
  }
  if (line != "end_header") throw Error(path + ": missing end_header");
  ck.config = TransformerConfig::from_text(config_text);
  const ParamLayout layout(ck.config);
  ck.params.assign(layout.total_size(), 0.0f);

  std::map<std::string, int> seen;
  for (std::size_t i = 0; i < n_tensors; ++i) {
    const auto name_len = get<std::uint32_t>(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto rank = get<std::uint32_t>(is, path);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(is, path);
    const auto elem = get<std::uint8_t>(is, path);

    std::string base = name;
    int kind = 0;
    if (name.rfind("adam.m.", 0) == 0) {
      base = name.substr(7);
      kind = 1;
    } else if (name.rfind("adam.v.", 0) == 0) {
      base = name.substr(7);
      kind = 2;
    }
    const auto& t = layout.find(base);
    if (shape != t.shape) throw Error(path + ": shape mismatch for " + name);
    if (++seen[name] > 1) throw Error(path + ": duplicate tensor " + name);
    if (kind == 0) {
      if (elem != 4) throw Error(path + ": parameters must be float32");
      is.read(reinterpret_cast<char*>(ck.params.data() + t.offset),
              static_cast<std::streamsize>(t.size * 4));
    } else {
      if (elem != 8) throw Error(path + ": optimizer moments must be float64");
      auto& dst = kind == 1 ? ck.optimizer.m : ck.optimizer.v;
      dst.resize(layout.total_size(), 0.0);
      is.read(reinterpret_cast<char*>(dst.data() + t.offset),
              static_cast<std::streamsize>(t.size * 8));
    }
    if (!is) throw Error(path + ": truncated tensor " + name);
  }
  for (const auto& t : layout.tensors()) {
    if (!seen.count(t.name)) throw Error(path + ": missing tensor " + t.name);
  }
  if (ck.optimizer.m.empty()) ck.optimizer.m.assign(layout.total_size(), 0.0);
  if (ck.optimizer.v.empty()) ck.optimizer.v.assign(layout.total_size(), 0.0);
  return ck;
}

}  // namespace lmaug::nn
