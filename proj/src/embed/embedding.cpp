#include "metaseg/embed/embedding.hpp"

#include <cmath>

#include "metaseg/common/rng.hpp"

namespace metaseg::embed {

EmbedConfig EmbedConfig::preset(Setting setting) {
  EmbedConfig c;
  c.setting = setting;
  if (setting == Setting::one_way) {
    c.dilations_block3 = {1, 1, 1};
    c.dilations_block4 = {2, 4, 8};
  }
  return c;
}

EmbedConfig EmbedConfig::uniform(int channels, Setting setting) {
  EmbedConfig c = preset(setting);
  c.block_channels = {channels, channels, channels, channels, channels};
  return c;
}

void EmbedConfig::validate() const {
  for (const int ch : block_channels) {
    if (ch <= 0) throw ValidationError("embed: block channel counts must be positive");
  }
  if (convs_per_block <= 0) throw ValidationError("embed: convs_per_block must be positive");
  if (input_channels <= 0) throw ValidationError("embed: input_channels must be positive");
  const auto n = static_cast<std::size_t>(convs_per_block);
  if (dilations_block3.size() != n || dilations_block4.size() != n) {
    throw ValidationError("embed: dilation lists must have convs_per_block (" + std::to_string(n) + ") entries");
  }
  for (const auto* list : {&dilations_block3, &dilations_block4}) {
    for (const int d : *list) {
      if (d <= 0) throw ValidationError("embed: dilations must be positive");
    }
  }
}

template <typename T>
std::vector<std::size_t> EmbeddingParams<T>::trainable_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].trainable) out.push_back(i);
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>*> EmbeddingParams<T>::trainable_tensors() {
  std::vector<Tensor<T>*> out;
  for (auto& e : entries) {
    if (e.trainable) out.push_back(&e.value);
  }
  return out;
}

template <typename T>
const ParamEntry<T>* EmbeddingParams<T>::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

namespace {

template <typename T>
std::size_t add_entry(EmbeddingParams<T>& p, std::string name, Tensor<T> value, bool trainable) {
  p.entries.push_back(ParamEntry<T>{std::move(name), std::move(value), trainable});
  return p.entries.size() - 1;
}

template <typename T>
Tensor<T> he_normal(std::size_t out, std::size_t in, std::size_t k, Rng& rng) {
  Tensor<T> w(ad::Shape{out, in, k, k});
  const double stddev = std::sqrt(2.0 / static_cast<double>(in * k * k));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng.normal() * stddev);
  return w;
}

}  // namespace

template <typename T>
EmbeddingParams<T> build_embedding(const EmbedConfig& config, std::uint64_t seed) {
  config.validate();
  EmbeddingParams<T> p;
  p.config = config;
  Rng rng(seed);
  const auto& ch = config.block_channels;
  // block 5 (global branch) starts from the shared trunk output
  const std::array<int, 5> in_ch{config.input_channels, ch[0], ch[1], ch[2], ch[1]};
  const auto n_units = static_cast<std::size_t>(config.convs_per_block);

  for (std::size_t b = 0; b < 5; ++b) {
    if (b == 4 && !config.gc_branch_enabled) break;
    const std::string prefix = "block" + std::to_string(b + 1);
    const auto out = static_cast<std::size_t>(ch[b]);
    std::size_t in = static_cast<std::size_t>(in_ch[b]);
    ResidualBlock& block = p.blocks[b];
    for (std::size_t u = 0; u < n_units; ++u) {
      const std::string unit = prefix + ".unit" + std::to_string(u + 1);
      ConvUnit cu{};
      cu.dilation = b == 2 ? config.dilations_block3[u] : b == 3 ? config.dilations_block4[u] : 1;
      cu.weight = add_entry(p, unit + ".conv.weight", he_normal<T>(out, in, 3, rng), true);
      cu.bias = add_entry(p, unit + ".conv.bias", Tensor<T>(ad::Shape{out}), true);
      cu.gamma = add_entry(p, unit + ".bn.gamma", Tensor<T>(ad::Shape{out}, T{1}), true);
      cu.beta = add_entry(p, unit + ".bn.beta", Tensor<T>(ad::Shape{out}), true);
      cu.running_mean = add_entry(p, unit + ".bn.running_mean", Tensor<T>(ad::Shape{out}), false);
      cu.running_var = add_entry(p, unit + ".bn.running_var", Tensor<T>(ad::Shape{out}, T{1}), false);
      block.units.push_back(cu);
      in = out;
    }
    if (static_cast<std::size_t>(in_ch[b]) != out) {
      block.proj_weight =
          add_entry(p, prefix + ".proj.weight", he_normal<T>(out, static_cast<std::size_t>(in_ch[b]), 1, rng), true);
      block.proj_bias = add_entry(p, prefix + ".proj.bias", Tensor<T>(ad::Shape{out}), true);
    }
  }
  return p;
}

template <typename T>
std::size_t count_params(const EmbeddingParams<T>& params) {
  std::size_t n = 0;
  for (const auto& e : params.entries) {
    if (e.trainable) n += e.value.size();
  }
  return n;
}

template <typename T>
EmbeddingVars<T> bind_params(Tape<T>& tape, const EmbeddingParams<T>& params) {
  EmbeddingVars<T> vars;
  vars.by_entry.resize(params.entries.size());
  for (std::size_t i = 0; i < params.entries.size(); ++i) {
    if (params.entries[i].trainable) vars.by_entry[i] = tape.leaf(params.entries[i].value);
  }
  return vars;
}

template <typename T>
std::vector<Tensor<T>> collect_grads(const Tape<T>& tape, const EmbeddingParams<T>& params,
                                     const EmbeddingVars<T>& vars) {
  std::vector<Tensor<T>> out;
  for (const std::size_t i : params.trainable_indices()) out.push_back(tape.grad(vars.by_entry.at(i)));
  return out;
}

namespace {

template <typename T>
Var<T> run_block(const ResidualBlock& block, const EmbeddingParams<T>& p, const EmbeddingVars<T>& v,
                 const Var<T>& input, Mode mode, RunningStatUpdates<T>* updates) {
  Var<T> y = input;
  for (const ConvUnit& u : block.units) {
    y = ad::conv2d(y, v.by_entry[u.weight], v.by_entry[u.bias],
                   ad::Conv2dOptions{1, u.dilation, u.dilation});
    ad::BatchStats<T> stats;
    const bool collect = mode == Mode::train && updates != nullptr;
    y = ad::batchnorm2d(y, v.by_entry[u.gamma], v.by_entry[u.beta], p.entries[u.running_mean].value,
                        p.entries[u.running_var].value, mode, collect ? &stats : nullptr);
    if (collect) updates->items.emplace_back(u.running_mean, std::move(stats));
    y = ad::leaky_relu(y, 0.1);
  }
  Var<T> skip = input;
  if (block.proj_weight) {
    skip = ad::conv2d(input, v.by_entry[*block.proj_weight], v.by_entry[*block.proj_bias], ad::Conv2dOptions{});
  }
  return ad::add(y, skip);
}

}  // namespace

template <typename T>
PixelFeatures<T> embed_forward(Tape<T>& tape, const EmbeddingParams<T>& params, const EmbeddingVars<T>& vars,
                               const Tensor<T>& images, Mode mode, RunningStatUpdates<T>* updates) {
  const auto& s = images.shape();
  if (s.size() != 4) throw ShapeError("embed_forward: images must be N x C x H x W, got " + ad::to_string(s));
  if (s[1] != static_cast<std::size_t>(params.config.input_channels)) {
    throw ShapeError("embed_forward: expected " + std::to_string(params.config.input_channels) +
                     " input channels, got " + std::to_string(s[1]));
  }
  if (s[0] == 0 || s[2] == 0 || s[3] == 0 || s[2] % 4 != 0 || s[3] % 4 != 0) {
    throw ShapeError("embed_forward: spatial extents must be positive multiples of 4, got " + ad::to_string(s));
  }
  if (vars.by_entry.size() != params.entries.size()) {
    throw ValidationError("embed_forward: variables were bound to a different parameter set");
  }

  Var<T> x = tape.constant(images);
  Var<T> trunk = run_block(params.blocks[0], params, vars, x, mode, updates);
  trunk = ad::pool2d(trunk, ad::PoolMode::max2x2);
  trunk = run_block(params.blocks[1], params, vars, trunk, mode, updates);
  trunk = ad::pool2d(trunk, ad::PoolMode::max2x2);

  Var<T> local = run_block(params.blocks[2], params, vars, trunk, mode, updates);
  local = run_block(params.blocks[3], params, vars, local, mode, updates);
  const std::size_t h = local.shape()[2], w = local.shape()[3];

  Var<T> fused = local;
  if (params.config.gc_branch_enabled) {
    Var<T> g = ad::pool2d(trunk, ad::PoolMode::max2x2);
    g = run_block(params.blocks[4], params, vars, g, mode, updates);
    g = ad::pool2d(g, ad::PoolMode::max2x2);
    g = ad::pool2d(g, ad::PoolMode::global_avg);
    g = ad::replicate_upsample(g, static_cast<int>(h), static_cast<int>(w));
    fused = ad::concat_channels(local, g);
  }
  fused = ad::l2_normalize_channels(fused, 1e-8);

  PixelFeatures<T> out;
  out.features = ad::to_pixel_matrix(fused);
  out.n_images = s[0];
  out.height = h;
  out.width = w;
  return out;
}

template <typename T>
void apply_running_stats(EmbeddingParams<T>& params, const RunningStatUpdates<T>& updates, double momentum) {
  for (const auto& [mean_idx, stats] : updates.items) {
    // running_var is always registered right after running_mean
    Tensor<T>& rm = params.entries.at(mean_idx).value;
    Tensor<T>& rv = params.entries.at(mean_idx + 1).value;
    for (std::size_t c = 0; c < rm.size(); ++c) {
      rm[c] = static_cast<T>((1.0 - momentum) * rm[c] + momentum * stats.mean[c]);
      rv[c] = static_cast<T>((1.0 - momentum) * rv[c] + momentum * stats.var_unbiased[c]);
    }
  }
}

#define METASEG_INSTANTIATE_EMBED(T)                                                                        \
  template struct EmbeddingParams<T>;                                                                       \
  template EmbeddingParams<T> build_embedding<T>(const EmbedConfig&, std::uint64_t);                        \
  template std::size_t count_params(const EmbeddingParams<T>&);                                             \
  template EmbeddingVars<T> bind_params(Tape<T>&, const EmbeddingParams<T>&);                               \
  template std::vector<Tensor<T>> collect_grads(const Tape<T>&, const EmbeddingParams<T>&,                  \
                                                const EmbeddingVars<T>&);                                   \
  template PixelFeatures<T> embed_forward(Tape<T>&, const EmbeddingParams<T>&, const EmbeddingVars<T>&,     \
                                          const Tensor<T>&, Mode, RunningStatUpdates<T>*);                  \
  template void apply_running_stats(EmbeddingParams<T>&, const RunningStatUpdates<T>&, double);

METASEG_INSTANTIATE_EMBED(float)
METASEG_INSTANTIATE_EMBED(double)

}  // namespace metaseg::embed
