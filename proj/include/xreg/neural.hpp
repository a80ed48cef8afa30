#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "xreg/geometry.hpp"
#include "xreg/patching.hpp"
#include "xreg/tensor.hpp"

namespace xreg {

// phi(x) = [x, sin(2^0 x), cos(2^0 x), ..., sin(2^{L-1} x), cos(2^{L-1} x)]
// per scalar; vector inputs embed per dimension and concatenate.
std::vector<double> fourier_embed(double x, int length);
Tensor fourier_embed_rows(const Tensor& coords, int length);

// Named trainable tensors with deterministic initialization: each tensor is
// drawn from a gaussian scaled by init_scale using a stream derived from
// (seed, name), so creation order does not matter.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  Tensor& create(const std::string& name, std::vector<std::size_t> shape, double init_scale);
  Tensor& zeros(const std::string& name, std::vector<std::size_t> shape);
  Tensor* find(const std::string& name);
  const Tensor* find(const std::string& name) const;
  Tensor& at(const std::string& name);

  const std::vector<std::string>& names() const { return names_; }
  std::uint64_t seed() const { return seed_; }
  bool all_finite() const;

 private:
  Tensor& insert(const std::string& name, Tensor t);
  std::uint64_t seed_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, Tensor> values_;
};

// Binds parameters into a graph as leaves; remembers ids so the optimizer can
// read gradients back by name after backward().
class GraphParams {
 public:
  GraphParams(Graph& g, ParamStore& store, bool trainable) : graph_(&g), store_(&store), trainable_(trainable) {}

  int operator()(const std::string& name);
  const std::unordered_map<std::string, int>& bound() const { return ids_; }
  ParamStore& store() { return *store_; }
  Graph& graph() { return *graph_; }
  bool trainable() const { return trainable_; }

 private:
  Graph* graph_;
  ParamStore* store_;
  bool trainable_;
  std::unordered_map<std::string, int> ids_;
};

struct AttentionConfig {
  std::size_t width = 64;  // feature channels d
  int heads = 4;
  void validate() const {
    if (heads < 1 || width % static_cast<std::size_t>(heads) != 0)
      throw ShapeError("attention: width must divide by head count");
  }
};

// Registers (or reuses) the parameters of one attention block under `prefix`.
void ensure_attention_params(ParamStore& store, const std::string& prefix, const AttentionConfig& cfg);

// Multi-head attention + shallow MLP output projection with a residual:
//   out = anchor + MLP(MultiHead(anchor, memory))
// Per head: softmax(q k^T / sqrt(d/h)) v. Throws EmptyMemory on empty memory.
int attention_block(Graph& g, GraphParams& params, const std::string& prefix, int anchor, int memory,
                    const AttentionConfig& cfg);

// Raw attention tensor (no residual, no MLP) for formula-level tests.
Tensor attention_reference(const Tensor& anchor, const Tensor& memory, const Tensor& wq, const Tensor& wk,
                           const Tensor& wv, int heads);

struct RefineConfig {
  int rounds = 3;  // interleaved self/cross rounds
  AttentionConfig attention;
};

void ensure_refine_params(ParamStore& store, const std::string& prefix, const RefineConfig& cfg);

// rounds x (self-2D, self-3D, cross-2D<-3D, cross-3D<-2D), applied
// sequentially; returns refined (image tokens, point tokens).
std::pair<int, int> refine_features(Graph& g, GraphParams& params, const std::string& prefix, int image_tokens,
                                    int point_tokens, const RefineConfig& cfg);

// Adds a learned linear projection of the Fourier-embedded coordinates to the
// features. coords has one row per feature row.
void ensure_positional_params(ParamStore& store, const std::string& prefix, std::size_t coord_dim, int fourier_len,
                              std::size_t width);
int add_positional(Graph& g, GraphParams& params, const std::string& prefix, int features, const Tensor& coords,
                   int fourier_len);

void ensure_pyramid_params(ParamStore& store, const std::string& prefix, std::size_t width, int levels);

// K-stage downsampling stack over token rows laid out row-major on a
// (grid_h, grid_w) grid: stage 0 is a linear map at the input resolution,
// each further stage is a 2x2 mean pool followed by a linear map. Returned
// coarsest-first to line up with PatchPyramid levels.
std::vector<int> pyramid_feature_stack(Graph& g, GraphParams& params, const std::string& prefix, int tokens,
                                       int grid_h, int grid_w, int levels);

struct ToyExtractorConfig {
  int image_h = 120, image_w = 160;
  int coarse_grid_h = 15, coarse_grid_w = 20;  // image_h/8 x image_w/8
  int stem_channels = 8;
  int texture_channels = 16;  // full-resolution conv feeding the fine head
  std::vector<int> stage_channels = {12, 16, 24};  // three stride-2 stages
  std::size_t coarse_width = 64;
  std::size_t fine_width = 32;
  int point_fourier_len = 6;
  std::size_t point_hidden = 48;

  void validate() const {
    if (stage_channels.size() != 3) throw ShapeError("toy extractor: expects 3 stride-2 stages");
    if (image_h % 8 != 0 || image_w % 8 != 0 || image_h / 8 != coarse_grid_h || image_w / 8 != coarse_grid_w)
      throw ShapeError("toy extractor: coarse grid must be image/8");
  }
};

void ensure_toy_params(ParamStore& store, const ToyExtractorConfig& cfg);

struct BackboneIds {
  int image_coarse_chw;  // (coarse_width, coarse_grid_h, coarse_grid_w)
  int image_fine_rows;   // (H*W, fine_width), unnormalized
  int node_rows;         // (M, coarse_width), unnormalized
  int point_fine_rows;   // (N, fine_width), unnormalized
};

// 2D branch: strided local-aggregation stack to the coarse grid plus a
// full-resolution head over multi-scale upsampled context. 3D branch:
// per-point MLP on Fourier-embedded coordinates with one mean-aggregation
// round onto the node graph.
BackboneIds toy_extract(Graph& g, GraphParams& params, const ToyExtractorConfig& cfg, const Tensor& image_hw,
                        const PointCloud& cloud, const PointPatchGraph& graph);

}  // namespace xreg
