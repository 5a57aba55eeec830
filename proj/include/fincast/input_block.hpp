#pragma once

// Input tokenization: patching with left-padding, prefix training masks,
// per-patch instance normalization with stored statistics, and the residual
// embedding of patches into model space with an added frequency vector.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fincast/autograd.hpp"
#include "fincast/series.hpp"
#include "fincast/tensor.hpp"

namespace fincast {

inline constexpr double kSigmaFloor = 1e-6;

// Patch values before normalization. mask is 1 where a position is padding
// or training-masked. All sequences in a batch share (N, P).
struct RawPatchBatch {
  int batch = 0;
  int n_patches = 0;
  int patch_len = 0;
  Tensor values;                // (B*N, P) raw, pads zero
  Tensor mask;                  // (B*N, P), 1 = masked
  std::vector<int> freq_index;  // per sequence

  int tokens() const { return batch * n_patches; }
};

// Normalized tokens plus the statistics needed to invert Eq.-style scaling.
struct PatchBatch {
  int batch = 0;
  int n_patches = 0;
  int patch_len = 0;
  Tensor patches;                    // (B*N, P), masked slots carry 0
  Tensor mask;                       // (B*N, P)
  std::vector<double> mu, sigma;     // per patch
  std::vector<int> freq_index;      // per sequence
  std::vector<uint8_t> token_padded;  // 1 if the whole patch is masked
  int degenerate_patches = 0;         // all-masked fallbacks seen

  int tokens() const { return batch * n_patches; }
};

// Split one sequence into ceil(L/P) patches, left-padding the earliest patch
// so the most recent values stay unpadded.
inline RawPatchBatch patchify(const std::vector<double>& values, int patch_len, int freq_index = 0) {
  if (patch_len < 1) throw std::invalid_argument("patchify: patch length must be >= 1");
  if (values.empty()) throw std::invalid_argument("patchify: empty series");
  const int len = static_cast<int>(values.size());
  const int n = (len + patch_len - 1) / patch_len;
  const int pad = n * patch_len - len;

  RawPatchBatch out;
  out.batch = 1;
  out.n_patches = n;
  out.patch_len = patch_len;
  out.values = Tensor({n, patch_len});
  out.mask = Tensor({n, patch_len});
  out.freq_index = {freq_index};
  for (int i = 0; i < pad; ++i) out.mask.data[static_cast<size_t>(i)] = 1.0;
  for (int i = 0; i < len; ++i) out.values.data[static_cast<size_t>(pad + i)] = values[static_cast<size_t>(i)];
  return out;
}

// Batch version for equal-length sequences.
inline RawPatchBatch patchify_batch(const std::vector<std::vector<double>>& sequences,
                                    const std::vector<int>& freq_index, int patch_len) {
  if (sequences.empty()) throw std::invalid_argument("patchify: empty batch");
  if (freq_index.size() != sequences.size())
    throw std::invalid_argument("patchify: freq_index size mismatch");
  RawPatchBatch first = patchify(sequences[0], patch_len, freq_index[0]);
  RawPatchBatch out;
  out.batch = static_cast<int>(sequences.size());
  out.n_patches = first.n_patches;
  out.patch_len = patch_len;
  out.values = Tensor({out.batch * out.n_patches, patch_len});
  out.mask = Tensor({out.batch * out.n_patches, patch_len});
  out.freq_index = freq_index;
  for (size_t b = 0; b < sequences.size(); ++b) {
    if (sequences[b].size() != sequences[0].size())
      throw std::invalid_argument("patchify: ragged batch (sequence " + std::to_string(b) + " has length " +
                                  std::to_string(sequences[b].size()) + ", expected " +
                                  std::to_string(sequences[0].size()) + ")");
    RawPatchBatch one = patchify(sequences[b], patch_len, freq_index[b]);
    const size_t off = b * one.values.numel();
    std::copy(one.values.data.begin(), one.values.data.end(), out.values.data.begin() + off);
    std::copy(one.mask.data.begin(), one.mask.data.end(), out.mask.data.begin() + off);
  }
  return out;
}

// Mask a random-length prefix of each sequence's observed points. The prefix
// length is drawn uniformly from [0, 2*ratio*L] so the masked fraction has
// mean `ratio` (requires ratio < 0.5); at least one observed point always
// survives. Padding positions are already masked and do not count.
inline void apply_training_mask(RawPatchBatch& batch, double ratio, Rng& rng) {
  if (ratio < 0.0 || ratio >= 1.0) throw std::invalid_argument("training mask: ratio must be in [0, 1)");
  if (ratio == 0.0) return;
  const int per_seq = batch.n_patches * batch.patch_len;
  for (int b = 0; b < batch.batch; ++b) {
    double* mask_row = batch.mask.data.data() + static_cast<size_t>(b) * per_seq;
    int pad = 0;
    while (pad < per_seq && mask_row[pad] == 1.0) ++pad;
    const int observed = per_seq - pad;
    if (observed <= 1) continue;
    int len = static_cast<int>(std::lround(rng.uniform(0.0, 2.0 * ratio) * observed));
    len = std::min(len, observed - 1);
    for (int i = 0; i < len; ++i) mask_row[pad + i] = 1.0;
  }
}

struct NormalizedPatch {
  std::vector<double> values;
  double mu = 0.0;
  double sigma = 1.0;
  bool degenerate = false;  // all-masked fallback
};

// Per-patch standardization over non-masked positions, population std,
// sigma floored so constant patches map to zeros. Masked slots come out 0.
inline NormalizedPatch instance_normalize(const std::vector<double>& patch, const std::vector<double>& mask,
                                          double sigma_floor = kSigmaFloor) {
  if (mask.size() != patch.size()) throw std::invalid_argument("instance_normalize: mask length mismatch");
  NormalizedPatch out;
  out.values.assign(patch.size(), 0.0);
  int count = 0;
  double sum = 0.0;
  for (size_t i = 0; i < patch.size(); ++i) {
    if (mask[i] == 0.0) {
      sum += patch[i];
      ++count;
    }
  }
  if (count == 0) {
    out.degenerate = true;
    return out;
  }
  out.mu = sum / count;
  double ss = 0.0;
  for (size_t i = 0; i < patch.size(); ++i) {
    if (mask[i] == 0.0) {
      const double d = patch[i] - out.mu;
      ss += d * d;
    }
  }
  out.sigma = std::max(std::sqrt(ss / count), sigma_floor);
  for (size_t i = 0; i < patch.size(); ++i) {
    if (mask[i] == 0.0) out.values[i] = (patch[i] - out.mu) / out.sigma;
  }
  return out;
}

inline PatchBatch normalize_patch_batch(const RawPatchBatch& raw, double sigma_floor = kSigmaFloor) {
  PatchBatch out;
  out.batch = raw.batch;
  out.n_patches = raw.n_patches;
  out.patch_len = raw.patch_len;
  out.patches = Tensor({raw.tokens(), raw.patch_len});
  out.mask = raw.mask;
  out.freq_index = raw.freq_index;
  out.mu.resize(static_cast<size_t>(raw.tokens()));
  out.sigma.resize(static_cast<size_t>(raw.tokens()));
  out.token_padded.resize(static_cast<size_t>(raw.tokens()));
  std::vector<double> patch(static_cast<size_t>(raw.patch_len));
  std::vector<double> mask(static_cast<size_t>(raw.patch_len));
  for (int tk = 0; tk < raw.tokens(); ++tk) {
    const size_t off = static_cast<size_t>(tk) * raw.patch_len;
    std::copy(raw.values.data.begin() + off, raw.values.data.begin() + off + raw.patch_len, patch.begin());
    std::copy(raw.mask.data.begin() + off, raw.mask.data.begin() + off + raw.patch_len, mask.begin());
    NormalizedPatch np = instance_normalize(patch, mask, sigma_floor);
    std::copy(np.values.begin(), np.values.end(), out.patches.data.begin() + off);
    out.mu[static_cast<size_t>(tk)] = np.mu;
    out.sigma[static_cast<size_t>(tk)] = np.sigma;
    out.token_padded[static_cast<size_t>(tk)] = np.degenerate ? 1 : 0;
    if (np.degenerate) out.degenerate_patches++;
  }
  return out;
}

// ---- residual MLP (shared by input embedding, experts, output head) -------

// Two-layer MLP with a linear projection skip: silu(x W1 + b1) W2 + b2 + x Wr.
// Zero weights give exactly zero output.
struct ResidualMlp {
  Tensor w1, b1, w2, b2, w_res;

  static ResidualMlp make(int in, int hidden, int out) {
    ResidualMlp m;
    m.w1 = Tensor({in, hidden});
    m.b1 = Tensor({hidden});
    m.w2 = Tensor({hidden, out});
    m.b2 = Tensor({out});
    m.w_res = Tensor({in, out});
    return m;
  }

  void init(Rng& rng, double scale = 0.02) {
    w1 = rng.normal_tensor(w1.shape, 0.0, scale);
    w2 = rng.normal_tensor(w2.shape, 0.0, scale);
    w_res = rng.normal_tensor(w_res.shape, 0.0, scale);
    // biases stay zero
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".w1", w1);
    fn(prefix + ".b1", b1);
    fn(prefix + ".w2", w2);
    fn(prefix + ".b2", b2);
    fn(prefix + ".w_res", w_res);
  }
};

struct ResidualMlpRef {
  ag::Value w1, b1, w2, b2, w_res;
};

inline ResidualMlpRef to_tape(ag::Tape& t, const ResidualMlp& p) {
  return {t.leaf(p.w1), t.leaf(p.b1), t.leaf(p.w2), t.leaf(p.b2), t.leaf(p.w_res)};
}

inline ag::Value apply_residual_mlp(ag::Tape& t, ag::Value x, const ResidualMlpRef& p) {
  ag::Value hidden = ag::silu(t, ag::add_row_vector(t, ag::matmul(t, x, p.w1), p.b1));
  ag::Value core = ag::add_row_vector(t, ag::matmul(t, hidden, p.w2), p.b2);
  return ag::add(t, core, ag::matmul(t, x, p.w_res));
}

// Plain (tape-free) version for the inference path.
inline Tensor apply_residual_mlp(const Tensor& x, const ResidualMlp& p) {
  ag::Tape t;
  return t.val(apply_residual_mlp(t, t.leaf(x), to_tape(t, p)));
}

// ---- token embedding -------------------------------------------------------

struct FreqEmbeddingTable {
  Tensor table;  // (f_max, d_model)

  static FreqEmbeddingTable make(int f_max, int d_model) { return {Tensor({f_max, d_model})}; }
};

// One-hot sequence->frequency selector, (B*N, f_max). Multiplying it with the
// table adds the same row to every token of a sequence and routes gradients
// back to exactly that row.
inline Tensor freq_selector(const std::vector<int>& freq_index, int n_patches, int f_max) {
  const int batch = static_cast<int>(freq_index.size());
  Tensor sel({batch * n_patches, f_max});
  for (int b = 0; b < batch; ++b) {
    const int f = freq_index[static_cast<size_t>(b)];
    if (f < 0 || f >= f_max)
      throw std::invalid_argument("freq_index " + std::to_string(f) + " out of range [0, " + std::to_string(f_max) +
                                  ")");
    for (int n = 0; n < n_patches; ++n) sel.at(b * n_patches + n, f) = 1.0;
  }
  return sel;
}

// (B*N, P) normalized masked patches -> (B*N, D) tokens. The frequency table
// is optional (ablation switch).
inline ag::Value embed_tokens(ag::Tape& t, const PatchBatch& batch, const ResidualMlpRef& input_mlp,
                              ag::Value freq_table, bool use_freq, int f_max) {
  ag::Value x = t.leaf(batch.patches);
  ag::Value h = apply_residual_mlp(t, x, input_mlp);
  if (use_freq) {
    Tensor sel = freq_selector(batch.freq_index, batch.n_patches, f_max);
    h = ag::add(t, h, ag::matmul(t, t.leaf(std::move(sel)), freq_table));
  }
  return h;
}

}  // namespace fincast
