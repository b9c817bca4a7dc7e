#include "patkit/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "patkit/common.hpp"
#include "patkit/kernels.hpp"

namespace patkit::nn {

namespace {

template <typename S>
void pad_plane(const S* src, S* dst, int h, int w) {
  const int pw = w + 2;
  std::memset(dst, 0, sizeof(S) * pw);
  for (int y = 0; y < h; ++y) {
    S* d = dst + (size_t)(y + 1) * pw;
    d[0] = S(0);
    std::memcpy(d + 1, src + (size_t)y * w, sizeof(S) * w);
    d[w + 1] = S(0);
  }
  std::memset(dst + (size_t)(h + 1) * pw, 0, sizeof(S) * pw);
}

template <typename S>
void pad_sample(const S* src, S* dst, int ch, int h, int w) {
  const size_t plane = (size_t)h * w;
  const size_t pplane = (size_t)(h + 2) * (w + 2);
  for (int c = 0; c < ch; ++c) pad_plane(src + c * plane, dst + c * pplane, h, w);
}

[[noreturn]] void bad_shape(const NodeSpec& n, const std::string& what) {
  throw DimensionError("layer '" + n.name + "': " + what);
}

}  // namespace

template <typename S>
int Net<S>::add_input() {
  NodeSpec n;
  n.op = Op::input;
  n.name = "input";
  nodes.push_back(n);
  widx.push_back(-1);
  bidx.push_back(-1);
  return 0;
}

template <typename S>
int Net<S>::add(NodeSpec n) {
  nodes.push_back(std::move(n));
  widx.push_back(-1);
  bidx.push_back(-1);
  return (int)nodes.size() - 1;
}

template <typename S>
int Net<S>::conv(int in, int ic, int oc, const std::string& name, bool bias, bool zero_init) {
  NodeSpec n;
  n.op = Op::conv3x3;
  n.in0 = in;
  n.in_ch = ic;
  n.out_ch = oc;
  n.bias = bias;
  n.zero_init = zero_init;
  n.name = name;
  return add(n);
}

template <typename S>
int Net<S>::dense(int in, int in_feat, int out_feat, const std::string& name, bool bias) {
  NodeSpec n;
  n.op = Op::dense;
  n.in0 = in;
  n.in_feat = in_feat;
  n.out_feat = out_feat;
  n.bias = bias;
  n.name = name;
  return add(n);
}

template <typename S>
int Net<S>::act(int in, Op kind, const std::string& name) {
  NodeSpec n;
  n.op = kind;
  n.in0 = in;
  n.name = name;
  return add(n);
}

template <typename S>
void Net<S>::init_params(RngStream& rng) {
  params.items.clear();
  params.step = 0;
  for (size_t i = 0; i < nodes.size(); ++i) {
    widx[i] = -1;
    bidx[i] = -1;
    const NodeSpec& n = nodes[i];
    std::vector<int> wshape;
    double s = 0;
    int bn = 0;
    switch (n.op) {
      case Op::conv3x3:
        wshape = {n.out_ch, n.in_ch, 3, 3};
        s = std::sqrt(6.0 / (9.0 * n.in_ch + 9.0 * n.out_ch));
        bn = n.out_ch;
        break;
      case Op::tconv2x2:
        wshape = {n.in_ch, n.out_ch, 2, 2};
        s = std::sqrt(6.0 / (4.0 * n.in_ch + 4.0 * n.out_ch));
        bn = n.out_ch;
        break;
      case Op::dense:
        wshape = {n.out_feat, n.in_feat};
        s = std::sqrt(6.0 / ((double)n.in_feat + n.out_feat));
        bn = n.out_feat;
        break;
      default:
        continue;
    }
    Param<S> w;
    w.name = n.name + ".w";
    w.shape = wshape;
    size_t wn = 1;
    for (int d : wshape) wn *= (size_t)d;
    w.w.resize(wn);
    if (n.zero_init) {
      std::fill(w.w.begin(), w.w.end(), S(0));
    } else {
      for (auto& v : w.w) v = (S)rng.uniform(-s, s);
    }
    w.g.assign(wn, S(0));
    w.m.assign(wn, S(0));
    w.v.assign(wn, S(0));
    widx[i] = (int)params.items.size();
    params.items.push_back(std::move(w));
    if (n.bias) {
      Param<S> b;
      b.name = n.name + ".b";
      b.shape = {bn};
      b.w.assign(bn, S(0));
      b.g.assign(bn, S(0));
      b.m.assign(bn, S(0));
      b.v.assign(bn, S(0));
      bidx[i] = (int)params.items.size();
      params.items.push_back(std::move(b));
    }
  }
}

template <typename S>
Tensor<S> Net<S>::forward(const Tensor<S>& x, Trace* tr) const {
  Trace local;
  Trace& t = tr ? *tr : local;
  t.out.assign(nodes.size(), Tensor<S>());
  t.argmax.assign(nodes.size(), {});
  if (x.ndim() != 4) throw DimensionError("engine input must be (batch, channel, h, w)");
  for (size_t i = 0; i < nodes.size(); ++i) {
    const NodeSpec& n = nodes[i];
    switch (n.op) {
      case Op::input:
        t.out[i] = x;
        break;
      case Op::conv3x3: {
        const Tensor<S>& in = t.out[n.in0];
        const int B = in.shape[0], C = in.shape[1], H = in.shape[2], W = in.shape[3];
        if (C != n.in_ch) bad_shape(n, "expected " + std::to_string(n.in_ch) + " channels, got " +
                                           std::to_string(C));
        Tensor<S> out({B, n.out_ch, H, W});
        std::vector<S> padbuf((size_t)C * (H + 2) * (W + 2));
        const Param<S>& w = params.items[widx[i]];
        const S* bias = bidx[i] >= 0 ? params.items[bidx[i]].w.data() : nullptr;
        for (int b = 0; b < B; ++b) {
          pad_sample(in.ptr() + (size_t)b * C * H * W, padbuf.data(), C, H, W);
          kern::conv3x3_fwd(padbuf.data(), w.w.data(), bias,
                            out.ptr() + (size_t)b * n.out_ch * H * W, C, n.out_ch, H, W);
        }
        t.out[i] = std::move(out);
        break;
      }
      case Op::tconv2x2: {
        const Tensor<S>& in = t.out[n.in0];
        const int B = in.shape[0], C = in.shape[1], H = in.shape[2], W = in.shape[3];
        if (C != n.in_ch) bad_shape(n, "channel mismatch");
        const int OH = 2 * H, OW = 2 * W;
        Tensor<S> out({B, n.out_ch, OH, OW});
        const Param<S>& w = params.items[widx[i]];
        const S* bias = bidx[i] >= 0 ? params.items[bidx[i]].w.data() : nullptr;
        const size_t plane_in = (size_t)H * W;
        std::vector<S> acc(plane_in);
        for (int b = 0; b < B; ++b) {
          const S* ip = in.ptr() + (size_t)b * C * plane_in;
          S* op = out.ptr() + (size_t)b * n.out_ch * OH * OW;
          for (int oc = 0; oc < n.out_ch; ++oc) {
            for (int tt = 0; tt < 4; ++tt) {
              std::fill(acc.begin(), acc.end(), S(0));
              for (int ic = 0; ic < C; ++ic) {
                const S wv = w.w[(((size_t)ic * n.out_ch + oc) * 4) + tt];
                if constexpr (std::is_same_v<S, float>)
                  kern::saxpy(wv, ip + (size_t)ic * plane_in, acc.data(), plane_in);
                else
                  for (size_t k = 0; k < plane_in; ++k) acc[k] += wv * ip[(size_t)ic * plane_in + k];
              }
              const int ty = tt / 2, tx = tt % 2;
              const S bv = bias ? bias[oc] : S(0);
              for (int y = 0; y < H; ++y) {
                S* dst = op + (size_t)oc * OH * OW + (size_t)(2 * y + ty) * OW + tx;
                const S* srow = acc.data() + (size_t)y * W;
                for (int xx = 0; xx < W; ++xx) dst[2 * xx] = srow[xx] + bv;
              }
            }
          }
        }
        t.out[i] = std::move(out);
        break;
      }
      case Op::maxpool2: {
        const Tensor<S>& in = t.out[n.in0];
        const int B = in.shape[0], C = in.shape[1], H = in.shape[2], W = in.shape[3];
        if (H % 2 || W % 2) bad_shape(n, "maxpool needs even spatial dims");
        const int OH = H / 2, OW = W / 2;
        Tensor<S> out({B, C, OH, OW});
        t.argmax[i].resize((size_t)B * C * OH * OW);
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            const S* ip = in.ptr() + ((size_t)b * C + c) * H * W;
            S* op = out.ptr() + ((size_t)b * C + c) * OH * OW;
            int* am = t.argmax[i].data() + ((size_t)b * C + c) * OH * OW;
            for (int y = 0; y < OH; ++y)
              for (int xx = 0; xx < OW; ++xx) {
                int base = 2 * y * W + 2 * xx;
                int best = base;
                S bv = ip[base];
                if (ip[base + 1] > bv) { bv = ip[base + 1]; best = base + 1; }
                if (ip[base + W] > bv) { bv = ip[base + W]; best = base + W; }
                if (ip[base + W + 1] > bv) { bv = ip[base + W + 1]; best = base + W + 1; }
                op[(size_t)y * OW + xx] = bv;
                am[(size_t)y * OW + xx] = best;
              }
          }
        t.out[i] = std::move(out);
        break;
      }
      case Op::dense: {
        const Tensor<S>& in = t.out[n.in0];
        const int B = in.shape[0];
        const size_t feat = in.size() / B;
        if ((int)feat != n.in_feat) bad_shape(n, "expected " + std::to_string(n.in_feat) +
                                                     " features, got " + std::to_string(feat));
        Tensor<S> out({B, n.out_feat, 1, 1});
        const Param<S>& w = params.items[widx[i]];
        const S* bias = bidx[i] >= 0 ? params.items[bidx[i]].w.data() : nullptr;
        for (int b0 = 0; b0 < B; b0 += 8) {
          const int nb = std::min(8, B - b0);
          const S* xs[8];
          S* ys[8];
          for (int q = 0; q < nb; ++q) {
            xs[q] = in.ptr() + (size_t)(b0 + q) * feat;
            ys[q] = out.ptr() + (size_t)(b0 + q) * n.out_feat;
          }
          kern::dense_fwd(w.w.data(), bias, xs, ys, nb, n.out_feat, n.in_feat);
        }
        t.out[i] = std::move(out);
        break;
      }
      case Op::concat: {
        const Tensor<S>& a = t.out[n.in0];
        const Tensor<S>& b = t.out[n.in1];
        if (a.shape[0] != b.shape[0] || a.shape[2] != b.shape[2] || a.shape[3] != b.shape[3])
          bad_shape(n, "concat operands disagree");
        const int B = a.shape[0], Ca = a.shape[1], Cb = b.shape[1], H = a.shape[2], W = a.shape[3];
        Tensor<S> out({B, Ca + Cb, H, W});
        const size_t plane = (size_t)H * W;
        for (int bb = 0; bb < B; ++bb) {
          std::memcpy(out.ptr() + (size_t)bb * (Ca + Cb) * plane,
                      a.ptr() + (size_t)bb * Ca * plane, sizeof(S) * Ca * plane);
          std::memcpy(out.ptr() + ((size_t)bb * (Ca + Cb) + Ca) * plane,
                      b.ptr() + (size_t)bb * Cb * plane, sizeof(S) * Cb * plane);
        }
        t.out[i] = std::move(out);
        break;
      }
      case Op::add: {
        const Tensor<S>& a = t.out[n.in0];
        const Tensor<S>& b = t.out[n.in1];
        if (a.shape != b.shape) bad_shape(n, "residual operands disagree");
        Tensor<S> out = a;
        for (size_t k = 0; k < out.size(); ++k) out.data[k] += b.data[k];
        t.out[i] = std::move(out);
        break;
      }
      case Op::relu: {
        Tensor<S> out = t.out[n.in0];
        for (auto& v : out.data) v = v > S(0) ? v : S(0);
        t.out[i] = std::move(out);
        break;
      }
      case Op::elu: {
        Tensor<S> out = t.out[n.in0];
        for (auto& v : out.data) v = v > S(0) ? v : (S)std::expm1((double)v);
        t.out[i] = std::move(out);
        break;
      }
      case Op::leaky_relu: {
        Tensor<S> out = t.out[n.in0];
        for (auto& v : out.data) v = v > S(0) ? v : S(0.01) * v;
        t.out[i] = std::move(out);
        break;
      }
      case Op::reshape: {
        const Tensor<S>& in = t.out[n.in0];
        const int B = in.shape[0];
        if ((size_t)n.rc * n.rh * n.rw * B != in.size()) bad_shape(n, "reshape count mismatch");
        t.out[i] = in.reshaped({B, n.rc, n.rh, n.rw});
        break;
      }
    }
  }
  return t.out.back();
}

template <typename S>
Tensor<S> Net<S>::backward(const Trace& t, const Tensor<S>& dout, bool want_input_grad) {
  std::vector<Tensor<S>> grad(nodes.size());
  auto accum = [&](int node, Tensor<S>&& g) {
    if (grad[node].size() == 0) {
      grad[node] = std::move(g);
    } else {
      for (size_t k = 0; k < grad[node].size(); ++k) grad[node].data[k] += g.data[k];
    }
  };
  if (dout.shape != t.out.back().shape) throw DimensionError("loss gradient shape mismatch");
  grad.back() = dout;
  for (int i = (int)nodes.size() - 1; i >= 1; --i) {
    const NodeSpec& n = nodes[i];
    if (grad[i].size() == 0) continue;  // node did not influence the output
    const Tensor<S>& gi = grad[i];
    switch (n.op) {
      case Op::input:
        break;
      case Op::conv3x3: {
        const Tensor<S>& in = t.out[n.in0];
        const int B = in.shape[0], C = in.shape[1], H = in.shape[2], W = in.shape[3];
        Param<S>& w = params.items[widx[i]];
        S* db = bidx[i] >= 0 ? params.items[bidx[i]].g.data() : nullptr;
        std::vector<S> padbuf((size_t)C * (H + 2) * (W + 2));
        std::vector<S> dpad((size_t)n.out_ch * (H + 2) * (W + 2));
        // weights transposed and flipped turn the input gradient into a conv
        std::vector<S> wt((size_t)C * n.out_ch * 9);
        for (int oc = 0; oc < n.out_ch; ++oc)
          for (int ic = 0; ic < C; ++ic)
            for (int tt = 0; tt < 9; ++tt)
              wt[((size_t)ic * n.out_ch + oc) * 9 + tt] =
                  w.w[((size_t)oc * C + ic) * 9 + (8 - tt)];
        Tensor<S> din({B, C, H, W});
        for (int b = 0; b < B; ++b) {
          pad_sample(in.ptr() + (size_t)b * C * H * W, padbuf.data(), C, H, W);
          const S* dop = gi.ptr() + (size_t)b * n.out_ch * H * W;
          kern::conv3x3_wgrad(padbuf.data(), dop, w.g.data(), db, C, n.out_ch, H, W);
          pad_sample(dop, dpad.data(), n.out_ch, H, W);
          kern::conv3x3_fwd(dpad.data(), wt.data(), (const S*)nullptr,
                            din.ptr() + (size_t)b * C * H * W, n.out_ch, C, H, W);
        }
        accum(n.in0, std::move(din));
        break;
      }
      case Op::tconv2x2: {
        const Tensor<S>& in = t.out[n.in0];
        const int B = in.shape[0], C = in.shape[1], H = in.shape[2], W = in.shape[3];
        const int OH = 2 * H, OW = 2 * W;
        Param<S>& w = params.items[widx[i]];
        S* db = bidx[i] >= 0 ? params.items[bidx[i]].g.data() : nullptr;
        Tensor<S> din({B, C, H, W});
        const size_t plane = (size_t)H * W;
        std::vector<S> sub(plane);
        for (int b = 0; b < B; ++b) {
          const S* ip = in.ptr() + (size_t)b * C * plane;
          const S* dop = gi.ptr() + (size_t)b * n.out_ch * OH * OW;
          S* dip = din.ptr() + (size_t)b * C * plane;
          for (int oc = 0; oc < n.out_ch; ++oc) {
            if (db) {
              S s = 0;
              const S* o = dop + (size_t)oc * OH * OW;
              for (size_t k = 0; k < (size_t)OH * OW; ++k) s += o[k];
              db[oc] += s;
            }
            for (int tt = 0; tt < 4; ++tt) {
              const int ty = tt / 2, tx = tt % 2;
              for (int y = 0; y < H; ++y) {
                const S* srow = dop + (size_t)oc * OH * OW + (size_t)(2 * y + ty) * OW + tx;
                S* drow = sub.data() + (size_t)y * W;
                for (int xx = 0; xx < W; ++xx) drow[xx] = srow[2 * xx];
              }
              for (int ic = 0; ic < C; ++ic) {
                const size_t woff = ((size_t)ic * n.out_ch + oc) * 4 + tt;
                if constexpr (std::is_same_v<S, float>) {
                  w.g[woff] += kern::sdot(ip + ic * plane, sub.data(), plane);
                  kern::saxpy(w.w[woff], sub.data(), dip + ic * plane, plane);
                } else {
                  S s = 0;
                  for (size_t k = 0; k < plane; ++k) s += ip[ic * plane + k] * sub[k];
                  w.g[woff] += s;
                  for (size_t k = 0; k < plane; ++k) dip[ic * plane + k] += w.w[woff] * sub[k];
                }
              }
            }
          }
        }
        accum(n.in0, std::move(din));
        break;
      }
      case Op::maxpool2: {
        const Tensor<S>& in = t.out[n.in0];
        const int B = in.shape[0], C = in.shape[1], H = in.shape[2], W = in.shape[3];
        const int OH = H / 2, OW = W / 2;
        Tensor<S> din({B, C, H, W});
        const auto& am = t.argmax[i];
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            const size_t po = ((size_t)b * C + c) * OH * OW;
            S* dip = din.ptr() + ((size_t)b * C + c) * H * W;
            for (size_t k = 0; k < (size_t)OH * OW; ++k) dip[am[po + k]] += gi.data[po + k];
          }
        accum(n.in0, std::move(din));
        break;
      }
      case Op::dense: {
        const Tensor<S>& in = t.out[n.in0];
        const int B = in.shape[0];
        const size_t feat = in.size() / B;
        Param<S>& w = params.items[widx[i]];
        S* db = bidx[i] >= 0 ? params.items[bidx[i]].g.data() : nullptr;
        Tensor<S> din = in;  // same shape as input
        std::fill(din.data.begin(), din.data.end(), S(0));
        for (int b0 = 0; b0 < B; b0 += 8) {
          const int nb = std::min(8, B - b0);
          const S* xs[8];
          const S* dys[8];
          S* dxs[8];
          for (int q = 0; q < nb; ++q) {
            xs[q] = in.ptr() + (size_t)(b0 + q) * feat;
            dys[q] = gi.ptr() + (size_t)(b0 + q) * n.out_feat;
            dxs[q] = din.ptr() + (size_t)(b0 + q) * feat;
          }
          kern::dense_wgrad(xs, dys, w.g.data(), db, nb, n.out_feat, n.in_feat);
          if (want_input_grad || n.in0 != 0)
            kern::dense_xgrad(w.w.data(), dys, dxs, nb, n.out_feat, n.in_feat);
        }
        if (want_input_grad || n.in0 != 0) accum(n.in0, std::move(din));
        break;
      }
      case Op::concat: {
        const Tensor<S>& a = t.out[n.in0];
        const Tensor<S>& b = t.out[n.in1];
        const int B = a.shape[0], Ca = a.shape[1], Cb = b.shape[1], H = a.shape[2],
                  W = a.shape[3];
        Tensor<S> da({B, Ca, H, W}), dbt({B, Cb, H, W});
        const size_t plane = (size_t)H * W;
        for (int bb = 0; bb < B; ++bb) {
          std::memcpy(da.ptr() + (size_t)bb * Ca * plane,
                      gi.ptr() + (size_t)bb * (Ca + Cb) * plane, sizeof(S) * Ca * plane);
          std::memcpy(dbt.ptr() + (size_t)bb * Cb * plane,
                      gi.ptr() + ((size_t)bb * (Ca + Cb) + Ca) * plane, sizeof(S) * Cb * plane);
        }
        accum(n.in0, std::move(da));
        accum(n.in1, std::move(dbt));
        break;
      }
      case Op::add: {
        Tensor<S> ga = gi;
        Tensor<S> gb = gi;
        accum(n.in0, std::move(ga));
        accum(n.in1, std::move(gb));
        break;
      }
      case Op::relu: {
        const Tensor<S>& y = t.out[i];
        Tensor<S> din = gi;
        for (size_t k = 0; k < din.size(); ++k)
          if (!(y.data[k] > S(0))) din.data[k] = S(0);
        accum(n.in0, std::move(din));
        break;
      }
      case Op::elu: {
        const Tensor<S>& xin = t.out[n.in0];
        const Tensor<S>& y = t.out[i];
        Tensor<S> din = gi;
        for (size_t k = 0; k < din.size(); ++k)
          if (!(xin.data[k] > S(0))) din.data[k] *= y.data[k] + S(1);
        accum(n.in0, std::move(din));
        break;
      }
      case Op::leaky_relu: {
        const Tensor<S>& xin = t.out[n.in0];
        Tensor<S> din = gi;
        for (size_t k = 0; k < din.size(); ++k)
          if (!(xin.data[k] > S(0))) din.data[k] *= S(0.01);
        accum(n.in0, std::move(din));
        break;
      }
      case Op::reshape: {
        accum(n.in0, gi.reshaped(t.out[n.in0].shape));
        break;
      }
    }
    if (i != 0) grad[i] = Tensor<S>();  // release as we go
  }
  if (want_input_grad) {
    if (grad[0].size() == 0) {
      Tensor<S> z = t.out[0];
      std::fill(z.data.begin(), z.data.end(), S(0));
      return z;
    }
    return std::move(grad[0]);
  }
  return Tensor<S>();
}

template <typename S>
void adam_step(ParamSet<S>& params, const TrainConfig& cfg) {
  for (const auto& p : params.items)
    if (!kern::finite_scan(p.g.data(), p.g.size()))
      throw NumericError("non-finite gradient in " + p.name + " at step " +
                         std::to_string(params.step + 1));
  params.step += 1;
  for (auto& p : params.items)
    kern::adam_update(p.w.data(), p.g.data(), p.m.data(), p.v.data(), p.size(), cfg.lr, cfg.beta1,
                      cfg.beta2, cfg.eps, params.step, cfg.l1);
}

template <typename S>
std::pair<double, Tensor<S>> mse_loss(const Tensor<S>& pred, const Tensor<S>& target) {
  if (pred.shape != target.shape) throw DimensionError("loss operands disagree");
  const size_t n = pred.size();
  Tensor<S> g = pred;
  double acc = 0;
  const double inv = 1.0 / (double)n;
  for (size_t i = 0; i < n; ++i) {
    double d = (double)pred.data[i] - (double)target.data[i];
    acc += d * d;
    g.data[i] = (S)(2.0 * d * inv);
  }
  return {acc * inv, std::move(g)};
}

template struct Net<float>;
template struct Net<double>;
template void adam_step<float>(ParamSet<float>&, const TrainConfig&);
template void adam_step<double>(ParamSet<double>&, const TrainConfig&);
template std::pair<double, Tensor<float>> mse_loss<float>(const Tensor<float>&,
                                                          const Tensor<float>&);
template std::pair<double, Tensor<double>> mse_loss<double>(const Tensor<double>&,
                                                            const Tensor<double>&);

}  // namespace patkit::nn
