#include <algorithm>
#include <numeric>

#include "samamba/ops.hpp"

namespace samamba {

using detail::input_grad;
using detail::make_result;
using detail::Node;

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), "reshape", {x}, [](Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

namespace {

// For each output flat index, the input flat index under the permutation.
std::vector<std::size_t> permutation_map(const Shape& in, const std::vector<std::size_t>& axes) {
  std::size_t nd = in.size();
  std::vector<std::size_t> in_stride(nd, 1);
  for (std::size_t i = nd; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out(nd);
  std::vector<std::size_t> stride(nd);
  for (std::size_t i = 0; i < nd; ++i) {
    out[i] = in[axes[i]];
    stride[i] = in_stride[axes[i]];
  }
  std::size_t n = numel(in);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(nd, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < n; ++o) {
    map[o] = src;
    for (std::size_t ax = nd; ax-- > 0;) {
      if (++idx[ax] < out[ax]) {
        src += stride[ax];
        break;
      }
      src -= stride[ax] * (out[ax] - 1);
      idx[ax] = 0;
    }
  }
  return map;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  if (axes.size() != in.size()) throw DimensionError("permute: axis count mismatch");
  std::vector<std::size_t> check = axes;
  std::sort(check.begin(), check.end());
  for (std::size_t i = 0; i < check.size(); ++i)
    if (check[i] != i) throw DimensionError("permute: axes are not a permutation");
  Shape os(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) os[i] = in[axes[i]];
  auto map = permutation_map(in, axes);
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = xd[map[o]];
  return make_result(os, std::move(out), "permute", {x}, [map = std::move(map)](Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t o = 0; o < map.size(); ++o) g[map[o]] += self.grad[o];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: nothing to concatenate");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw DimensionError("concat: axis out of range");
  std::size_t outer = 1, inner = 1, total = 0;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != s0[i]) throw DimensionError("concat: extents differ off the concat axis");
    extents.push_back(s[axis]);
    total += s[axis];
  }
  Shape os = s0;
  os[axis] = total;
  std::vector<double> out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pd = parts[k].data();
    std::size_t block = extents[k] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pd.data() + o * block, block, out.data() + o * total * inner + offset * inner);
    offset += extents[k];
  }
  return make_result(os, std::move(out), "concat", parts, [outer, inner, total, extents](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < extents.size(); ++k) {
      std::size_t block = extents[k] * inner;
      if (double* g = input_grad(self, k)) {
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = self.grad.data() + o * total * inner + off * inner;
          for (std::size_t i = 0; i < block; ++i) g[o * block + i] += src[i];
        }
      }
      off += extents[k];
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) throw DimensionError("slice: bad range");
  std::size_t outer = 1, inner = 1, n = s[axis], len = end - begin;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape os = s;
  os[axis] = len;
  auto xd = x.data();
  std::vector<double> out(outer * len * inner);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xd.data() + (o * n + begin) * inner, len * inner, out.data() + o * len * inner);
  return make_result(os, std::move(out), "slice", {x}, [outer, inner, n, begin, len](Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < len * inner; ++i) g[(o * n + begin) * inner + i] += self.grad[o * len * inner + i];
    }
  });
}

Tensor pad3d(const Tensor& x, const std::array<std::size_t, 6>& pads) {
  const Shape& s = x.shape();
  if (s.size() < 3) throw DimensionError("pad3d: needs at least 3 axes");
  std::size_t nd = s.size();
  std::size_t d = s[nd - 3], h = s[nd - 2], w = s[nd - 1];
  std::size_t od = d + pads[0] + pads[1], oh = h + pads[2] + pads[3], ow = w + pads[4] + pads[5];
  std::size_t outer = x.size() / (d * h * w);
  Shape os = s;
  os[nd - 3] = od;
  os[nd - 2] = oh;
  os[nd - 1] = ow;
  auto xd = x.data();
  std::vector<double> out(outer * od * oh * ow, 0.0);
  auto index = [=](std::size_t o, std::size_t z, std::size_t y) {
    return ((o * od + z + pads[0]) * oh + y + pads[2]) * ow + pads[4];
  };
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t z = 0; z < d; ++z)
      for (std::size_t y = 0; y < h; ++y)
        std::copy_n(xd.data() + ((o * d + z) * h + y) * w, w, out.data() + index(o, z, y));
  return make_result(os, std::move(out), "pad3d", {x}, [outer, d, h, w, index](Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t z = 0; z < d; ++z)
          for (std::size_t y = 0; y < h; ++y) {
            const double* src = self.grad.data() + index(o, z, y);
            double* dst = g + ((o * d + z) * h + y) * w;
            for (std::size_t i = 0; i < w; ++i) dst[i] += src[i];
          }
    }
  });
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  if (x.ndim() != 2) throw DimensionError("gather_rows: expects [T, C]");
  std::size_t rows = x.dim(0), c = x.dim(1);
  for (auto r : idx)
    if (r >= rows) throw DimensionError("gather_rows: row index out of range");
  auto xd = x.data();
  std::vector<double> out(idx.size() * c);
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(xd.data() + idx[i] * c, c, out.data() + i * c);
  return make_result({idx.size(), c}, std::move(out), "gather_rows", {x}, [idx, c](Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
    }
  });
}

Tensor scatter_rows(const Tensor& x, const std::vector<std::size_t>& idx, std::size_t rows) {
  if (x.ndim() != 2 || x.dim(0) != idx.size()) throw DimensionError("scatter_rows: expects x[len(idx), C]");
  std::size_t c = x.dim(1);
  auto xd = x.data();
  std::vector<double> out(rows * c, 0.0);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= rows) throw DimensionError("scatter_rows: row index out of range");
    for (std::size_t j = 0; j < c; ++j) out[idx[i] * c + j] += xd[i * c + j];
  }
  return make_result({rows, c}, std::move(out), "scatter_rows", {x}, [idx, c](Node& self) {
    if (double* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[idx[i] * c + j];
    }
  });
}

Tensor to_tokens(const Tensor& grid) {
  if (grid.ndim() != 5 || grid.dim(0) != 1) throw DimensionError("to_tokens: expects [1, C, D, H, W]");
  const Shape& s = grid.shape();
  return reshape(permute(grid, {0, 2, 3, 4, 1}), {s[2] * s[3] * s[4], s[1]});
}

Tensor from_tokens(const Tensor& tokens, std::size_t d, std::size_t h, std::size_t w) {
  if (tokens.ndim() != 2 || tokens.dim(0) != d * h * w) {
    throw DimensionError("from_tokens: token count does not match the grid");
  }
  std::size_t c = tokens.dim(1);
  return permute(reshape(tokens, {1, d, h, w, c}), {0, 4, 1, 2, 3});
}

}  // namespace samamba
