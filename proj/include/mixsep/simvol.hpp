#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mixsep/autodiff.hpp"
#include "mixsep/errors.hpp"
#include "mixsep/model.hpp"
#include "mixsep/tensor.hpp"

namespace mixsep::simvol {

using diffmath::BasicTensor;
using diffmath::Shape;
using diffmath::Tape;
using diffmath::Tensor;

enum class Aggregation { Max, Head, Sum };

namespace detail {

template <typename T>
void check_features(const BasicTensor<T>& a, const BasicTensor<T>& v) {
  if (a.rank() != 4 || v.rank() != 4) {
    throw ShapeError("similarity features must be rank-4 [C,K,F,T] and [C,K,H,W], got " +
                     diffmath::shape_str(a.shape()) + " and " + diffmath::shape_str(v.shape()));
  }
  if (a.extent(0) != v.extent(0) || a.extent(1) != v.extent(1)) {
    throw ShapeError("similarity features disagree on C or K: " + diffmath::shape_str(a.shape()) + " vs " +
                     diffmath::shape_str(v.shape()));
  }
}

}  // namespace detail

// Volume of one head: S_k[f,t,h,w] = sum_c a[c,k,f,t] * v[c,k,h,w].
template <typename T>
typename Tape<T>::Var head_volume(Tape<T>& tape, typename Tape<T>::Var a, typename Tape<T>::Var v, int head) {
  const auto& av = tape.val(a);
  const auto& vv = tape.val(v);
  detail::check_features(av, vv);
  const std::size_t C = av.extent(0), K = av.extent(1);
  if (head < 0 || static_cast<std::size_t>(head) >= K) {
    throw ShapeError("head index " + std::to_string(head) + " out of range for K=" + std::to_string(K));
  }
  const std::size_t F = av.extent(2), Tt = av.extent(3);
  const std::size_t H = vv.extent(2), W = vv.extent(3);
  const std::size_t FT = F * Tt, HW = H * W;

  std::vector<std::size_t> amap(FT * C);
  for (std::size_t ft = 0; ft < FT; ++ft) {
    for (std::size_t c = 0; c < C; ++c) amap[ft * C + c] = (c * K + head) * FT + ft;
  }
  std::vector<std::size_t> vmap(C * HW);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t s = 0; s < HW; ++s) vmap[c * HW + s] = (c * K + head) * HW + s;
  }
  auto a_mat = tape.index_map(a, std::move(amap), Shape{FT, C});
  auto v_mat = tape.index_map(v, std::move(vmap), Shape{C, HW});
  return tape.reshape(tape.matmul(a_mat, v_mat), Shape{F, Tt, H, W});
}

template <typename T>
typename Tape<T>::Var similarity_volume(Tape<T>& tape, typename Tape<T>::Var a, typename Tape<T>::Var v) {
  const std::size_t K = tape.val(a).extent(1);
  std::vector<typename Tape<T>::Var> heads;
  heads.reserve(K);
  for (std::size_t k = 0; k < K; ++k) heads.push_back(head_volume(tape, a, v, static_cast<int>(k)));
  return tape.stack0(heads);
}

template <typename T>
typename Tape<T>::Var aggregate(Tape<T>& tape, typename Tape<T>::Var volume, Aggregation mode, int head = 0) {
  const auto& vv = tape.val(volume);
  if (vv.rank() != 5) throw ShapeError("aggregate expects [K,F,T,H,W], got " + diffmath::shape_str(vv.shape()));
  switch (mode) {
    case Aggregation::Max:
      return tape.reduce_max(volume, {0}, false);
    case Aggregation::Sum:
      return tape.reduce_sum(volume, {0}, false);
    default:
      if (head < 0 || static_cast<std::size_t>(head) >= vv.extent(0)) {
        throw ShapeError("aggregate head index " + std::to_string(head) + " out of range");
      }
      return diffmath::select0(tape, volume, static_cast<std::size_t>(head));
  }
}

// Spatial max then frequency/time mean.
template <typename T>
typename Tape<T>::Var pooled_score(Tape<T>& tape, typename Tape<T>::Var agg) {
  const auto& av = tape.val(agg);
  if (av.rank() != 4) throw ShapeError("pooled_score expects [F,T,H,W], got " + diffmath::shape_str(av.shape()));
  auto spatial_max = tape.reduce_max(agg, {2, 3}, false);
  return tape.reduce_mean(spatial_max, {0, 1}, false);
}

// Mean over frequency and a frame range, yielding a spatial map.
template <typename T>
typename Tape<T>::Var heatmap(Tape<T>& tape, typename Tape<T>::Var agg, std::size_t t_begin, std::size_t t_end) {
  const auto& av = tape.val(agg);
  if (av.rank() != 4) throw ShapeError("heatmap expects [F,T,H,W], got " + diffmath::shape_str(av.shape()));
  const std::size_t F = av.extent(0), Tt = av.extent(1), H = av.extent(2), W = av.extent(3);
  if (t_begin >= t_end || t_end > Tt) {
    throw ShapeError("heatmap frame range [" + std::to_string(t_begin) + "," + std::to_string(t_end) +
                     ") invalid for T=" + std::to_string(Tt));
  }
  const std::size_t L = t_end - t_begin;
  std::vector<std::size_t> map(F * L * H * W);
  std::size_t i = 0;
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t t = t_begin; t < t_end; ++t) {
      for (std::size_t s = 0; s < H * W; ++s) map[i++] = (f * Tt + t) * H * W + s;
    }
  }
  auto sliced = tape.index_map(agg, std::move(map), Shape{F, L, H, W});
  return tape.reduce_mean(sliced, {0, 1}, false);
}

template <typename T>
typename Tape<T>::Var heatmap(Tape<T>& tape, typename Tape<T>::Var agg) {
  return heatmap(tape, agg, 0, tape.val(agg).extent(1));
}

// ---- tensor-level conveniences (no gradients) ------------------------------

template <typename T>
BasicTensor<T> similarity_volume(const BasicTensor<T>& a, const BasicTensor<T>& v) {
  Tape<T> tape;
  return tape.val(similarity_volume(tape, tape.input(a), tape.input(v)));
}

template <typename T>
BasicTensor<T> aggregate(const BasicTensor<T>& volume, Aggregation mode, int head = 0) {
  Tape<T> tape;
  return tape.val(aggregate(tape, tape.input(volume), mode, head));
}

template <typename T>
T pooled_score(const BasicTensor<T>& agg) {
  Tape<T> tape;
  return tape.val(pooled_score(tape, tape.input(agg)))[0];
}

template <typename T>
BasicTensor<T> heatmap(const BasicTensor<T>& agg, std::size_t t_begin, std::size_t t_end) {
  Tape<T> tape;
  return tape.val(heatmap(tape, tape.input(agg), t_begin, t_end));
}

// Half-pixel bilinear upsampling to image resolution.
template <typename T>
BasicTensor<T> upsample_bilinear(const BasicTensor<T>& map, std::size_t out_h, std::size_t out_w) {
  if (map.rank() != 2) throw ShapeError("upsample_bilinear expects [H,W], got " + diffmath::shape_str(map.shape()));
  const std::size_t H = map.extent(0), W = map.extent(1);
  BasicTensor<T> out(Shape{out_h, out_w});
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = std::clamp((static_cast<double>(y) + 0.5) * static_cast<double>(H) / out_h - 0.5, 0.0,
                                 static_cast<double>(H - 1));
    const std::size_t y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, H - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double sx = std::clamp((static_cast<double>(x) + 0.5) * static_cast<double>(W) / out_w - 0.5, 0.0,
                                   static_cast<double>(W - 1));
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, W - 1);
      const double fx = sx - static_cast<double>(x0);
      const double top = static_cast<double>(map[y0 * W + x0]) * (1 - fx) + static_cast<double>(map[y0 * W + x1]) * fx;
      const double bot = static_cast<double>(map[y1 * W + x0]) * (1 - fx) + static_cast<double>(map[y1 * W + x1]) * fx;
      out[y * out_w + x] = static_cast<T>(top * (1 - fy) + bot * fy);
    }
  }
  return out;
}

// 8-bit binary PGM, min-max normalized per map. Flat maps export as zeros.
inline void write_pgm(const std::filesystem::path& path, const Tensor& map) {
  if (map.rank() != 2) throw ShapeError("write_pgm expects [H,W], got " + diffmath::shape_str(map.shape()));
  const std::size_t H = map.extent(0), W = map.extent(1);
  float lo = map[0], hi = map[0];
  for (float v : map.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double range = static_cast<double>(hi) - static_cast<double>(lo);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for write: " + path.string());
  out << "P5\n" << W << ' ' << H << "\n255\n";
  std::string buf(H * W, '\0');
  for (std::size_t i = 0; i < H * W; ++i) {
    const double norm = range > 0 ? (static_cast<double>(map[i]) - lo) / range : 0.0;
    buf[i] = static_cast<char>(static_cast<unsigned char>(std::lround(norm * 255.0)));
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("short write: " + path.string());
}

}  // namespace mixsep::simvol
