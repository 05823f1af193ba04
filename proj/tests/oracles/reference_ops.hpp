#pragma once

// Straightforward loop implementations used only as test oracles. They share
// no code with the shipped kernels.

#include <cstdint>
#include <limits>
#include <vector>

namespace rmn::oracle {

struct Conv2dCase {
  std::int64_t n, c, h, w;
  std::int64_t out_ch, kh, kw, stride, padding;
  bool bias;
};

inline std::int64_t sliding_positions(std::int64_t size, std::int64_t kernel, std::int64_t stride,
                                      std::int64_t padding) {
  // Count window origins by stepping until the window leaves the padded input.
  std::int64_t count = 0;
  for (std::int64_t start = -padding; start + kernel <= size + padding; start += stride) ++count;
  return count;
}

// Six nested loops over (n, o, y, x, c, ky, kx); out-of-range taps are skipped.
template <typename T>
std::vector<T> naive_conv2d(const Conv2dCase& k, const std::vector<T>& input, const std::vector<T>& weight,
                            const std::vector<T>& bias) {
  const std::int64_t oh = sliding_positions(k.h, k.kh, k.stride, k.padding);
  const std::int64_t ow = sliding_positions(k.w, k.kw, k.stride, k.padding);
  std::vector<T> out(static_cast<std::size_t>(k.n * k.out_ch * oh * ow));
  for (std::int64_t b = 0; b < k.n; ++b)
    for (std::int64_t o = 0; o < k.out_ch; ++o)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t x = 0; x < ow; ++x) {
          T acc = 0;
          for (std::int64_t c = 0; c < k.c; ++c)
            for (std::int64_t i = 0; i < k.kh; ++i)
              for (std::int64_t j = 0; j < k.kw; ++j) {
                const std::int64_t iy = y * k.stride - k.padding + i;
                const std::int64_t ix = x * k.stride - k.padding + j;
                if (iy < 0 || iy >= k.h || ix < 0 || ix >= k.w) continue;
                acc += weight[((o * k.c + c) * k.kh + i) * k.kw + j] * input[((b * k.c + c) * k.h + iy) * k.w + ix];
              }
          if (k.bias) acc += bias[o];
          out[((b * k.out_ch + o) * oh + y) * ow + x] = acc;
        }
  return out;
}

template <typename T>
std::vector<T> naive_maxpool2d(std::int64_t planes, std::int64_t h, std::int64_t w, const std::vector<T>& input,
                               std::int64_t kernel, std::int64_t stride, std::int64_t padding) {
  const std::int64_t oh = sliding_positions(h, kernel, stride, padding);
  const std::int64_t ow = sliding_positions(w, kernel, stride, padding);
  std::vector<T> out;
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t x = 0; x < ow; ++x) {
        T best = -std::numeric_limits<T>::infinity();
        for (std::int64_t i = 0; i < kernel; ++i)
          for (std::int64_t j = 0; j < kernel; ++j) {
            const std::int64_t iy = y * stride - padding + i, ix = x * stride - padding + j;
            if (iy >= 0 && iy < h && ix >= 0 && ix < w && input[(p * h + iy) * w + ix] > best)
              best = input[(p * h + iy) * w + ix];
          }
        out.push_back(best);
      }
  return out;
}

}  // namespace rmn::oracle
