#include "evc/fft.hpp"

#include <cmath>

#include "evc/errors.hpp"

namespace evc {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft_complex(std::vector<double>& re, std::vector<double>& im, bool inverse) {
  std::size_t n = re.size();
  if (im.size() != n) throw ShapeError("fft: re/im length mismatch");
  if (!is_power_of_two(n)) throw ContractError("fft: length must be a power of two");
  // bit reversal
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  const double pi = 3.14159265358979323846;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    double wr = std::cos(ang), wi = std::sin(ang);
    for (std::size_t i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::size_t a = i + k, b = i + k + len / 2;
        double ur = re[a], ui = im[a];
        double vr = re[b] * cr - im[b] * ci;
        double vi = re[b] * ci + im[b] * cr;
        re[a] = ur + vr;
        im[a] = ui + vi;
        re[b] = ur - vr;
        im[b] = ui - vi;
        double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
  if (inverse) {
    double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      re[i] *= inv;
      im[i] *= inv;
    }
  }
}

}  // namespace evc
