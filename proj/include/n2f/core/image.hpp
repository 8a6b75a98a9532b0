#pragma once

#include <Eigen/Core>

#include <cstdint>

#include "n2f/core/error.hpp"

namespace n2f {

// Dense image plane indexed (row, col) = (v, u); v grows downward, u rightward.
template <typename T>
using ImageT = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using ImageXd = ImageT<double>;
using ImageX8 = ImageT<std::uint8_t>;
using ImageX16 = ImageT<std::uint16_t>;
using MaskImage = ImageT<bool>;

// Linear pixel index used wherever pixels need a total order.
inline std::int64_t pixel_index(Eigen::Index v, Eigen::Index u, Eigen::Index width) {
  return static_cast<std::int64_t>(v) * width + u;
}

// Planar RGB, channel values in [0, 1].
struct RgbImage {
  ImageXd r, g, b;

  Eigen::Index height() const { return r.rows(); }
  Eigen::Index width() const { return r.cols(); }

  static RgbImage constant(Eigen::Index h, Eigen::Index w, double cr, double cg, double cb) {
    return {ImageXd::Constant(h, w, cr), ImageXd::Constant(h, w, cg), ImageXd::Constant(h, w, cb)};
  }
};

// Box-filter downscale by an integer factor; the mean of each factor x factor cell.
template <typename T>
ImageT<T> downscale_area(const ImageT<T>& in, int factor) {
  if (factor < 1 || in.rows() % factor != 0 || in.cols() % factor != 0) {
    throw InvalidInputError("downscale_area: dimensions not divisible by factor");
  }
  ImageT<T> out(in.rows() / factor, in.cols() / factor);
  const T norm = static_cast<T>(1) / static_cast<T>(factor * factor);
  for (Eigen::Index v = 0; v < out.rows(); ++v) {
    for (Eigen::Index u = 0; u < out.cols(); ++u) {
      out(v, u) = in.block(v * factor, u * factor, factor, factor).sum() * norm;
    }
  }
  return out;
}

}  // namespace n2f
