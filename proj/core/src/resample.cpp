#include "voxharm/resample.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "voxharm/error.hpp"
#include "voxharm/parallel.hpp"

namespace voxharm {
namespace {

const double kPole = std::sqrt(3.0) - 2.0;

// Samples appended on each side of a line before prefiltering. The extension
// continues the cubic through the four end samples, so polynomials up to
// degree 3 are reproduced right up to the boundary; the mirror condition
// then applies at the padded ends, where its error has decayed by |z|^pad.
constexpr std::size_t kPad = 12;

using LineOp = std::function<void(std::span<const double> in, std::span<double> out)>;

// Applies op to every line along `axis`; returns the new array.
std::vector<double> apply_axis(const std::vector<double>& in, const Index3& dims, int axis,
                               std::size_t out_len, const LineOp& op) {
  Index3 out_dims = dims;
  out_dims[axis] = out_len;
  std::vector<double> out(out_dims[0] * out_dims[1] * out_dims[2]);

  const int u = (axis + 1) % 3;
  const int v = (axis + 2) % 3;
  const std::array<std::size_t, 3> in_stride{1, dims[0], dims[0] * dims[1]};
  const std::array<std::size_t, 3> out_stride{1, out_dims[0], out_dims[0] * out_dims[1]};
  const std::size_t n = dims[axis];

  parallel_for(dims[v], [&](std::size_t jv) {
    std::vector<double> line(n), result(out_len);
    for (std::size_t ju = 0; ju < dims[u]; ++ju) {
      const std::size_t in_base = ju * in_stride[u] + jv * in_stride[v];
      const std::size_t out_base = ju * out_stride[u] + jv * out_stride[v];
      for (std::size_t k = 0; k < n; ++k) line[k] = in[in_base + k * in_stride[axis]];
      op(line, result);
      for (std::size_t k = 0; k < out_len; ++k) out[out_base + k * out_stride[axis]] = result[k];
    }
  });
  return out;
}

// Cubic Lagrange extrapolation through samples at 0..3 evaluated at t.
double cubic_extrapolate(double f0, double f1, double f2, double f3, double t) {
  const double l0 = (t - 1) * (t - 2) * (t - 3) / -6.0;
  const double l1 = t * (t - 2) * (t - 3) / 2.0;
  const double l2 = t * (t - 1) * (t - 3) / -2.0;
  const double l3 = t * (t - 1) * (t - 2) / 6.0;
  return l0 * f0 + l1 * f1 + l2 * f2 + l3 * f3;
}

std::size_t mirror_index(std::ptrdiff_t i, std::size_t len) {
  const auto n = static_cast<std::ptrdiff_t>(len);
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * n - 2;
  i %= period;
  if (i < 0) i += period;
  if (i >= n) i = period - i;
  return static_cast<std::size_t>(i);
}

// In-place B-spline prefilter with mirror boundaries (Unser's recursion).
void prefilter(std::vector<double>& c) {
  const std::size_t len = c.size();
  if (len < 2) return;
  const double z = kPole;
  const double gain = (1.0 - z) * (1.0 - 1.0 / z);
  for (auto& x : c) x *= gain;

  const auto horizon = static_cast<std::size_t>(std::ceil(std::log(1e-17) / std::log(std::abs(z))));
  if (horizon < len) {
    double zn = z;
    double sum = c[0];
    for (std::size_t k = 1; k < horizon; ++k) {
      sum += zn * c[k];
      zn *= z;
    }
    c[0] = sum;
  } else {
    double zn = z;
    const double iz = 1.0 / z;
    double z2n = std::pow(z, static_cast<double>(len - 1));
    double sum = c[0] + z2n * c[len - 1];
    z2n *= z2n * iz;
    for (std::size_t k = 1; k + 1 < len; ++k) {
      sum += (zn + z2n) * c[k];
      zn *= z;
      z2n *= iz;
    }
    c[0] = sum / (1.0 - zn * zn);
  }
  for (std::size_t k = 1; k < len; ++k) c[k] += z * c[k - 1];
  c[len - 1] = (z / (z * z - 1.0)) * (z * c[len - 2] + c[len - 1]);
  for (std::size_t k = len - 1; k-- > 0;) c[k] = z * (c[k + 1] - c[k]);
}

struct CubicWeights {
  std::ptrdiff_t first;  // coefficient index of the first tap
  std::array<double, 4> w;
};

CubicWeights cubic_weights(double x) {
  const double fl = std::floor(x);
  const double t = x - fl;
  const double t2 = t * t, t3 = t2 * t;
  const double omt = 1.0 - t;
  return {static_cast<std::ptrdiff_t>(fl) - 1,
          {omt * omt * omt / 6.0, (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
           (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0, t3 / 6.0}};
}

LineOp cubic_op(std::size_t n, double ratio) {
  return [n, ratio](std::span<const double> in, std::span<double> out) {
    std::vector<double> c(n + 2 * kPad);
    for (std::size_t k = 0; k < n; ++k) c[kPad + k] = in[k];
    for (std::size_t d = 1; d <= kPad; ++d) {
      const double t = -static_cast<double>(d);
      c[kPad - d] = cubic_extrapolate(in[0], in[1], in[2], in[3], t);
      c[kPad + n - 1 + d] = cubic_extrapolate(in[n - 1], in[n - 2], in[n - 3], in[n - 4], t);
    }
    prefilter(c);
    for (std::size_t k = 0; k < out.size(); ++k) {
      const double x = static_cast<double>(k) * ratio + static_cast<double>(kPad);
      const auto cw = cubic_weights(x);
      double acc = 0.0;
      for (int tap = 0; tap < 4; ++tap)
        acc += cw.w[tap] * c[mirror_index(cw.first + tap, c.size())];
      out[k] = acc;
    }
  };
}

LineOp linear_op(std::size_t n, double ratio) {
  return [n, ratio](std::span<const double> in, std::span<double> out) {
    for (std::size_t k = 0; k < out.size(); ++k) {
      if (n == 1) {
        out[k] = in[0];
        continue;
      }
      const double x = std::clamp(static_cast<double>(k) * ratio, 0.0, static_cast<double>(n - 1));
      const auto i = std::min(static_cast<std::size_t>(x), n - 2);
      const double t = x - static_cast<double>(i);
      out[k] = (1.0 - t) * in[i] + t * in[i + 1];
    }
  };
}

// Nearest source index for output position k; ties resolve to the lower index.
std::vector<std::size_t> nearest_table(std::size_t n, std::size_t m, double ratio) {
  std::vector<std::size_t> table(m);
  for (std::size_t k = 0; k < m; ++k) {
    const double x = static_cast<double>(k) * ratio;
    const double idx = std::ceil(x - 0.5);
    table[k] = static_cast<std::size_t>(std::clamp(idx, 0.0, static_cast<double>(n - 1)));
  }
  return table;
}

template <typename T>
std::vector<T> nearest_gather(std::span<const T> in, const Index3& dims, const Index3& out_dims,
                              const Vec3& ratio) {
  std::array<std::vector<std::size_t>, 3> table;
  for (int a = 0; a < 3; ++a) table[a] = nearest_table(dims[a], out_dims[a], ratio[a]);
  std::vector<T> out(out_dims[0] * out_dims[1] * out_dims[2]);
  parallel_for(out_dims[2], [&](std::size_t z) {
    for (std::size_t y = 0; y < out_dims[1]; ++y) {
      const std::size_t src_row = dims[0] * (table[1][y] + dims[1] * table[2][z]);
      const std::size_t dst_row = out_dims[0] * (y + out_dims[1] * z);
      for (std::size_t x = 0; x < out_dims[0]; ++x) out[dst_row + x] = in[src_row + table[0][x]];
    }
  });
  return out;
}

Vec3 index_ratio(const Geometry& g, const Vec3& target) {
  return {target[0] / g.spacing[0], target[1] / g.spacing[1], target[2] / g.spacing[2]};
}

Geometry output_geometry(const Geometry& g, const Vec3& target) {
  Geometry out = g;
  out.dims = resampled_dims(g, target);
  out.spacing = target;
  return out;
}

void check_order(int order) {
  if (order != 0 && order != 1 && order != 3)
    throw Error(ErrorKind::invalid_argument,
                fmt::format("interpolation order {} not in {{0, 1, 3}}", order));
}

void check_spacing(const Vec3& spacing) {
  for (double s : spacing)
    if (!(std::isfinite(s) && s > 0.0))
      throw Error(ErrorKind::invalid_argument, fmt::format("target spacing {} is not positive", s));
}

}  // namespace

void validate(const ResampleSpec& spec) {
  check_spacing(spec.target_spacing);
  check_order(spec.intensity_order);
  check_order(spec.label_order);
}

Index3 resampled_dims(const Geometry& geometry, const Vec3& target_spacing) {
  check_spacing(target_spacing);
  Index3 out{};
  for (int a = 0; a < 3; ++a) {
    const double extent =
        static_cast<double>(geometry.dims[a]) * geometry.spacing[a] / target_spacing[a];
    const double r = std::round(extent);
    if (!std::isfinite(r) || r > 1e12)
      throw Error(ErrorKind::out_of_range, "resampled dimension overflows");
    out[a] = std::max<std::size_t>(1, static_cast<std::size_t>(r));
  }
  return out;
}

Volume resample_volume(const Volume& volume, const Vec3& target_spacing, int order) {
  check_order(order);
  const Geometry& g = volume.geometry();
  const Geometry out_geom = output_geometry(g, target_spacing);
  if (out_geom.voxel_count() == 0) throw Error(ErrorKind::invalid_argument, "zero-sized output");
  for (double v : volume.data())
    if (!std::isfinite(v)) throw Error(ErrorKind::numeric, "resample: non-finite input value");
  const Vec3 ratio = index_ratio(g, target_spacing);

  if (order == 0)
    return Volume(out_geom, nearest_gather<double>(volume.data(), g.dims, out_geom.dims, ratio));

  std::vector<double> data(volume.data().begin(), volume.data().end());
  Index3 dims = g.dims;
  for (int a = 0; a < 3; ++a) {
    const std::size_t n = dims[a];
    const std::size_t m = out_geom.dims[a];
    int axis_order = order;
    if (axis_order == 3 && n < 4) {
      spdlog::warn("resample: axis {} has {} samples; using linear interpolation along it", a, n);
      axis_order = 1;
    }
    const LineOp op = axis_order == 3 ? cubic_op(n, ratio[a]) : linear_op(n, ratio[a]);
    data = apply_axis(data, dims, a, m, op);
    dims[a] = m;
  }
  return Volume(out_geom, std::move(data));
}

Volume resample_volume(const Volume& volume, const ResampleSpec& spec) {
  validate(spec);
  return resample_volume(volume, spec.target_spacing, spec.intensity_order);
}

LabelMap resample_labels(const LabelMap& labels, const ResampleSpec& spec) {
  validate(spec);
  if (spec.label_order != 0)
    throw Error(ErrorKind::unsupported, "label maps are resampled with nearest neighbour only");
  const Geometry& g = labels.geometry();
  const Geometry out_geom = output_geometry(g, spec.target_spacing);
  return LabelMap(out_geom,
                  nearest_gather<Label>(labels.data(), g.dims, out_geom.dims,
                                        index_ratio(g, spec.target_spacing)),
                  labels.vocabulary());
}

}  // namespace voxharm
