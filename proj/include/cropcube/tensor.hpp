#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <functional>
#include <numeric>

namespace cropcube {

using Index = Eigen::Index;

/// Row-major 2-D image, the natural layout for [H, W] raster planes.
template <typename Scalar>
using Image = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using ImageMap = Eigen::Map<Image<Scalar>>;

template <typename Scalar>
using ConstImageMap = Eigen::Map<const Image<Scalar>>;

using Imagef = Image<float>;

/// Dense row-major tensor of fixed rank with contiguous Eigen storage. The two
/// trailing dimensions are always (H, W), so every leading index selects an
/// image plane that can be viewed as an Eigen array.
template <typename Scalar, int Rank>
class Tensor {
  static_assert(Rank >= 2, "tensor needs at least an image plane");

 public:
  using Dims = std::array<Index, Rank>;
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() { dims_.fill(0); }

  explicit Tensor(const Dims& dims) : dims_(dims) {
    storage_ = Storage::Zero(count(dims));
  }

  static Tensor Zero(const Dims& dims) { return Tensor(dims); }

  static Tensor Constant(const Dims& dims, Scalar value) {
    Tensor t(dims);
    t.storage_.setConstant(value);
    return t;
  }

  const Dims& dims() const { return dims_; }
  Index dim(int axis) const { return dims_[static_cast<std::size_t>(axis)]; }
  Index size() const { return storage_.size(); }
  bool empty() const { return storage_.size() == 0; }

  Scalar* data() { return storage_.data(); }
  const Scalar* data() const { return storage_.data(); }
  Storage& array() { return storage_; }
  const Storage& array() const { return storage_; }

  template <typename... I>
  Scalar& operator()(I... idx) {
    static_assert(sizeof...(I) == Rank);
    return storage_[offset({static_cast<Index>(idx)...})];
  }

  template <typename... I>
  const Scalar& operator()(I... idx) const {
    static_assert(sizeof...(I) == Rank);
    return storage_[offset({static_cast<Index>(idx)...})];
  }

  Index plane_size() const { return dims_[Rank - 2] * dims_[Rank - 1]; }

  /// Image plane selected by the leading indices.
  template <typename... I>
  ImageMap<Scalar> plane(I... lead) {
    static_assert(sizeof...(I) == Rank - 2);
    return ImageMap<Scalar>(storage_.data() + plane_offset({static_cast<Index>(lead)...}),
                            dims_[Rank - 2], dims_[Rank - 1]);
  }

  template <typename... I>
  ConstImageMap<Scalar> plane(I... lead) const {
    static_assert(sizeof...(I) == Rank - 2);
    return ConstImageMap<Scalar>(storage_.data() + plane_offset({static_cast<Index>(lead)...}),
                                 dims_[Rank - 2], dims_[Rank - 1]);
  }

  /// Contiguous block spanned by the first leading index (e.g. one timestep).
  Eigen::Map<Storage> slab(Index lead0) {
    const Index n = size() / std::max<Index>(dims_[0], 1);
    return Eigen::Map<Storage>(storage_.data() + lead0 * n, n);
  }
  Eigen::Map<const Storage> slab(Index lead0) const {
    const Index n = size() / std::max<Index>(dims_[0], 1);
    return Eigen::Map<const Storage>(storage_.data() + lead0 * n, n);
  }

  /// Bitwise equality (NaN payloads included).
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ &&
           (a.size() == 0 || std::memcmp(a.storage_.data(), b.storage_.data(),
                       static_cast<std::size_t>(a.size()) * sizeof(Scalar)) == 0);
  }

  static Index count(const Dims& dims) {
    return std::accumulate(dims.begin(), dims.end(), Index{1}, std::multiplies<>());
  }

 private:
  Index offset(const Dims& idx) const {
    Index off = 0;
    for (int k = 0; k < Rank; ++k) off = off * dims_[k] + idx[k];
    return off;
  }

  Index plane_offset(const std::array<Index, Rank - 2>& lead) const {
    Index off = 0;
    for (int k = 0; k < Rank - 2; ++k) off = off * dims_[k] + lead[k];
    return off * plane_size();
  }

  Dims dims_;
  Storage storage_;
};

using Tensor3f = Tensor<float, 3>;
using Tensor4f = Tensor<float, 4>;
using Tensor3u8 = Tensor<std::uint8_t, 3>;

}  // namespace cropcube
