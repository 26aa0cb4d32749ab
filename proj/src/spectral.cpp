#include "cropcube/spectral.hpp"

#include <algorithm>

namespace cropcube {

std::string_view to_string(IndexKind kind) noexcept {
  switch (kind) {
    case IndexKind::NDVI: return "NDVI";
    case IndexKind::GCVI: return "GCVI";
    case IndexKind::RECI: return "RECI";
    case IndexKind::RVI: return "RVI";
  }
  return "?";
}

std::optional<IndexKind> parse_index_kind(std::string_view text) noexcept {
  for (IndexKind k : {IndexKind::NDVI, IndexKind::GCVI, IndexKind::RECI, IndexKind::RVI})
    if (to_string(k) == text) return k;
  return std::nullopt;
}

namespace {

std::pair<std::string_view, std::string_view> source_bands(IndexKind kind, std::string_view red_edge) {
  switch (kind) {
    case IndexKind::NDVI: return {"NIR", "R"};
    case IndexKind::GCVI: return {"NIR", "G"};
    case IndexKind::RECI: return {"NIR", red_edge};
    case IndexKind::RVI: return {"VV", "VH"};
  }
  return {"", ""};
}

}  // namespace

BandMap resolve_band_map(const DataCube& cube, IndexKind kind, std::string_view red_edge) {
  const auto [a, b] = source_bands(kind, red_edge);
  for (Satellite sat : cube.satellite_order) {
    const auto ia = find_channel(cube, a, to_string(sat));
    const auto ib = find_channel(cube, b, to_string(sat));
    if (ia && ib) return {*ia, *ib};
  }
  const auto ia = find_channel(cube, a);
  const auto ib = find_channel(cube, b);
  if (!ia || !ib)
    fail(ErrorCode::MissingBand, std::string(to_string(kind)) + " needs bands " + std::string(a) + " and " +
                                     std::string(b));
  return {*ia, *ib};
}

Tensor3f compute_index(IndexKind kind, const DataCube& cube, const BandMap& map) {
  const Index c = cube.channels();
  if (map.first < 0 || map.first >= c || map.second < 0 || map.second >= c)
    fail(ErrorCode::MissingBand, "band map refers to a channel outside the cube");
  Tensor3f out = Tensor3f::Zero({cube.timesteps(), cube.height(), cube.width()});
  for (Index t = 0; t < cube.timesteps(); ++t) {
    if (cube.timestep_mask[static_cast<std::size_t>(t)] == 0) continue;
    const Image<double> x = cube.data.plane(t, map.first).cast<double>();
    const Image<double> y = cube.data.plane(t, map.second).cast<double>();
    Image<double> value, den;
    switch (kind) {
      case IndexKind::NDVI: den = x + y; value = (x - y) / den; break;
      case IndexKind::GCVI:
      case IndexKind::RECI: den = y; value = x / den - 1.0; break;
      case IndexKind::RVI: den = x + y; value = 4.0 * y / den; break;
    }
    out.plane(t) = (den.abs() < kIndexEpsilon).select(0.0, value).cast<float>();
  }
  return out;
}

Tensor3f compute_index(IndexKind kind, const DataCube& cube) {
  return compute_index(kind, cube, resolve_band_map(cube, kind));
}

DataCube append_index_channels(const DataCube& cube, std::span<const IndexKind> kinds, std::string_view red_edge) {
  if (kinds.empty()) return cube;
  const Index c0 = cube.channels();
  const Index c1 = c0 + static_cast<Index>(kinds.size());
  std::vector<Tensor3f> extra;
  for (IndexKind k : kinds) extra.push_back(compute_index(k, cube, resolve_band_map(cube, k, red_edge)));

  DataCube out = cube;
  out.data = Tensor4f::Zero({cube.timesteps(), c1, cube.height(), cube.width()});
  if (out.channel_sources.empty()) out.channel_sources.assign(static_cast<std::size_t>(c0), "");
  for (Index t = 0; t < cube.timesteps(); ++t) {
    for (Index c = 0; c < c0; ++c) out.data.plane(t, c) = cube.data.plane(t, c);
    for (std::size_t k = 0; k < extra.size(); ++k) out.data.plane(t, c0 + static_cast<Index>(k)) = extra[k].plane(t);
  }
  for (IndexKind k : kinds) {
    out.band_names.push_back("IDX_" + std::string(to_string(k)));
    out.channel_sources.emplace_back(kDerivedSource);
  }
  return out;
}

DataCube fuse_early(std::span<const DataCube> cubes) {
  if (cubes.empty()) fail(ErrorCode::EmptyInput, "fuse_early needs at least one cube");
  const DataCube& ref = cubes.front();
  if (cubes.size() == 1) return ref;
  Index c_total = 0;
  bool any_pixel_mask = false;
  for (const DataCube& cube : cubes) {
    if (cube.timesteps() != ref.timesteps() || cube.height() != ref.height() || cube.width() != ref.width() ||
        !(cube.geotransform == ref.geotransform))
      fail(ErrorCode::ShapeMismatch, "fused cubes must share T, H, W and geotransform");
    if (cube.season_name != ref.season_name || cube.year != ref.year)
      fail(ErrorCode::SeasonMismatch, "fused cubes must share season and year");
    c_total += cube.channels();
    any_pixel_mask = any_pixel_mask || cube.pixel_mask.has_value();
  }

  const Index t_len = ref.timesteps(), h = ref.height(), w = ref.width();
  DataCube out = DataCube::zeros(t_len, c_total, h, w);
  out.season_name = ref.season_name;
  out.year = ref.year;
  out.geotransform = ref.geotransform;
  out.plot_id = ref.plot_id;
  if (any_pixel_mask) out.pixel_mask = Tensor3u8::Zero({t_len, h, w});

  Index c0 = 0;
  for (const DataCube& cube : cubes) {
    if (cube.plot_id != out.plot_id) out.plot_id.reset();
    for (Index t = 0; t < t_len; ++t) {
      for (Index c = 0; c < cube.channels(); ++c) out.data.plane(t, c0 + c) = cube.data.plane(t, c);
      auto& m = out.timestep_mask[static_cast<std::size_t>(t)];
      const std::uint8_t mt = cube.timestep_mask[static_cast<std::size_t>(t)];
      m = (m || mt) ? 1 : 0;
      if (any_pixel_mask) {
        auto pm = out.pixel_mask->plane(t);
        if (cube.pixel_mask) pm = pm.max(cube.pixel_mask->plane(t));
        else if (mt) pm.setConstant(1);
      }
    }
    out.band_names.insert(out.band_names.end(), cube.band_names.begin(), cube.band_names.end());
    if (cube.channel_sources.empty())
      out.channel_sources.insert(out.channel_sources.end(), static_cast<std::size_t>(cube.channels()), "");
    else
      out.channel_sources.insert(out.channel_sources.end(), cube.channel_sources.begin(), cube.channel_sources.end());
    for (Satellite s : cube.satellite_order)
      if (std::find(out.satellite_order.begin(), out.satellite_order.end(), s) == out.satellite_order.end())
        out.satellite_order.push_back(s);
    c0 += cube.channels();
  }
  return out;
}

DataCube mask_actual_season(const DataCube& cube, Index sow_offset, Index harvest_offset) {
  if (sow_offset < 0 || sow_offset > harvest_offset || harvest_offset >= cube.timesteps())
    fail(ErrorCode::InvalidWindow, "actual season [" + std::to_string(sow_offset) + ", " +
                                       std::to_string(harvest_offset) + "] does not fit T=" +
                                       std::to_string(cube.timesteps()));
  DataCube out = cube;
  for (Index t = 0; t < cube.timesteps(); ++t) {
    if (t >= sow_offset && t <= harvest_offset) continue;
    out.data.slab(t).setZero();
    out.timestep_mask[static_cast<std::size_t>(t)] = 0;
    if (out.pixel_mask) out.pixel_mask->plane(t).setZero();
  }
  return out;
}

}  // namespace cropcube
