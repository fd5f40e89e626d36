#include "apn/apu.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "apn/errors.hpp"
#include "apn/ops.hpp"

namespace apn::apu {

Var flatten(Var encoding) {
  const Shape& s = encoding.shape();
  if (s.size() != 3) throw ShapeMismatch("apu: encoding must be [c x h x w], got " + shape_str(s));
  if (s[0] == 0 || s[1] * s[2] == 0) throw ShapeMismatch("apu: empty encoding " + shape_str(s));
  return ops::reshape(encoding, {s[0], s[1] * s[2]});
}

Var attention(Var encoding_cn, Var heads) {
  if (heads.shape().size() != 2 || encoding_cn.shape().size() != 2 || heads.dim(1) != encoding_cn.dim(0)) {
    throw ShapeMismatch("apu attention: heads " + shape_str(heads.shape()) + " vs encoding " +
                        shape_str(encoding_cn.shape()));
  }
  return ops::softmax(ops::matmul(heads, encoding_cn), 1);
}

Var ensemble(Var encoding_nc, Var maps) {
  if (maps.shape().size() != 2 || encoding_nc.shape().size() != 2 || maps.dim(1) != encoding_nc.dim(0)) {
    throw ShapeMismatch("apu ensemble: maps " + shape_str(maps.shape()) + " vs encoding " +
                        shape_str(encoding_nc.shape()));
  }
  return ops::matmul(maps, encoding_nc);
}

Retrieval retrieve(Var encoding_nc, Var prototypes, const Options& opts) {
  if (prototypes.shape().size() != 2 || prototypes.dim(0) == 0) {
    throw TooFewPrototypes("apu retrieve: empty prototype pool");
  }
  if (encoding_nc.dim(1) != prototypes.dim(1)) {
    throw ShapeMismatch("apu retrieve: encoding " + shape_str(encoding_nc.shape()) + " vs prototypes " +
                        shape_str(prototypes.shape()));
  }
  Var x_unit = ops::normalize_rows(encoding_nc, opts.min_norm);
  Var p_unit = ops::normalize_rows(prototypes, opts.min_norm);
  Var cosine = ops::matmul(x_unit, ops::transpose(p_unit));
  Var scores = ops::softmax(ops::scale(cosine, opts.sharpness), 1);
  return {ops::matmul(scores, prototypes), scores};
}

Var distinguish(Var prototypes) {
  const Shape& s = prototypes.shape();
  if (s.size() != 2 || s[0] < 2 || s[1] < 2) {
    throw TooFewPrototypes("apu distinguish: need M >= 2 and c >= 2, got " + shape_str(s));
  }
  Var centered = ops::center_rows(prototypes);
  return ops::scale(ops::matmul(centered, ops::transpose(centered)), 1.0 / static_cast<double>(s[1]));
}

Var aggregate(Var encoding, Var normalcy_nc) {
  const Shape& s = encoding.shape();
  if (s.size() != 3 || normalcy_nc.shape() != Shape{s[1] * s[2], s[0]}) {
    throw ShapeMismatch("apu aggregate: encoding " + shape_str(s) + " vs normalcy " +
                        shape_str(normalcy_nc.shape()));
  }
  return ops::add(encoding, ops::reshape(ops::transpose(normalcy_nc), s));
}

Result forward(Var encoding, Var heads, const Options& opts) {
  Result r;
  Var enc_cn = flatten(encoding);
  r.height = encoding.dim(1);
  r.width = encoding.dim(2);
  r.encoding_nc = ops::transpose(enc_cn);
  r.maps = attention(enc_cn, heads);
  r.prototypes = ensemble(r.encoding_nc, r.maps);
  Retrieval ret = retrieve(r.encoding_nc, r.prototypes, opts);
  r.scores = ret.scores;
  r.normalcy = ret.normalcy;
  if (r.prototypes.dim(0) >= 2 && r.prototypes.dim(1) >= 2) r.covariance = distinguish(r.prototypes);
  r.out = aggregate(encoding, r.normalcy);
  return r;
}

std::vector<Tensor> normalcy_images(const Tensor& maps, std::size_t height, std::size_t width) {
  if (maps.rank() != 2 || maps.dim(1) != height * width) {
    throw ShapeMismatch("normalcy_images: maps " + shape_str(maps.shape()) + " vs " + std::to_string(height) + "x" +
                        std::to_string(width));
  }
  const std::size_t m = maps.dim(0), n = maps.dim(1);
  std::vector<Tensor> images;
  Tensor total({height, width});
  for (std::size_t k = 0; k < m; ++k) {
    Tensor img({height, width});
    for (std::size_t i = 0; i < n; ++i) {
      img[i] = maps[k * n + i];
      total[i] += img[i];
    }
    images.push_back(std::move(img));
  }
  images.push_back(std::move(total));
  return images;
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 2) throw ShapeMismatch("write_pgm: expected [h x w], got " + shape_str(image.shape()));
  const auto [lo_it, hi_it] = std::minmax_element(image.data().begin(), image.data().end());
  const double lo = *lo_it, range = *hi_it - *lo_it;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("write_pgm: cannot open " + path.string());
  os << "P5\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  for (double v : image.data()) {
    const double unit = range > 0.0 ? (v - lo) / range : 0.0;
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(unit * 255.0))));
  }
}

}  // namespace apn::apu
