#include "dpseq/stain.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

namespace dpseq {

double od_from_u8(std::uint8_t v) {
  return -std::log10(std::max<double>(v, 1.0) / 255.0);
}

std::uint8_t u8_from_od(double od) {
  const double v = 255.0 * std::pow(10.0, -od);
  return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

std::vector<double> od_transform(const ImageU8& image) {
  std::vector<double> od(image.pixels.size());
  for (std::size_t i = 0; i < image.pixels.size(); ++i) od[i] = od_from_u8(image.pixels[i]);
  return od;
}

ImageU8 od_inverse(const std::vector<double>& od, std::size_t height, std::size_t width) {
  if (od.size() != height * width * 3)
    throw ImageError("od_inverse size mismatch: " + std::to_string(od.size()) + " values for " +
                     std::to_string(height) + "x" + std::to_string(width));
  ImageU8 image(height, width);
  for (std::size_t i = 0; i < od.size(); ++i) image.pixels[i] = u8_from_od(od[i]);
  return image;
}

namespace {

double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p / 100.0 * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

// pixels with an OD vector longer than beta
std::vector<Eigen::Vector3d> tissue_od(const ImageU8& tile, double beta) {
  std::vector<Eigen::Vector3d> pts;
  const std::size_t n = tile.height * tile.width;
  pts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Vector3d od(od_from_u8(tile.pixels[3 * i]), od_from_u8(tile.pixels[3 * i + 1]),
                       od_from_u8(tile.pixels[3 * i + 2]));
    if (od.norm() > beta) pts.push_back(od);
  }
  return pts;
}

Eigen::Matrix<double, 3, 2> profile_matrix(const StainProfile& p) {
  Eigen::Matrix<double, 3, 2> m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c) m(r, c) = p.stain_matrix[r][c];
  return m;
}

// non-negative least squares for the 2-stain mixing model
Eigen::Vector2d nnls2(const Eigen::Matrix<double, 3, 2>& m, const Eigen::Vector3d& od) {
  const Eigen::Vector3d a = m.col(0), b = m.col(1);
  const double aa = a.dot(a), bb = b.dot(b), ab = a.dot(b);
  const double ay = a.dot(od), by = b.dot(od);
  const double det = aa * bb - ab * ab;
  Eigen::Vector2d c;
  if (std::abs(det) > 1e-12) {
    c[0] = (bb * ay - ab * by) / det;
    c[1] = (aa * by - ab * ay) / det;
  } else {
    c[0] = ay / std::max(aa, 1e-12);
    c[1] = 0.0;
  }
  if (c[0] < 0.0) {
    c[0] = 0.0;
    c[1] = std::max(0.0, by / std::max(bb, 1e-12));
  } else if (c[1] < 0.0) {
    c[1] = 0.0;
    c[0] = std::max(0.0, ay / std::max(aa, 1e-12));
  }
  return c;
}

std::array<double, 2> concentration_maxima(const std::vector<Eigen::Vector3d>& pts,
                                           const Eigen::Matrix<double, 3, 2>& m) {
  std::vector<double> c0, c1;
  c0.reserve(pts.size());
  c1.reserve(pts.size());
  for (const auto& od : pts) {
    Eigen::Vector2d c = nnls2(m, od);
    c0.push_back(c[0]);
    c1.push_back(c[1]);
  }
  return {percentile(std::move(c0), 99.0), percentile(std::move(c1), 99.0)};
}

}  // namespace

StainProfile estimate_stains(const ImageU8& tile, double beta, double alpha,
                             std::size_t min_tissue_pixels) {
  std::vector<Eigen::Vector3d> pts = tissue_od(tile, beta);
  if (pts.size() < min_tissue_pixels)
    throw InsufficientTissueError("only " + std::to_string(pts.size()) +
                                  " tissue pixels above OD threshold " + std::to_string(beta) +
                                  " (need " + std::to_string(min_tissue_pixels) + ")");

  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  for (const auto& od : pts) scatter += od * od.transpose();
  scatter /= static_cast<double>(pts.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(scatter);
  Eigen::Vector3d v1 = eig.eigenvectors().col(2);  // largest eigenvalue
  Eigen::Vector3d v2 = eig.eigenvectors().col(1);

  // orient the plane basis so projections onto v1 are positive; keeps the
  // angle spread away from the atan2 branch cut
  double p1_sum = 0.0;
  for (const auto& od : pts) p1_sum += v1.dot(od);
  if (p1_sum < 0.0) v1 = -v1;

  std::vector<double> angles;
  angles.reserve(pts.size());
  for (const auto& od : pts) angles.push_back(std::atan2(v2.dot(od), v1.dot(od)));
  const double phi_lo = percentile(angles, alpha);
  const double phi_hi = percentile(angles, 100.0 - alpha);

  auto direction = [&](double phi) {
    Eigen::Vector3d u = std::cos(phi) * v1 + std::sin(phi) * v2;
    if (u.sum() < 0.0) u = -u;
    u = u.cwiseMax(0.0);  // OD stain vectors live in the non-negative cone
    return Eigen::Vector3d(u.normalized());
  };
  Eigen::Vector3d s0 = direction(phi_lo);
  Eigen::Vector3d s1 = direction(phi_hi);
  if (s0[2] < s1[2]) std::swap(s0, s1);  // hematoxylin first: larger blue OD

  StainProfile profile;
  profile.beta = beta;
  profile.alpha = alpha;
  for (int r = 0; r < 3; ++r) {
    profile.stain_matrix[r][0] = s0[r];
    profile.stain_matrix[r][1] = s1[r];
  }
  profile.max_concentration = concentration_maxima(pts, profile_matrix(profile));
  return profile;
}

std::vector<double> stain_concentrations(const ImageU8& tile, const StainProfile& profile) {
  const Eigen::Matrix<double, 3, 2> m = profile_matrix(profile);
  const std::size_t n = tile.height * tile.width;
  std::vector<double> conc(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Vector3d od(od_from_u8(tile.pixels[3 * i]), od_from_u8(tile.pixels[3 * i + 1]),
                       od_from_u8(tile.pixels[3 * i + 2]));
    Eigen::Vector2d c = nnls2(m, od);
    conc[2 * i] = c[0];
    conc[2 * i + 1] = c[1];
  }
  return conc;
}

ImageU8 macenko_normalize(const ImageU8& tile, const StainProfile& source,
                          const StainProfile& reference) {
  const Eigen::Matrix<double, 3, 2> m_ref = profile_matrix(reference);
  std::vector<double> conc = stain_concentrations(tile, source);
  std::array<double, 2> ratio{};
  for (int s = 0; s < 2; ++s) {
    if (source.max_concentration[s] <= 0.0)
      throw InsufficientTissueError("source profile has a zero stain-" + std::to_string(s) +
                                    " concentration scale");
    ratio[s] = reference.max_concentration[s] / source.max_concentration[s];
  }
  std::vector<double> od(tile.pixels.size());
  const std::size_t n = tile.height * tile.width;
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Vector2d c(conc[2 * i] * ratio[0], conc[2 * i + 1] * ratio[1]);
    Eigen::Vector3d o = m_ref * c;
    od[3 * i] = o[0];
    od[3 * i + 1] = o[1];
    od[3 * i + 2] = o[2];
  }
  return od_inverse(od, tile.height, tile.width);
}

void save_stain_profile(const std::filesystem::path& path, const StainProfile& profile) {
  nlohmann::json j;
  j["version"] = profile.version;
  j["stain_matrix"] = profile.stain_matrix;
  j["max_concentration"] = profile.max_concentration;
  j["beta"] = profile.beta;
  j["alpha"] = profile.alpha;
  std::ofstream out(path);
  if (!out) throw ImageError("cannot write stain profile " + path.string());
  out << j.dump(2) << '\n';
}

StainProfile load_stain_profile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ImageError("cannot read stain profile " + path.string());
  nlohmann::json j = nlohmann::json::parse(in);
  StainProfile p;
  j.at("version").get_to(p.version);
  if (p.version != 1)
    throw ImageError("unsupported stain profile version " + std::to_string(p.version));
  j.at("stain_matrix").get_to(p.stain_matrix);
  j.at("max_concentration").get_to(p.max_concentration);
  j.at("beta").get_to(p.beta);
  j.at("alpha").get_to(p.alpha);
  return p;
}

}  // namespace dpseq
