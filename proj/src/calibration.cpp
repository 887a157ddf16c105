#include "inbore/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace inbore {

PointSet transform_points(const Pose& t, const PointSet& p) {
  PointSet out = p;
  for (auto& x : out.points) x = t * x;
  return out;
}

namespace {

Vec3 centroid(const std::vector<Vec3>& pts) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : pts) c += p;
  return c / static_cast<double>(pts.size());
}

void require_spread(const std::vector<Vec3>& pts, const char* which) {
  if (pts.size() < 3) {
    throw DegenerateGeometry(std::string(which) + ": registration needs at least 3 points, got " +
                             std::to_string(pts.size()));
  }
  const Vec3 c = centroid(pts);
  Mat3 cov = Mat3::Zero();
  for (const auto& p : pts) cov += (p - c) * (p - c).transpose();
  const Vec3 ev = Eigen::SelfAdjointEigenSolver<Mat3>(cov, Eigen::EigenvaluesOnly).eigenvalues();
  // Second-largest principal spread must be a meaningful fraction of the largest.
  if (ev[2] <= 1e-18 || ev[1] <= 1e-12 * ev[2]) {
    throw DegenerateGeometry(std::string(which) + ": points are coincident or collinear");
  }
}

}  // namespace

Registration register_points(const PointSet& p, const PointSet& p_hat) {
  if (p.size() != p_hat.size()) {
    throw std::invalid_argument("register_points: point sets differ in size (" + std::to_string(p.size()) + " vs " +
                                std::to_string(p_hat.size()) + ")");
  }
  require_spread(p.points, "source");
  require_spread(p_hat.points, "target");

  const Vec3 cp = centroid(p.points);
  const Vec3 cq = centroid(p_hat.points);
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < p.size(); ++i) h += (p.points[i] - cp) * (p_hat.points[i] - cq).transpose();

  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  if ((v * u.transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  const Rotation r = Rotation::trusted(v * d * u.transpose()).normalized();

  Registration out;
  out.transform = Pose(r, cq - r * cp);
  out.rms = registration_rms(out.transform, p, p_hat);
  return out;
}

double registration_rms(const Pose& t, const PointSet& p, const PointSet& p_hat) {
  if (p.size() != p_hat.size() || p.size() == 0) throw std::invalid_argument("registration_rms: size mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += (p_hat.points[i] - t * p.points[i]).squaredNorm();
  return std::sqrt(sum / static_cast<double>(p.size()));
}

VoxelVolume::VoxelVolume(std::array<int, 3> d, double s, const Pose& o, std::int16_t fill)
    : dims(d), spacing(s), origin(o) {
  if (d[0] <= 0 || d[1] <= 0 || d[2] <= 0) throw std::invalid_argument("volume dimensions must be positive");
  hu.assign(voxel_count(), fill);
}

std::size_t VoxelVolume::voxel_count() const {
  return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(dims[2]);
}

void validate(const VoxelVolume& v) {
  if (v.dims[0] <= 0 || v.dims[1] <= 0 || v.dims[2] <= 0) {
    throw std::invalid_argument("volume dimensions must be positive");
  }
  if (!(v.spacing > 0.0) || !std::isfinite(v.spacing)) throw std::invalid_argument("volume spacing must be positive");
  if (v.hu.size() != v.voxel_count()) {
    throw std::invalid_argument("volume holds " + std::to_string(v.hu.size()) + " voxels, dimensions need " +
                                std::to_string(v.voxel_count()));
  }
}

PointSet localize_fiducials(const VoxelVolume& v, const LocalizationSettings& s) {
  validate(v);
  if (s.expected_count < 1) throw std::invalid_argument("expected_count must be >= 1");
  if (s.margin < 0) throw std::invalid_argument("margin must be >= 0");

  const int nx = v.dims[0], ny = v.dims[1], nz = v.dims[2];
  std::vector<int> label(v.voxel_count(), -1);
  struct Component {
    int size = 0;
    std::array<int, 3> lo{}, hi{};
  };
  std::vector<Component> comps;
  std::vector<std::array<int, 3>> stack;

  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const std::size_t idx = v.index(i, j, k);
        if (label[idx] >= 0 || v.hu[idx] <= s.threshold) continue;
        const int id = static_cast<int>(comps.size());
        Component c;
        c.lo = {i, j, k};
        c.hi = {i, j, k};
        label[idx] = id;
        stack.push_back({i, j, k});
        while (!stack.empty()) {
          const auto [a, b, cc] = stack.back();
          stack.pop_back();
          ++c.size;
          const std::array<int, 3> cur = {a, b, cc};
          for (int ax = 0; ax < 3; ++ax) {
            c.lo[ax] = std::min(c.lo[ax], cur[ax]);
            c.hi[ax] = std::max(c.hi[ax], cur[ax]);
          }
          static constexpr int kOff[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
          for (const auto& o : kOff) {
            const int x = a + o[0], y = b + o[1], z = cc + o[2];
            if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz) continue;
            const std::size_t n = v.index(x, y, z);
            if (label[n] >= 0 || v.hu[n] <= s.threshold) continue;
            label[n] = id;
            stack.push_back({x, y, z});
          }
        }
        comps.push_back(c);
      }
    }
  }

  std::vector<int> order(comps.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return comps[a].size > comps[b].size; });

  PointSet out;
  std::vector<int> sizes;
  for (int id : order) {
    const Component& c = comps[static_cast<std::size_t>(id)];
    // Weighted first moment over the padded bounding box, in grid units.
    Vec3 moment = Vec3::Zero();
    double mass = 0.0;
    for (int k = std::max(0, c.lo[2] - s.margin); k <= std::min(nz - 1, c.hi[2] + s.margin); ++k) {
      for (int j = std::max(0, c.lo[1] - s.margin); j <= std::min(ny - 1, c.hi[1] + s.margin); ++j) {
        for (int i = std::max(0, c.lo[0] - s.margin); i <= std::min(nx - 1, c.hi[0] + s.margin); ++i) {
          const std::size_t idx = v.index(i, j, k);
          if (label[idx] >= 0 && label[idx] != id) continue;
          const double w = static_cast<double>(v.hu[idx]) - s.background;
          if (w <= 0.0) continue;
          moment += w * Vec3(i, j, k);
          mass += w;
        }
      }
    }
    const Vec3 g = moment / mass;
    out.points.push_back(v.voxel_position(g.x(), g.y(), g.z()));
    sizes.push_back(c.size);
  }

  if (static_cast<int>(out.size()) != s.expected_count) {
    std::ostringstream msg;
    msg << "expected " << s.expected_count << " fiducials above " << s.threshold << " HU, found " << out.size();
    for (std::size_t i = 0; i < out.size(); ++i) {
      msg << (i == 0 ? ": " : "; ") << "[" << out.points[i].x() << ", " << out.points[i].y() << ", "
          << out.points[i].z() << "] (" << sizes[i] << " voxels)";
    }
    throw FiducialAmbiguity(msg.str(), out.points, sizes);
  }
  return out;
}

double blurred_ball(double r, double radius, double sigma) {
  if (sigma <= 0.0) return r <= radius ? 1.0 : 0.0;
  const double s2 = std::sqrt(2.0) * sigma;
  const double a = 0.5 * (std::erf((radius - r) / s2) + std::erf((radius + r) / s2));
  auto g = [&](double x) { return std::exp(-x * x / (2.0 * sigma * sigma)); };
  if (r < 1e-9 * sigma) {
    // Limit r → 0 of the exponential term: (2R/σ²)·exp(−R²/2σ²)·σ/√(2π).
    return a - radius * std::sqrt(2.0 / kPi) / sigma * g(radius);
  }
  return a - sigma / (r * std::sqrt(2.0 * kPi)) * (g(r - radius) - g(r + radius));
}

void render_phantom(VoxelVolume& v, const std::vector<PhantomSphere>& spheres, const PhantomSettings& s) {
  validate(v);
  if (s.psf_sigma < 0.0) throw std::invalid_argument("psf_sigma must be >= 0");
  std::vector<double> field(v.voxel_count(), 0.0);
  for (std::size_t n = 0; n < v.hu.size(); ++n) field[n] = v.hu[n];
  const Pose to_grid = v.origin.inverse();
  for (const auto& sp : spheres) {
    if (!(sp.radius > 0.0) || sp.shell_thickness < 0.0) throw std::invalid_argument("invalid phantom sphere");
    const double outer = sp.radius + sp.shell_thickness;
    const double reach = outer + 6.0 * s.psf_sigma + v.spacing;
    const Vec3 g = to_grid * sp.center / v.spacing;
    const int span = static_cast<int>(std::ceil(reach / v.spacing));
    for (int k = std::max(0, static_cast<int>(std::floor(g.z())) - span);
         k <= std::min(v.dims[2] - 1, static_cast<int>(std::ceil(g.z())) + span); ++k) {
      for (int j = std::max(0, static_cast<int>(std::floor(g.y())) - span);
           j <= std::min(v.dims[1] - 1, static_cast<int>(std::ceil(g.y())) + span); ++j) {
        for (int i = std::max(0, static_cast<int>(std::floor(g.x())) - span);
             i <= std::min(v.dims[0] - 1, static_cast<int>(std::ceil(g.x())) + span); ++i) {
          const double r = (v.spacing * (Vec3(i, j, k) - g)).norm();
          if (r > reach) continue;
          const double core = blurred_ball(r, sp.radius, s.psf_sigma);
          const double shell = blurred_ball(r, outer, s.psf_sigma) - core;
          field[v.index(i, j, k)] +=
              (s.fiducial_hu - s.background_hu) * core + (s.shell_hu - s.background_hu) * shell;
        }
      }
    }
  }
  for (std::size_t n = 0; n < field.size(); ++n) {
    field[n] = std::clamp(std::round(field[n]), -32768.0, 32767.0);
    v.hu[n] = static_cast<std::int16_t>(field[n]);
  }
}

namespace {

std::vector<int> best_assignment(const PointSet& predicted, const PointSet& localized, Registration& best) {
  const std::size_t n = predicted.size();
  if (n > 8) throw std::invalid_argument("exhaustive fiducial assignment supports at most 8 fiducials");
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> chosen;
  best.rms = std::numeric_limits<double>::infinity();
  do {
    PointSet ordered;
    for (int k : perm) ordered.points.push_back(localized.points[static_cast<std::size_t>(k)]);
    const Registration r = register_points(ordered, predicted);
    if (r.rms < best.rms) {
      best = r;
      chosen = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return chosen;
}

}  // namespace

ChainCalibration calibrate_chain(const RobotModel& model, const ChainCalibrationInput& in) {
  if (in.robot_samples.size() != in.tracker_samples.size()) {
    throw std::invalid_argument("robot and tracker sample counts differ (" + std::to_string(in.robot_samples.size()) +
                                " vs " + std::to_string(in.tracker_samples.size()) + ")");
  }
  ChainCalibration out;

  PointSet fk_points, tracker_points;
  for (std::size_t i = 0; i < in.robot_samples.size(); ++i) {
    fk_points.points.push_back((fk(model, in.robot_samples[i]) * model.ee_offset()).translation());
    tracker_points.points.push_back(in.tracker_samples[i]);
  }
  const Registration mb = register_points(tracker_points, fk_points);
  out.T_b_mb = mb.transform;
  out.rms_mb = mb.rms;

  const PointSet predicted = transform_points(out.T_b_mb * in.reference_sensor, in.fiducial_design);
  LocalizationSettings loc = in.localization;
  loc.expected_count = static_cast<int>(in.fiducial_design.size());
  out.localized = localize_fiducials(in.volume, loc);

  Registration sb;
  out.assignment = best_assignment(predicted, out.localized, sb);
  out.T_b_sb = sb.transform;
  out.rms_sb = sb.rms;
  return out;
}

SyntheticCalibrationTruth default_calibration_truth() {
  SyntheticCalibrationTruth t;
  t.T_b_sb = Pose(rot_mat(Vec3(0.0, 0.0, 1.0), deg2rad(2.0)), Vec3(0.10, 0.0, -0.08));
  t.T_b_mb = Pose(rot_mat(Vec3(1.0, 1.0, 0.0).normalized(), deg2rad(25.0)), Vec3(0.30, -0.20, -0.12));
  const Pose mount_in_b(rot_mat(Vec3(0.0, 1.0, 0.0), deg2rad(10.0)), Vec3(0.12, 0.04, -0.10));
  t.T_mb_mtrkb = t.T_b_mb.inverse() * mount_in_b;
  return t;
}

PointSet default_fiducial_design() {
  PointSet p;
  p.points = {Vec3(0.030, 0.0, 0.0), Vec3(-0.020, 0.025, 0.0), Vec3(-0.010, -0.030, 0.010),
              Vec3(0.0, 0.010, 0.035)};
  p.labels = {1, 2, 3, 4};
  return p;
}

SyntheticCalibration make_synthetic_calibration(const RobotModel& model, const SyntheticCalibrationTruth& truth,
                                                const PointSet& design, const SyntheticCalibrationOptions& o) {
  if (o.grid < 2) throw std::invalid_argument("calibration grid must be >= 2");
  if (o.fiducial_noise < 0.0 || o.tracker_noise < 0.0) throw std::invalid_argument("noise must be >= 0");
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  auto noise = [&](double sigma) {
    return sigma > 0.0 ? Vec3(sigma * unit(rng), sigma * unit(rng), sigma * unit(rng)) : Vec3::Zero();
  };

  SyntheticCalibration out;
  out.truth = truth;
  ChainCalibrationInput& in = out.input;

  JointConfig home = JointConfig::Zero();
  home[3] = -kPi / 2.0;
  home[6] = kPi / 2.0;
  const Pose mb_from_b = truth.T_b_mb.inverse();
  for (int a = 0; a < o.grid; ++a) {
    for (int b = 0; b < o.grid; ++b) {
      for (int c = 0; c < o.grid; ++c) {
        JointConfig q = home;
        const double step = 2.0 * o.base_range / (o.grid - 1);
        q[0] = -o.base_range + a * step;
        q[1] = -o.base_range + b * step;
        q[2] = -o.base_range + c * step;
        in.robot_samples.push_back(q);
        const Vec3 tip = (fk(model, q) * model.ee_offset()).translation();
        in.tracker_samples.push_back(mb_from_b * tip + noise(o.tracker_noise));
      }
    }
  }

  in.reference_sensor = truth.T_mb_mtrkb;
  in.fiducial_design = design;
  const Pose sb_from_mount = truth.T_b_sb.inverse() * truth.T_b_mb * truth.T_mb_mtrkb;
  std::vector<PhantomSphere> spheres;
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const auto& p : design.points) {
    PhantomSphere s;
    s.center = sb_from_mount * p + noise(o.fiducial_noise);
    lo = lo.cwiseMin(s.center);
    hi = hi.cwiseMax(s.center);
    spheres.push_back(s);
  }
  const double pad = 0.01;
  std::array<int, 3> dims{};
  for (int ax = 0; ax < 3; ++ax) dims[ax] = static_cast<int>(std::ceil((hi[ax] - lo[ax] + 2.0 * pad) / o.spacing)) + 1;
  in.volume = VoxelVolume(dims, o.spacing, Pose::from_translation(lo - Vec3::Constant(pad)),
                          static_cast<std::int16_t>(o.phantom.background_hu));
  render_phantom(in.volume, spheres, o.phantom);
  in.localization.background = o.phantom.background_hu;
  in.localization.expected_count = static_cast<int>(design.size());
  return out;
}

void write_volume(const std::string& header_path, const VoxelVolume& v) {
  validate(v);
  namespace fs = std::filesystem;
  const fs::path header(header_path);
  const fs::path raw = header.stem().string() + ".raw";
  nlohmann::json j;
  j["dims"] = v.dims;
  j["spacing"] = v.spacing;
  j["origin"] = v.origin;
  j["raw"] = raw.string();
  j["encoding"] = "int16_le";
  {
    std::ofstream f(header);
    if (!f) throw std::runtime_error("cannot write " + header.string());
    f << j.dump(2) << "\n";
  }
  std::ofstream f(header.parent_path() / raw, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + (header.parent_path() / raw).string());
  std::vector<unsigned char> bytes(2 * v.hu.size());
  for (std::size_t i = 0; i < v.hu.size(); ++i) {
    const auto u = static_cast<std::uint16_t>(v.hu[i]);
    bytes[2 * i] = static_cast<unsigned char>(u & 0xFF);
    bytes[2 * i + 1] = static_cast<unsigned char>(u >> 8);
  }
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

VoxelVolume read_volume(const std::string& header_path) {
  namespace fs = std::filesystem;
  std::ifstream hf(header_path);
  if (!hf) throw std::runtime_error("cannot open volume header " + header_path);
  const nlohmann::json j = nlohmann::json::parse(hf);
  if (j.value("encoding", std::string("int16_le")) != "int16_le") {
    throw std::invalid_argument("unsupported volume encoding " + j.at("encoding").get<std::string>());
  }
  VoxelVolume v;
  v.dims = j.at("dims").get<std::array<int, 3>>();
  v.spacing = j.at("spacing").get<double>();
  v.origin = j.value("origin", Pose());
  if (v.dims[0] <= 0 || v.dims[1] <= 0 || v.dims[2] <= 0) throw std::invalid_argument("volume dims must be positive");
  const fs::path raw = fs::path(header_path).parent_path() / j.at("raw").get<std::string>();
  std::ifstream f(raw, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open volume data " + raw.string());
  std::vector<unsigned char> bytes(2 * v.voxel_count());
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (f.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw std::invalid_argument("volume data " + raw.string() + " is shorter than its header declares");
  }
  v.hu.resize(v.voxel_count());
  for (std::size_t i = 0; i < v.hu.size(); ++i) {
    v.hu[i] = static_cast<std::int16_t>(static_cast<std::uint16_t>(bytes[2 * i] | (bytes[2 * i + 1] << 8)));
  }
  validate(v);
  return v;
}

void write_point_set(const std::string& path, const PointSet& p) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.precision(17);
  f << "id,x,y,z\n";
  for (std::size_t i = 0; i < p.size(); ++i) {
    f << p.label(i) << "," << p.points[i].x() << "," << p.points[i].y() << "," << p.points[i].z() << "\n";
  }
}

PointSet read_point_set(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::invalid_argument(path + ": empty point set file");
  if (line.rfind("id,x,y,z", 0) != 0) throw std::invalid_argument(path + ": expected header id,x,y,z");
  PointSet p;
  int row = 1;
  while (std::getline(f, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw std::invalid_argument(path + ":" + std::to_string(row) + ": not a number '" + cell + "'");
      }
    }
    if (vals.size() != 4) throw std::invalid_argument(path + ":" + std::to_string(row) + ": expected 4 columns");
    p.labels.push_back(static_cast<int>(vals[0]));
    p.points.emplace_back(vals[1], vals[2], vals[3]);
  }
  return p;
}

}  // namespace inbore
