#pragma once
// Rigid point-set registration, fiducial localization in CT-like volumes and
// the two-stage robot/tracker/scanner calibration.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "inbore/robot_model.hpp"
#include "inbore/se3.hpp"

namespace inbore {

/// Base class for registration and localization failures.
class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fewer than three points, or points that are coincident or collinear.
class DegenerateGeometry : public CalibrationError {
 public:
  using CalibrationError::CalibrationError;
};

/// Thresholding produced a different number of blobs than expected.
class FiducialAmbiguity : public CalibrationError {
 public:
  FiducialAmbiguity(const std::string& what, std::vector<Vec3> found, std::vector<int> sizes)
      : CalibrationError(what), found_(std::move(found)), sizes_(std::move(sizes)) {}
  const std::vector<Vec3>& found() const { return found_; }
  const std::vector<int>& sizes() const { return sizes_; }

 private:
  std::vector<Vec3> found_;
  std::vector<int> sizes_;
};

struct PointSet {
  std::vector<Vec3> points;
  std::vector<int> labels;  ///< empty or one id per point

  std::size_t size() const { return points.size(); }
  /// 0, 1, 2, ... when no labels are present.
  int label(std::size_t i) const { return labels.empty() ? static_cast<int>(i) : labels[i]; }
};

PointSet transform_points(const Pose& t, const PointSet& p);

struct Registration {
  Pose transform;
  double rms = 0.0;  ///< sqrt(mean ‖p̂ᵢ − T·pᵢ‖²)
};

/// Closed-form least-squares rigid fit T = argmin Σ‖p̂ᵢ − T·pᵢ‖² with
/// correspondence by index. Rotation from the SVD of the cross-covariance with
/// the determinant sign folded into the last singular direction.
/// Throws DegenerateGeometry for < 3 points or a rank < 2 spread.
Registration register_points(const PointSet& p, const PointSet& p_hat);

/// Residual RMS of `t` on the given correspondences.
double registration_rms(const Pose& t, const PointSet& p, const PointSet& p_hat);

/// Regular grid of Hounsfield values. Voxel (i, j, k) sits at
/// origin · (spacing·[i, j, k]) in scanner coordinates.
struct VoxelVolume {
  std::array<int, 3> dims = {0, 0, 0};
  double spacing = 1e-3;  ///< m
  Pose origin;
  std::vector<std::int16_t> hu;  ///< x fastest, then y, then z

  VoxelVolume() = default;
  VoxelVolume(std::array<int, 3> d, double s, const Pose& o, std::int16_t fill = 0);

  std::size_t voxel_count() const;
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
  }
  std::int16_t at(int i, int j, int k) const { return hu[index(i, j, k)]; }
  Vec3 voxel_position(double i, double j, double k) const { return origin * (spacing * Vec3(i, j, k)); }
};

/// Throws std::invalid_argument on non-positive dims/spacing or size mismatch.
void validate(const VoxelVolume& v);

struct LocalizationSettings {
  double threshold = 1500.0;  ///< HU
  int expected_count = 4;
  double background = 0.0;    ///< HU subtracted before weighting
  /// Voxels added around each component's bounding box for the centroid, so
  /// the blurred sphere edge and its shell are weighted too.
  int margin = 6;
};

/// 6-connected components of voxels above threshold; one intensity-weighted
/// centroid per component (scanner frame), ordered by component size, largest
/// first. Throws FiducialAmbiguity when the count differs from expected.
PointSet localize_fiducials(const VoxelVolume& v, const LocalizationSettings& s);

struct PhantomSphere {
  Vec3 center = Vec3::Zero();  ///< scanner frame
  double radius = 2.0e-3;
  double shell_thickness = 1.0e-3;
};

struct PhantomSettings {
  double fiducial_hu = 3000.0;
  double shell_hu = 60.0;
  double background_hu = 0.0;
  /// Isotropic Gaussian point-spread of the imaging system.
  double psf_sigma = 0.5e-3;
};

/// Ball of radius R convolved with an isotropic Gaussian, evaluated at
/// distance r from its center. Exact closed form.
double blurred_ball(double r, double radius, double sigma);

/// Writes fiducials (plus shells) into `v`, adding to what is already there.
void render_phantom(VoxelVolume& v, const std::vector<PhantomSphere>& spheres, const PhantomSettings& s);

struct ChainCalibrationInput {
  /// Base-joint calibration trajectory and the tip tracker positions in the
  /// tracker base frame at the same instants.
  std::vector<JointConfig> robot_samples;
  std::vector<Vec3> tracker_samples;
  /// Reference sensor pose in the tracker base frame during the scan.
  Pose reference_sensor;
  /// Fiducial centers in the reference sensor frame.
  PointSet fiducial_design;
  VoxelVolume volume;
  LocalizationSettings localization;
};

struct ChainCalibration {
  Pose T_b_mb;
  Pose T_b_sb;
  double rms_mb = 0.0;
  double rms_sb = 0.0;
  PointSet localized;         ///< scanner frame, in localization order
  std::vector<int> assignment;  ///< design fiducial i ↔ localized[assignment[i]]
};

/// Stage one registers tracker positions onto FK-predicted tracker positions
/// (giving T^b_mb); stage two registers localized fiducials onto fiducials
/// predicted through the tracker chain (giving T^b_sb). Unlabeled blobs are
/// matched to the design by exhaustive assignment minimizing the RMS.
ChainCalibration calibrate_chain(const RobotModel& model, const ChainCalibrationInput& in);

struct SyntheticCalibrationTruth {
  Pose T_b_mb;
  Pose T_b_sb;
  Pose T_mb_mtrkb;
};

struct SyntheticCalibrationOptions {
  double fiducial_noise = 0.0;  ///< σ per axis on the imaged fiducial centers (m)
  double tracker_noise = 0.0;   ///< σ per axis on the tip tracker samples (m)
  int grid = 3;                 ///< base-joint samples per axis
  double base_range = 0.1;      ///< ± travel of the base joints (m)
  double spacing = 0.5e-3;
  PhantomSettings phantom;
  std::uint64_t seed = 1;
};

struct SyntheticCalibration {
  ChainCalibrationInput input;
  SyntheticCalibrationTruth truth;
};

/// Default ground-truth frames: scanner isocenter in front of the robot base,
/// tracker transmitter beside it and the fiducial mount near isocenter.
SyntheticCalibrationTruth default_calibration_truth();
/// Four asymmetric fiducials in the reference sensor frame.
PointSet default_fiducial_design();

/// Simulated base-joint sweep, tracker readings and a phantom scan generated
/// from `truth`.
SyntheticCalibration make_synthetic_calibration(const RobotModel& model, const SyntheticCalibrationTruth& truth,
                                                const PointSet& design, const SyntheticCalibrationOptions& o);

/// Volume files: `<path>` holds a JSON header {dims, spacing, origin, raw},
/// `raw` names a little-endian int16 file relative to the header.
void write_volume(const std::string& header_path, const VoxelVolume& v);
VoxelVolume read_volume(const std::string& header_path);

/// CSV with header `id,x,y,z`.
void write_point_set(const std::string& path, const PointSet& p);
PointSet read_point_set(const std::string& path);

}  // namespace inbore
