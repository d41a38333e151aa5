#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "scprior/common.hpp"

namespace scprior {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Rodrigues formula. Below 1e-8 radians the trig ratios are replaced by their
// second-order Taylor expansions.
inline Mat3 aa_to_matrix(const Vec3& aa) {
    const double theta2 = aa.squaredNorm();
    Mat3 K;
    K << 0, -aa.z(), aa.y(), aa.z(), 0, -aa.x(), -aa.y(), aa.x(), 0;
    if (theta2 < 1e-16) {
        // sin(t)/t ~ 1 - t^2/6, (1-cos t)/t^2 ~ 1/2 - t^2/24
        return Mat3::Identity() + (1.0 - theta2 / 6.0) * K +
               (0.5 - theta2 / 24.0) * (K * K);
    }
    const double theta = std::sqrt(theta2);
    return Mat3::Identity() + (std::sin(theta) / theta) * K +
           ((1.0 - std::cos(theta)) / theta2) * (K * K);
}

inline Vec3 matrix_to_aa(const Mat3& r) {
    const double cos_theta = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
    Vec3 w(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
    // sin from the skew norm keeps the angle well conditioned near pi, where
    // sin(acos(c)) loses all precision
    const double sin_theta = 0.5 * w.norm();
    const double theta = std::atan2(sin_theta, cos_theta);
    if (theta < 1e-8) return 0.5 * w;  // log(R) ~ skew part for small angles
    if (theta > M_PI - 1e-6) {
        // near pi the skew part vanishes; the symmetric part is
        // ((1+c)/2) I + ((1-c)/2) aa^T, so stripping the identity leaves a
        // clean multiple of the axis in every column
        const Mat3 s = 0.25 * (r + r.transpose()) + 0.5 * Mat3::Identity();
        int k = 0;
        s.diagonal().maxCoeff(&k);
        Vec3 axis = s.col(k);
        axis[k] -= 0.5 * (1.0 + cos_theta);
        axis.normalize();
        // pick the sign consistent with the skew part when it is not exactly zero
        if (w.dot(axis) < 0) axis = -axis;
        return theta * axis;
    }
    return (theta / (2.0 * sin_theta)) * w;
}

// 6D representation: first two columns of the rotation matrix.
inline Eigen::Matrix<double, 6, 1> matrix_to_rot6d(const Mat3& r) {
    Eigen::Matrix<double, 6, 1> out;
    out << r(0, 0), r(1, 0), r(2, 0), r(0, 1), r(1, 1), r(2, 1);
    return out;
}

inline Eigen::Matrix<double, 6, 1> rot6d_from_axis_angle(const Vec3& aa) {
    return matrix_to_rot6d(aa_to_matrix(aa));
}

// Gram-Schmidt: normalize the first 3-vector, orthogonalize the second against
// it, complete with the cross product. Near-zero or collinear inputs are
// rejected rather than silently patched.
inline Mat3 rot6d_to_matrix(const Eigen::Matrix<double, 6, 1>& r6) {
    const Vec3 a1 = r6.head<3>();
    const Vec3 a2 = r6.tail<3>();
    const double n1 = a1.norm();
    if (n1 < 1e-8) throw validation_error("rot6d_to_matrix: first column near zero");
    const Vec3 b1 = a1 / n1;
    const Vec3 u2 = a2 - b1.dot(a2) * b1;
    const double n2 = u2.norm();
    if (n2 < 1e-8) throw validation_error("rot6d_to_matrix: columns are collinear");
    const Vec3 b2 = u2 / n2;
    Mat3 out;
    out.col(0) = b1;
    out.col(1) = b2;
    out.col(2) = b1.cross(b2);
    return out;
}

inline Vec3 rot6d_to_axis_angle(const Eigen::Matrix<double, 6, 1>& r6) {
    return matrix_to_aa(rot6d_to_matrix(r6));
}

// geodesic distance between two rotations, in radians
inline double rotation_angle_between(const Mat3& a, const Mat3& b) {
    const double c = std::clamp(((a.transpose() * b).trace() - 1.0) * 0.5, -1.0, 1.0);
    return std::acos(c);
}

}  // namespace scprior
