#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <string>
#include <vector>

#include "scprior/common.hpp"
#include "scprior/container.hpp"
#include "scprior/rotation.hpp"

namespace scprior {

using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;
using MatXi = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

// Fixed pose layout. Parts are ordered [face, right_hand, left_hand, body];
// the face part carries the jaw rotation plus 10 raw expression coefficients.
namespace layout {
constexpr long kJoints = 53;  // 1 root + 21 body + 15 + 15 hands + 1 jaw
constexpr long kBodyJoints = 21;
constexpr long kHandJoints = 15;
constexpr long kExpr = 10;
constexpr long kRotations = 52;  // every joint except the root

constexpr int kRoot = 0;
constexpr int kBodyFirst = 1;   // body joints are 1..21
constexpr int kJaw = 22;
constexpr int kRhFirst = 23;    // right-hand joints are 23..37
constexpr int kLhFirst = 38;    // left-hand joints are 38..52

// axis-angle layout: jaw(3), expr(10), rh(45), lh(45), body(63)
constexpr long kAaDim = 166;
constexpr long aa_jaw = 0, aa_expr = 3, aa_rh = 13, aa_lh = 58, aa_body = 103;

// 6D layout: jaw(6), expr(10), rh(90), lh(90), body(126)
constexpr long kD6Dim = 322;
constexpr long d6_jaw = 0, d6_expr = 6, d6_rh = 16, d6_lh = 106, d6_body = 196;

constexpr long d6_face_dim = 16, d6_hand_dim = 90, d6_body_dim = 126;
constexpr long aa_face_dim = 13, aa_hand_dim = 45, aa_body_dim = 63;

// rotation slots 0..51: jaw, right hand, left hand, body
inline int joint_of_rotation(long r) {
    if (r == 0) return kJaw;
    if (r < 1 + kHandJoints) return kRhFirst + static_cast<int>(r - 1);
    if (r < 1 + 2 * kHandJoints) return kLhFirst + static_cast<int>(r - 1 - kHandJoints);
    return kBodyFirst + static_cast<int>(r - 1 - 2 * kHandJoints);
}

inline long rotation_of_joint(int j) {
    if (j == kJaw) return 0;
    if (j >= kRhFirst && j < kRhFirst + kHandJoints) return 1 + (j - kRhFirst);
    if (j >= kLhFirst && j < kLhFirst + kHandJoints) return 1 + kHandJoints + (j - kLhFirst);
    if (j >= kBodyFirst && j < kBodyFirst + kBodyJoints) return 1 + 2 * kHandJoints + (j - kBodyFirst);
    return -1;  // root has no rotation slot
}

inline long aa_offset_of_rotation(long r) {
    if (r == 0) return aa_jaw;
    if (r < 1 + kHandJoints) return aa_rh + 3 * (r - 1);
    if (r < 1 + 2 * kHandJoints) return aa_lh + 3 * (r - 1 - kHandJoints);
    return aa_body + 3 * (r - 1 - 2 * kHandJoints);
}

inline long d6_offset_of_rotation(long r) {
    if (r == 0) return d6_jaw;
    if (r < 1 + kHandJoints) return d6_rh + 6 * (r - 1);
    if (r < 1 + 2 * kHandJoints) return d6_lh + 6 * (r - 1 - kHandJoints);
    return d6_body + 6 * (r - 1 - 2 * kHandJoints);
}
}  // namespace layout

// Part-partitioned local pose; global orientation and translation do not exist
// in this representation.
struct PoseVector {
    Vec3 jaw = Vec3::Zero();
    VecX expression = VecX::Zero(layout::kExpr);
    MatX right_hand = MatX::Zero(layout::kHandJoints, 3);
    MatX left_hand = MatX::Zero(layout::kHandJoints, 3);
    MatX body = MatX::Zero(layout::kBodyJoints, 3);

    Vec3 rotation_aa(long r) const {
        const long off = layout::aa_offset_of_rotation(r);
        if (r == 0) return jaw;
        if (off >= layout::aa_body) return body.row((off - layout::aa_body) / 3).transpose();
        if (off >= layout::aa_lh) return left_hand.row((off - layout::aa_lh) / 3).transpose();
        return right_hand.row((off - layout::aa_rh) / 3).transpose();
    }
};

// flat axis-angle vector (166) <-> PoseVector
inline VecX pack_pose_aa(const PoseVector& p) {
    VecX out(layout::kAaDim);
    out.segment<3>(layout::aa_jaw) = p.jaw;
    out.segment(layout::aa_expr, layout::kExpr) = p.expression;
    for (long k = 0; k < layout::kHandJoints; ++k) {
        out.segment<3>(layout::aa_rh + 3 * k) = p.right_hand.row(k).transpose();
        out.segment<3>(layout::aa_lh + 3 * k) = p.left_hand.row(k).transpose();
    }
    for (long k = 0; k < layout::kBodyJoints; ++k)
        out.segment<3>(layout::aa_body + 3 * k) = p.body.row(k).transpose();
    return out;
}

inline PoseVector unpack_pose_aa(const VecX& flat) {
    require(flat.size() == layout::kAaDim,
            "unpack_pose_aa: expected length 166, got " + std::to_string(flat.size()));
    PoseVector p;
    p.jaw = flat.segment<3>(layout::aa_jaw);
    p.expression = flat.segment(layout::aa_expr, layout::kExpr);
    for (long k = 0; k < layout::kHandJoints; ++k) {
        p.right_hand.row(k) = flat.segment<3>(layout::aa_rh + 3 * k).transpose();
        p.left_hand.row(k) = flat.segment<3>(layout::aa_lh + 3 * k).transpose();
    }
    for (long k = 0; k < layout::kBodyJoints; ++k)
        p.body.row(k) = flat.segment<3>(layout::aa_body + 3 * k).transpose();
    return p;
}

// axis-angle (166) -> 6D (322)
inline VecX pose_aa_to_6d(const VecX& aa) {
    require(aa.size() == layout::kAaDim, "pose_aa_to_6d: expected length 166");
    VecX out(layout::kD6Dim);
    out.segment(layout::d6_expr, layout::kExpr) = aa.segment(layout::aa_expr, layout::kExpr);
    for (long r = 0; r < layout::kRotations; ++r)
        out.segment<6>(layout::d6_offset_of_rotation(r)) =
            rot6d_from_axis_angle(aa.segment<3>(layout::aa_offset_of_rotation(r)));
    return out;
}

// 6D (322) -> axis-angle (166); degenerate 6D rotations raise
inline VecX pose_6d_to_aa(const VecX& d6) {
    require(d6.size() == layout::kD6Dim, "pose_6d_to_aa: expected length 322");
    VecX out(layout::kAaDim);
    out.segment(layout::aa_expr, layout::kExpr) = d6.segment(layout::d6_expr, layout::kExpr);
    for (long r = 0; r < layout::kRotations; ++r)
        out.segment<3>(layout::aa_offset_of_rotation(r)) =
            rot6d_to_axis_angle(d6.segment<6>(layout::d6_offset_of_rotation(r)));
    return out;
}

inline VecX pack_pose_6d(const PoseVector& p) { return pose_aa_to_6d(pack_pose_aa(p)); }
inline PoseVector unpack_pose_6d(const VecX& d6) { return unpack_pose_aa(pose_6d_to_aa(d6)); }

// Identity coefficients conditioning the prior.
struct ShapeVector {
    VecX coefficients;

    ShapeVector() = default;
    explicit ShapeVector(VecX c) : coefficients(std::move(c)) {}
    static ShapeVector zero(long n) { return ShapeVector(VecX::Zero(n)); }
    long size() const { return coefficients.size(); }
};

struct Keypoint {
    bool is_vertex = false;  // false: joint index, true: vertex index
    int index = 0;
    int group = 0;  // 0 body, 1 hands, 2 face
};

// The differentiable stand-in for SMPL-X: fixed topology counts, procedurally
// generated geometry.
struct BodyModel {
    MatX template_vertices;            // V x 3, meters
    MatXi faces;                       // F x 3
    std::vector<int> kinematic_tree;   // parent per joint, root parent = -1
    MatX joint_regressor;              // J x V
    MatX skinning_weights;             // V x J, rows sum to 1
    MatX shape_blendshapes;            // (3V) x N_s, row-major (v, xyz)
    MatX expr_blendshapes;             // (3V) x 10, face-region support
    std::vector<int> mask_right_hand, mask_left_hand, mask_face, mask_torso, mask_arms;
    std::vector<Keypoint> keypoints;   // K entries
    MatX joint_limits;                 // J x 6: min xyz, max xyz (radians)

    std::vector<char> is_hand_vertex;  // derived, size V

    long vertex_count() const { return template_vertices.rows(); }
    long face_count() const { return faces.rows(); }
    long joint_count() const { return static_cast<long>(kinematic_tree.size()); }
    long shape_dim() const { return shape_blendshapes.cols(); }
    long keypoint_count() const { return static_cast<long>(keypoints.size()); }

    std::vector<int> hand_vertices() const {
        std::vector<int> out = mask_right_hand;
        out.insert(out.end(), mask_left_hand.begin(), mask_left_hand.end());
        return out;
    }

    void finalize() {
        is_hand_vertex.assign(static_cast<std::size_t>(vertex_count()), 0);
        for (int v : mask_right_hand) is_hand_vertex[static_cast<std::size_t>(v)] = 1;
        for (int v : mask_left_hand) is_hand_vertex[static_cast<std::size_t>(v)] = 1;
    }

    void validate() const {
        const long V = vertex_count(), J = joint_count();
        if (J != layout::kJoints)
            throw parse_error("body model: expected " + std::to_string(layout::kJoints) +
                              " joints, got " + std::to_string(J));
        if (kinematic_tree[0] != -1) throw parse_error("body model: joint 0 must be the root");
        for (long j = 1; j < J; ++j)
            if (kinematic_tree[static_cast<std::size_t>(j)] < 0 ||
                kinematic_tree[static_cast<std::size_t>(j)] >= j)
                throw parse_error("body model: kinematic tree is not topologically ordered at joint " +
                                  std::to_string(j));
        if (joint_regressor.rows() != J || joint_regressor.cols() != V)
            throw parse_error("body model: joint regressor must be J x V");
        if (skinning_weights.rows() != V || skinning_weights.cols() != J)
            throw parse_error("body model: skinning weights must be V x J");
        for (long v = 0; v < V; ++v) {
            const double s = skinning_weights.row(v).sum();
            if (std::abs(s - 1.0) > 1e-6)
                throw parse_error("body model: skinning weights not normalized at vertex " +
                                  std::to_string(v) + " (sum " + std::to_string(s) + ")");
            if (skinning_weights.row(v).minCoeff() < 0)
                throw parse_error("body model: negative skinning weight at vertex " +
                                  std::to_string(v));
        }
        if (shape_blendshapes.rows() != 3 * V) throw parse_error("body model: shape_bs must be (3V) x N_s");
        if (expr_blendshapes.rows() != 3 * V || expr_blendshapes.cols() != layout::kExpr)
            throw parse_error("body model: expr_bs must be (3V) x 10");
        if (joint_limits.rows() != J || joint_limits.cols() != 6)
            throw parse_error("body model: joint_limits must be J x 6");
        // named part masks must be pairwise disjoint
        std::vector<int> owner(static_cast<std::size_t>(V), -1);
        const std::vector<const std::vector<int>*> masks = {&mask_right_hand, &mask_left_hand,
                                                            &mask_face, &mask_torso, &mask_arms};
        for (std::size_t m = 0; m < masks.size(); ++m)
            for (int v : *masks[m]) {
                if (v < 0 || v >= V) throw parse_error("body model: mask index out of range");
                if (owner[static_cast<std::size_t>(v)] != -1)
                    throw parse_error("body model: part masks overlap at vertex " + std::to_string(v));
                owner[static_cast<std::size_t>(v)] = static_cast<int>(m);
            }
        for (const Keypoint& k : keypoints) {
            const long lim = k.is_vertex ? V : J;
            if (k.index < 0 || k.index >= lim)
                throw parse_error("body model: keypoint index out of range");
        }
        if (faces.size() > 0 && (faces.minCoeff() < 0 || faces.maxCoeff() >= V))
            throw parse_error("body model: face index out of range");
    }
};

// --- model container IO -----------------------------------------------------

inline ArrayContainer model_to_container(const BodyModel& m) {
    ArrayContainer c("SCBM0001");
    const auto V = static_cast<std::uint64_t>(m.vertex_count());
    const auto F = static_cast<std::uint64_t>(m.face_count());
    const auto J = static_cast<std::uint64_t>(m.joint_count());
    const auto Ns = static_cast<std::uint64_t>(m.shape_dim());

    auto flat = [](const MatX& mat) {
        std::vector<double> v(static_cast<std::size_t>(mat.size()));
        for (long i = 0; i < mat.rows(); ++i)
            for (long j = 0; j < mat.cols(); ++j)
                v[static_cast<std::size_t>(i * mat.cols() + j)] = mat(i, j);
        return v;
    };
    auto flat_i = [](const MatXi& mat) {
        std::vector<std::int32_t> v(static_cast<std::size_t>(mat.size()));
        for (long i = 0; i < mat.rows(); ++i)
            for (long j = 0; j < mat.cols(); ++j)
                v[static_cast<std::size_t>(i * mat.cols() + j)] = mat(i, j);
        return v;
    };

    c.add_f64("template", {V, 3}, flat(m.template_vertices));
    c.add_i32("faces", {F, 3}, flat_i(m.faces));
    c.add_i32("tree", {J}, std::vector<std::int32_t>(m.kinematic_tree.begin(), m.kinematic_tree.end()));
    c.add_f64("regressor", {J, V}, flat(m.joint_regressor));
    c.add_f64("skin", {V, J}, flat(m.skinning_weights));
    c.add_f64("shape_bs", {V, 3, Ns}, flat(m.shape_blendshapes));
    c.add_f64("expr_bs", {V, 3, 10}, flat(m.expr_blendshapes));
    auto mask = [&c](const std::string& name, const std::vector<int>& idx) {
        c.add_i32(name, {idx.size()}, std::vector<std::int32_t>(idx.begin(), idx.end()));
    };
    mask("mask_right_hand", m.mask_right_hand);
    mask("mask_left_hand", m.mask_left_hand);
    mask("mask_face", m.mask_face);
    mask("mask_torso", m.mask_torso);
    mask("mask_arms", m.mask_arms);
    std::vector<std::int32_t> sel;
    std::vector<std::int32_t> groups;
    for (const Keypoint& k : m.keypoints) {
        sel.push_back(k.is_vertex ? 1 : 0);
        sel.push_back(k.index);
        groups.push_back(k.group);
    }
    c.add_i32("keypoint_selector", {static_cast<std::uint64_t>(m.keypoints.size()), 2}, sel);
    c.add_i32("keypoint_groups", {static_cast<std::uint64_t>(m.keypoints.size())}, groups);
    c.add_f64("joint_limits", {J, 6}, flat(m.joint_limits));
    return c;
}

inline BodyModel model_from_container(const ArrayContainer& c) {
    BodyModel m;
    auto mat = [&c](const std::string& name, long rows, long cols) {
        const auto& e = c.get(name);
        const auto& d = c.get_f64(name);
        if (static_cast<long>(d.size()) != rows * cols)
            throw parse_error("array '" + name + "': unexpected size");
        (void)e;
        MatX out(rows, cols);
        for (long i = 0; i < rows; ++i)
            for (long j = 0; j < cols; ++j) out(i, j) = d[static_cast<std::size_t>(i * cols + j)];
        return out;
    };

    const auto& tdims = c.get("template").dims;
    if (tdims.size() != 2 || tdims[1] != 3) throw parse_error("array 'template': expected V x 3");
    const long V = static_cast<long>(tdims[0]);
    m.template_vertices = mat("template", V, 3);

    const auto& fdims = c.get("faces").dims;
    if (fdims.size() != 2 || fdims[1] != 3) throw parse_error("array 'faces': expected F x 3");
    const long F = static_cast<long>(fdims[0]);
    const auto& fd = c.get_i32("faces");
    m.faces.resize(F, 3);
    for (long i = 0; i < F; ++i)
        for (long j = 0; j < 3; ++j) m.faces(i, j) = fd[static_cast<std::size_t>(i * 3 + j)];

    const auto& tr = c.get_i32("tree");
    m.kinematic_tree.assign(tr.begin(), tr.end());
    const long J = static_cast<long>(m.kinematic_tree.size());

    m.joint_regressor = mat("regressor", J, V);
    m.skinning_weights = mat("skin", V, J);
    const auto& sdims = c.get("shape_bs").dims;
    if (sdims.size() != 3 || static_cast<long>(sdims[0]) != V || sdims[1] != 3)
        throw parse_error("array 'shape_bs': expected V x 3 x N_s");
    const long Ns = static_cast<long>(sdims[2]);
    m.shape_blendshapes = mat("shape_bs", 3 * V, Ns);
    m.expr_blendshapes = mat("expr_bs", 3 * V, layout::kExpr);

    auto maskv = [&c](const std::string& name) {
        const auto& d = c.get_i32(name);
        return std::vector<int>(d.begin(), d.end());
    };
    m.mask_right_hand = maskv("mask_right_hand");
    m.mask_left_hand = maskv("mask_left_hand");
    m.mask_face = maskv("mask_face");
    m.mask_torso = maskv("mask_torso");
    m.mask_arms = maskv("mask_arms");

    const auto& sel = c.get_i32("keypoint_selector");
    const auto& grp = c.get_i32("keypoint_groups");
    if (sel.size() != grp.size() * 2) throw parse_error("keypoint selector/groups size mismatch");
    for (std::size_t k = 0; k < grp.size(); ++k)
        m.keypoints.push_back({sel[2 * k] != 0, sel[2 * k + 1], grp[k]});

    m.joint_limits = mat("joint_limits", J, 6);
    m.finalize();
    m.validate();
    return m;
}

inline void save_model(const BodyModel& m, const std::string& path) {
    model_to_container(m).write(path);
}

inline BodyModel load_model(const std::string& path) {
    return model_from_container(ArrayContainer::read(path, "SCBM0001"));
}

// --- shape evaluation and kinematics -----------------------------------------

inline MatX shaped_template(const BodyModel& m, const ShapeVector& shape) {
    require(shape.size() == m.shape_dim(),
            "shaped_template: shape has " + std::to_string(shape.size()) + " coefficients, model needs " +
                std::to_string(m.shape_dim()));
    VecX disp = m.shape_blendshapes * shape.coefficients;  // (3V)
    MatX out = m.template_vertices;
    const long V = m.vertex_count();
    for (long v = 0; v < V; ++v)
        out.row(v) += Eigen::RowVector3d(disp[3 * v], disp[3 * v + 1], disp[3 * v + 2]);
    return out;
}

struct FkResult {
    MatX vertices;    // V x 3
    MatX joints;      // J x 3, posed
    MatX keypoints3d; // K x 3
};

// Rigid world transform per joint: rotation block plus origin.
struct JointTransforms {
    std::vector<Mat3> rot;
    std::vector<Vec3> pos;
};

inline JointTransforms joint_world_transforms(const BodyModel& m, const PoseVector& pose,
                                              const MatX& rest_joints) {
    const long J = m.joint_count();
    JointTransforms out;
    out.rot.resize(static_cast<std::size_t>(J));
    out.pos.resize(static_cast<std::size_t>(J));
    out.rot[0] = Mat3::Identity();  // global orientation is disregarded
    out.pos[0] = rest_joints.row(0).transpose();
    for (long j = 1; j < J; ++j) {
        const int par = m.kinematic_tree[static_cast<std::size_t>(j)];
        const Mat3 local = aa_to_matrix(pose.rotation_aa(layout::rotation_of_joint(static_cast<int>(j))));
        out.rot[static_cast<std::size_t>(j)] = out.rot[static_cast<std::size_t>(par)] * local;
        out.pos[static_cast<std::size_t>(j)] =
            out.rot[static_cast<std::size_t>(par)] *
                (rest_joints.row(j) - rest_joints.row(par)).transpose() +
            out.pos[static_cast<std::size_t>(par)];
    }
    return out;
}

inline MatX select_keypoints(const BodyModel& m, const MatX& vertices, const MatX& joints) {
    MatX out(m.keypoint_count(), 3);
    for (long k = 0; k < m.keypoint_count(); ++k) {
        const Keypoint& kp = m.keypoints[static_cast<std::size_t>(k)];
        out.row(k) = kp.is_vertex ? vertices.row(kp.index) : joints.row(kp.index);
    }
    return out;
}

// Linear blend skinning over the shaped, expression-displaced template.
// Joints are regressed from the shaped template only; expression moves
// face vertices but not the skeleton.
inline FkResult forward_kinematics(const BodyModel& m, const PoseVector& pose,
                                   const ShapeVector& shape) {
    const long V = m.vertex_count();
    const long J = m.joint_count();
    const MatX shaped = shaped_template(m, shape);
    const MatX rest_joints = m.joint_regressor * shaped;

    MatX rest = shaped;
    const VecX expr_disp = m.expr_blendshapes * pose.expression;
    for (long v = 0; v < V; ++v)
        rest.row(v) += Eigen::RowVector3d(expr_disp[3 * v], expr_disp[3 * v + 1], expr_disp[3 * v + 2]);

    const JointTransforms world = joint_world_transforms(m, pose, rest_joints);

    // per-joint skinning transforms relative to rest, stacked J x 12
    MatX stack(J, 12);
    for (long j = 0; j < J; ++j) {
        const Mat3& r = world.rot[static_cast<std::size_t>(j)];
        const Vec3 t = world.pos[static_cast<std::size_t>(j)] - r * rest_joints.row(j).transpose();
        stack(j, 0) = r(0, 0); stack(j, 1) = r(0, 1); stack(j, 2) = r(0, 2);
        stack(j, 3) = r(1, 0); stack(j, 4) = r(1, 1); stack(j, 5) = r(1, 2);
        stack(j, 6) = r(2, 0); stack(j, 7) = r(2, 1); stack(j, 8) = r(2, 2);
        stack(j, 9) = t.x(); stack(j, 10) = t.y(); stack(j, 11) = t.z();
    }
    const MatX blended = m.skinning_weights * stack;  // V x 12

    FkResult out;
    out.vertices.resize(V, 3);
    for (long v = 0; v < V; ++v) {
        const auto a = blended.row(v);
        const Vec3 x = rest.row(v).transpose();
        out.vertices(v, 0) = a[0] * x[0] + a[1] * x[1] + a[2] * x[2] + a[9];
        out.vertices(v, 1) = a[3] * x[0] + a[4] * x[1] + a[5] * x[2] + a[10];
        out.vertices(v, 2) = a[6] * x[0] + a[7] * x[1] + a[8] * x[2] + a[11];
    }
    out.joints.resize(J, 3);
    for (long j = 0; j < J; ++j) out.joints.row(j) = world.pos[static_cast<std::size_t>(j)].transpose();
    out.keypoints3d = select_keypoints(m, out.vertices, out.joints);
    return out;
}

// --- camera -------------------------------------------------------------------

struct Keypoints2D {
    MatX positions;   // K x 2, pixels
    VecX confidence;  // K, in [0,1]
};

struct Camera {
    double fx = 1100, fy = 1100, cx = 640, cy = 512;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    int width = 1280, height = 1024;

    void validate() const {
        const double det = rotation.determinant();
        const double ortho = (rotation * rotation.transpose() - Mat3::Identity()).norm();
        require(std::abs(det - 1.0) <= 1e-6 && ortho <= 1e-6,
                "camera rotation must be orthonormal with determinant +1");
    }

    Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
};

// Default synthetic capture camera: in front of the body, looking back at it.
inline Camera default_camera() {
    Camera cam;
    cam.rotation << 1, 0, 0, 0, -1, 0, 0, 0, -1;
    const Vec3 center(0, 1.25, 2.3);
    cam.translation = -cam.rotation * center;
    return cam;
}

// Pinhole projection. Points at or behind the camera plane are an error that
// names the offending keypoint.
inline MatX project_keypoints(const Camera& cam, const MatX& keypoints3d) {
    MatX out(keypoints3d.rows(), 2);
    for (long k = 0; k < keypoints3d.rows(); ++k) {
        const Vec3 p = cam.to_camera(keypoints3d.row(k).transpose());
        if (p.z() <= 1e-6)
            throw validation_error("project_keypoints: keypoint " + std::to_string(k) +
                                   " is behind the camera (z = " + std::to_string(p.z()) + ")");
        out(k, 0) = cam.fx * p.x() / p.z() + cam.cx;
        out(k, 1) = cam.fy * p.y() / p.z() + cam.cy;
    }
    return out;
}

}  // namespace scprior
