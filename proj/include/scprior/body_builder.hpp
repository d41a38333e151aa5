#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <vector>

#include "scprior/body_model.hpp"
#include "scprior/common.hpp"

namespace scprior {

// Procedural low-poly body with the same part/joint topology counts as the
// full parametric model: 53 joints, part masks for hands/face/torso/arms,
// shape and expression blendshape bases, 37 evaluation keypoints.
//
// The mesh is a union of closed tube/ellipsoid components, pairwise disjoint
// in the rest pose so that the rest pose carries no self-contact and no
// self-collision. Coordinates: +x is the body's left, +y up, +z forward.

namespace builder_detail {

enum PartTag { kNone = 0, kRightHand, kLeftHand, kFace, kTorso, kArms };

struct MeshAccum {
    std::vector<Vec3> verts;
    std::vector<Eigen::Vector3i> faces;
    std::vector<int> owner;  // controlling joint per vertex
    std::vector<int> part;   // PartTag per vertex

    int add_vertex(const Vec3& p, int joint, int tag) {
        verts.push_back(p);
        owner.push_back(joint);
        part.push_back(tag);
        return static_cast<int>(verts.size()) - 1;
    }

    void add_face(int a, int b, int c) { faces.emplace_back(a, b, c); }

    double signed_volume() const {
        double vol = 0;
        for (const auto& f : faces)
            vol += verts[static_cast<std::size_t>(f[0])].dot(
                       verts[static_cast<std::size_t>(f[1])].cross(verts[static_cast<std::size_t>(f[2])])) /
                   6.0;
        return vol;
    }
};

inline Vec3 any_perpendicular(const Vec3& a) {
    const Vec3 ref = std::abs(a.y()) < 0.9 ? Vec3(0, 1, 0) : Vec3(1, 0, 0);
    return a.cross(ref).normalized();
}

struct Ring {
    Vec3 center;
    double rx, rz;  // radii along the two cross axes
    int joint;
    int tag;
};

// Closed tube through a sequence of rings, with pole caps at both ends.
// Returns the far pole vertex id.
struct TubeResult {
    int near_pole = -1;
    int far_pole = -1;
    std::vector<int> ring_verts;  // all ring vertex ids in order
};

inline TubeResult add_tube(MeshAccum& m, const std::vector<Ring>& rings, int segs,
                           const Vec3& axis_hint) {
    TubeResult out;
    const Vec3 axis = (rings.back().center - rings.front().center).normalized();
    Vec3 u = axis_hint - axis_hint.dot(axis) * axis;
    if (u.norm() < 1e-6) u = any_perpendicular(axis);
    u.normalize();
    const Vec3 w = axis.cross(u).normalized();

    // poles slightly beyond the end rings
    const double cap0 = 0.55 * std::max(rings.front().rx, rings.front().rz);
    const double cap1 = 0.55 * std::max(rings.back().rx, rings.back().rz);
    out.near_pole = m.add_vertex(rings.front().center - cap0 * axis, rings.front().joint,
                                 rings.front().tag);
    std::vector<std::vector<int>> ring_ids;
    for (const Ring& r : rings) {
        std::vector<int> ids;
        for (int s = 0; s < segs; ++s) {
            const double th = 2.0 * M_PI * s / segs;
            const Vec3 p = r.center + r.rx * std::cos(th) * u + r.rz * std::sin(th) * w;
            ids.push_back(m.add_vertex(p, r.joint, r.tag));
            out.ring_verts.push_back(ids.back());
        }
        ring_ids.push_back(std::move(ids));
    }
    out.far_pole =
        m.add_vertex(rings.back().center + cap1 * axis, rings.back().joint, rings.back().tag);

    // near cap fan
    for (int s = 0; s < segs; ++s)
        m.add_face(out.near_pole, ring_ids[0][static_cast<std::size_t>((s + 1) % segs)],
                   ring_ids[0][static_cast<std::size_t>(s)]);
    // side quads
    for (std::size_t r = 0; r + 1 < ring_ids.size(); ++r)
        for (int s = 0; s < segs; ++s) {
            const int a = ring_ids[r][static_cast<std::size_t>(s)];
            const int b = ring_ids[r][static_cast<std::size_t>((s + 1) % segs)];
            const int c = ring_ids[r + 1][static_cast<std::size_t>((s + 1) % segs)];
            const int d = ring_ids[r + 1][static_cast<std::size_t>(s)];
            m.add_face(a, b, c);
            m.add_face(a, c, d);
        }
    // far cap fan
    const auto& last = ring_ids.back();
    for (int s = 0; s < segs; ++s)
        m.add_face(out.far_pole, last[static_cast<std::size_t>(s)],
                   last[static_cast<std::size_t>((s + 1) % segs)]);
    return out;
}

// UV ellipsoid, oriented by the frame (ax_u, ax_v, ax_w) with radii per axis.
// A left-handed frame would mirror the winding, so flip one symmetric axis.
inline std::vector<int> add_ellipsoid(MeshAccum& m, const Vec3& center, const Vec3& radii,
                                      Mat3 frame, int segs, int bands, int joint, int tag) {
    if (frame.determinant() < 0) frame.col(1) *= -1.0;
    std::vector<int> out;
    const int south = m.add_vertex(center - radii.z() * frame.col(2), joint, tag);
    out.push_back(south);
    std::vector<std::vector<int>> bands_ids;
    for (int b = 1; b < bands; ++b) {
        const double phi = M_PI * b / bands - M_PI / 2;  // -pi/2..pi/2
        std::vector<int> ids;
        for (int s = 0; s < segs; ++s) {
            const double th = 2.0 * M_PI * s / segs;
            const Vec3 local(radii.x() * std::cos(phi) * std::cos(th),
                             radii.y() * std::cos(phi) * std::sin(th), radii.z() * std::sin(phi));
            ids.push_back(m.add_vertex(center + frame * local, joint, tag));
            out.push_back(ids.back());
        }
        bands_ids.push_back(std::move(ids));
    }
    const int north = m.add_vertex(center + radii.z() * frame.col(2), joint, tag);
    out.push_back(north);

    for (int s = 0; s < segs; ++s)
        m.add_face(south, bands_ids[0][static_cast<std::size_t>((s + 1) % segs)],
                   bands_ids[0][static_cast<std::size_t>(s)]);
    for (std::size_t b = 0; b + 1 < bands_ids.size(); ++b)
        for (int s = 0; s < segs; ++s) {
            const int a = bands_ids[b][static_cast<std::size_t>(s)];
            const int bb = bands_ids[b][static_cast<std::size_t>((s + 1) % segs)];
            const int c = bands_ids[b + 1][static_cast<std::size_t>((s + 1) % segs)];
            const int d = bands_ids[b + 1][static_cast<std::size_t>(s)];
            m.add_face(a, bb, c);
            m.add_face(a, c, d);
        }
    const auto& top = bands_ids.back();
    for (int s = 0; s < segs; ++s)
        m.add_face(north, top[static_cast<std::size_t>(s)],
                   top[static_cast<std::size_t>((s + 1) % segs)]);
    return out;
}

struct HandResult {
    std::vector<int> fingertip_verts;  // 5, thumb..pinky
};

// Palm ellipsoid plus five single-component finger tubes. Finger bases start
// just off the palm surface so the components stay disjoint at rest.
inline HandResult add_hand(MeshAccum& m, const Vec3& wrist, const Vec3& forward, const Vec3& normal,
                           int wrist_joint, int first_finger_joint, int tag,
                           std::vector<Vec3>& joint_positions) {
    HandResult out;
    const Vec3 h = forward.normalized();
    Vec3 n = (normal - normal.dot(h) * h).normalized();
    const Vec3 wdir = h.cross(n).normalized();

    Mat3 frame;
    frame.col(0) = wdir;
    frame.col(1) = n;
    frame.col(2) = h;
    add_ellipsoid(m, wrist + 0.065 * h, Vec3(0.040, 0.016, 0.050), frame, 12, 8, wrist_joint, tag);

    struct FingerSpec {
        double along, across;     // base position relative to wrist
        double len_scale;
        double splay;
        Vec3 dir_bias;
    };
    const std::array<FingerSpec, 5> fingers = {{
        {0.050, 0.055, 0.90, 0.45, 0.35 * n},      // thumb: strongly splayed, tilted off-plane
        {0.126, 0.030, 1.00, 0.16, Vec3::Zero()},  // index
        {0.132, 0.010, 1.08, 0.05, Vec3::Zero()},  // middle
        {0.126, -0.010, 1.00, -0.07, Vec3::Zero()}, // ring
        {0.118, -0.030, 0.82, -0.20, Vec3::Zero()}, // pinky
    }};

    const std::array<double, 3> seg_len = {0.034, 0.025, 0.020};
    const std::array<double, 4> seg_rad = {0.0090, 0.0080, 0.0069, 0.0052};

    for (std::size_t f = 0; f < 5; ++f) {
        const FingerSpec& fs = fingers[f];
        const Vec3 base = wrist + fs.along * h + fs.across * wdir;
        Vec3 fdir = (h + fs.splay * wdir + fs.dir_bias).normalized();
        if (f == 0) fdir = (0.7 * h + 0.6 * wdir + 0.25 * n).normalized();

        std::vector<Vec3> joints(3);
        joints[0] = base;
        joints[1] = base + fs.len_scale * seg_len[0] * fdir;
        joints[2] = joints[1] + fs.len_scale * seg_len[1] * fdir;
        const Vec3 tip = joints[2] + fs.len_scale * seg_len[2] * fdir;
        const int j0 = first_finger_joint + static_cast<int>(f) * 3;
        for (int k = 0; k < 3; ++k) joint_positions[static_cast<std::size_t>(j0 + k)] = joints[static_cast<std::size_t>(k)];

        std::vector<Ring> rings;
        rings.push_back({base, seg_rad[0], seg_rad[0], j0, tag});
        rings.push_back({joints[1], seg_rad[1], seg_rad[1], j0 + 1, tag});
        rings.push_back({joints[2], seg_rad[2], seg_rad[2], j0 + 2, tag});
        rings.push_back({joints[2] + 0.6 * fs.len_scale * seg_len[2] * fdir, seg_rad[3], seg_rad[3],
                         j0 + 2, tag});
        TubeResult tr = add_tube(m, rings, 8, n);
        // tip pole doubles as the fingertip keypoint; base vertices follow the wrist
        m.owner[static_cast<std::size_t>(tr.near_pole)] = wrist_joint;
        out.fingertip_verts.push_back(tr.far_pole);
        (void)tip;
    }
    return out;
}

}  // namespace builder_detail

inline BodyModel build_default_model(long n_shape_coeffs = 300, std::uint64_t seed = 20240817ull) {
    using namespace builder_detail;
    require(n_shape_coeffs >= 8, "build_default_model: need at least 8 shape coefficients");

    const long J = layout::kJoints;
    std::vector<Vec3> jp(static_cast<std::size_t>(J), Vec3::Zero());
    std::vector<int> parent(static_cast<std::size_t>(J), -1);

    // skeleton: pelvis root, spine chain, legs, arms, jaw, finger chains
    jp[0] = {0, 0.95, 0};
    auto set = [&](int j, int par, const Vec3& p) {
        parent[static_cast<std::size_t>(j)] = par;
        jp[static_cast<std::size_t>(j)] = p;
    };
    set(1, 0, {0, 1.05, 0});    // spine1
    set(2, 1, {0, 1.16, 0});    // spine2
    set(3, 2, {0, 1.28, 0});    // chest
    set(4, 3, {0, 1.44, 0});    // neck
    set(5, 4, {0, 1.53, 0});    // head
    set(6, 0, {0.09, 0.90, 0});     // left hip
    set(7, 6, {0.095, 0.50, 0});    // left knee
    set(8, 7, {0.10, 0.09, 0});     // left ankle
    set(9, 8, {0.10, 0.03, 0.10});  // left foot
    set(10, 0, {-0.09, 0.90, 0});
    set(11, 10, {-0.095, 0.50, 0});
    set(12, 11, {-0.10, 0.09, 0});
    set(13, 12, {-0.10, 0.03, 0.10});
    const Vec3 upper_dir_l = Vec3(0.50, -0.82, 0.28).normalized();
    const Vec3 fore_dir_l = Vec3(0.28, -0.86, 0.42).normalized();
    set(14, 3, {0.045, 1.40, 0});                       // left collar
    set(15, 14, {0.17, 1.39, 0});                       // left shoulder
    set(16, 15, jp[15] + 0.28 * upper_dir_l);           // left elbow
    set(17, 16, jp[16] + 0.26 * fore_dir_l);            // left wrist
    auto mirror = [](const Vec3& p) { return Vec3(-p.x(), p.y(), p.z()); };
    set(18, 3, mirror(jp[14]));
    set(19, 18, mirror(jp[15]));
    set(20, 19, mirror(jp[16]));
    set(21, 20, mirror(jp[17]));
    set(22, 5, {0, 1.50, 0.045});  // jaw
    for (int f = 0; f < 5; ++f)
        for (int k = 0; k < 3; ++k) {
            set(layout::kRhFirst + f * 3 + k, k == 0 ? 21 : layout::kRhFirst + f * 3 + k - 1,
                Vec3::Zero());
            set(layout::kLhFirst + f * 3 + k, k == 0 ? 17 : layout::kLhFirst + f * 3 + k - 1,
                Vec3::Zero());
        }

    MeshAccum mesh;

    // torso: elliptical tube along the spine
    {
        std::vector<Ring> rings;
        struct T { double y, rx, rz; int joint; };
        const std::vector<T> profile = {
            {0.885, 0.150, 0.098, 0}, {0.93, 0.155, 0.104, 0},  {0.99, 0.150, 0.102, 0},
            {1.05, 0.143, 0.099, 1},  {1.11, 0.140, 0.098, 1},  {1.17, 0.143, 0.099, 2},
            {1.23, 0.150, 0.101, 2},  {1.29, 0.157, 0.104, 3},  {1.35, 0.158, 0.102, 3},
            {1.40, 0.150, 0.096, 3},  {1.445, 0.120, 0.082, 3},
        };
        for (const T& t : profile) rings.push_back({{0, t.y, 0}, t.rx, t.rz, t.joint, kTorso});
        add_tube(mesh, rings, 18, {1, 0, 0});
    }
    // neck
    {
        std::vector<Ring> rings = {{{0, 1.435, 0.005}, 0.047, 0.047, 4, kNone},
                                   {{0, 1.49, 0.008}, 0.046, 0.046, 4, kNone},
                                   {{0, 1.545, 0.010}, 0.050, 0.052, 5, kNone}};
        add_tube(mesh, rings, 10, {1, 0, 0});
    }
    // head: face tag on the front half, jaw ownership on the lower front
    {
        const Vec3 c(0, 1.615, 0.012);
        Mat3 frame = Mat3::Identity();
        const auto ids = add_ellipsoid(mesh, c, Vec3(0.080, 0.105, 0.094), frame, 16, 13, 5, kNone);
        // frame maps x->x, y->y(!), z->z with bands around z; relabel by position
        for (int v : ids) {
            const Vec3 p = mesh.verts[static_cast<std::size_t>(v)];
            if (p.z() > c.z() + 0.035) mesh.part[static_cast<std::size_t>(v)] = kFace;
            if (p.z() > c.z() + 0.02 && p.y() < c.y() - 0.055)
                mesh.owner[static_cast<std::size_t>(v)] = 22;  // chin follows the jaw
        }
    }
    // legs
    for (int side = 0; side < 2; ++side) {
        const int hip = side == 0 ? 6 : 10, knee = side == 0 ? 7 : 11, ankle = side == 0 ? 8 : 12,
                  foot = side == 0 ? 9 : 13;
        const double sx = side == 0 ? 1.0 : -1.0;
        std::vector<Ring> thigh = {
            {{sx * 0.090, 0.86, 0}, 0.073, 0.075, hip, kNone},
            {{sx * 0.092, 0.74, 0}, 0.068, 0.069, hip, kNone},
            {{sx * 0.094, 0.62, 0}, 0.060, 0.061, hip, kNone},
            {{sx * 0.095, 0.52, 0}, 0.053, 0.054, hip, kNone},
        };
        add_tube(mesh, thigh, 12, {0, 0, 1});
        std::vector<Ring> shin = {
            {{sx * 0.095, 0.475, 0}, 0.049, 0.050, knee, kNone},
            {{sx * 0.097, 0.36, 0}, 0.044, 0.045, knee, kNone},
            {{sx * 0.099, 0.23, 0}, 0.038, 0.039, knee, kNone},
            {{sx * 0.100, 0.125, 0}, 0.034, 0.035, knee, kNone},
        };
        add_tube(mesh, shin, 11, {0, 0, 1});
        std::vector<Ring> ft = {
            {{sx * 0.100, 0.055, 0.005}, 0.033, 0.030, ankle, kNone},
            {{sx * 0.100, 0.042, 0.065}, 0.031, 0.026, foot, kNone},
            {{sx * 0.100, 0.036, 0.125}, 0.026, 0.020, foot, kNone},
        };
        add_tube(mesh, ft, 9, {1, 0, 0});
    }
    // arms
    std::vector<int> arm_verts_begin;
    for (int side = 0; side < 2; ++side) {
        const int shoulder = side == 0 ? 15 : 19, elbow = side == 0 ? 16 : 20;
        const double sx = side == 0 ? 1.0 : -1.0;
        auto sm = [&](const Vec3& p) { return Vec3(sx * p.x(), p.y(), p.z()); };
        const Vec3 sh = sm(jp[15]), el = sm(jp[16]), wr = sm(jp[17]);
        const Vec3 ud = (el - sh).normalized(), fd = (wr - el).normalized();
        std::vector<Ring> upper;
        for (int i = 0; i <= 5; ++i) {
            const double t = 0.06 + 0.90 * i / 5.0;
            upper.push_back({sh + t * 0.28 * ud, 0.047 - 0.009 * t, 0.047 - 0.009 * t, shoulder, kArms});
        }
        add_tube(mesh, upper, 11, {0, 0, 1});
        std::vector<Ring> fore;
        for (int i = 0; i <= 5; ++i) {
            const double t = 0.05 + 0.87 * i / 5.0;
            fore.push_back({el + t * 0.26 * fd, 0.038 - 0.011 * t, 0.038 - 0.011 * t, elbow, kArms});
        }
        add_tube(mesh, fore, 11, {0, 0, 1});
    }
    // hands: palm normal is the forward component perpendicular to the forearm
    HandResult rh, lh;
    {
        const Vec3 fd_l = fore_dir_l;
        const Vec3 n_l = (Vec3(0, 0, 1) - Vec3(0, 0, 1).dot(fd_l) * fd_l).normalized();
        lh = add_hand(mesh, jp[17], fd_l, n_l, 17, layout::kLhFirst, kLeftHand, jp);
        const Vec3 fd_r(-fd_l.x(), fd_l.y(), fd_l.z());
        const Vec3 n_r(-n_l.x(), n_l.y(), n_l.z());
        rh = add_hand(mesh, jp[21], fd_r, n_r, 21, layout::kRhFirst, kRightHand, jp);
    }

    const long V = static_cast<long>(mesh.verts.size());
    const long F = static_cast<long>(mesh.faces.size());

    BodyModel m;
    m.template_vertices.resize(V, 3);
    for (long v = 0; v < V; ++v) m.template_vertices.row(v) = mesh.verts[static_cast<std::size_t>(v)].transpose();
    m.faces.resize(F, 3);
    for (long f = 0; f < F; ++f) m.faces.row(f) = mesh.faces[static_cast<std::size_t>(f)].transpose();
    m.kinematic_tree = parent;

    // skinning: rigid to the owning joint, smoothed near adjacent joints
    m.skinning_weights = MatX::Zero(V, J);
    for (long v = 0; v < V; ++v) {
        const int own = mesh.owner[static_cast<std::size_t>(v)];
        const Vec3 p = mesh.verts[static_cast<std::size_t>(v)];
        const bool finger = own >= layout::kRhFirst;
        const double blend_r = finger ? 0.014 : 0.05;
        // blend toward children whose pivot is close to the vertex; the owner
        // keeps at least 40% so rows stay convex
        std::vector<std::pair<long, double>> blends;
        double total = 0;
        for (long j = 1; j < J; ++j) {
            if (parent[static_cast<std::size_t>(j)] != own) continue;
            const double d = (p - jp[static_cast<std::size_t>(j)]).norm();
            if (d < blend_r) {
                const double wj = 0.5 * (1.0 - d / blend_r);
                blends.emplace_back(j, wj);
                total += wj;
            }
        }
        const double cap = std::min(total, 0.6);
        if (total > 0)
            for (const auto& [j, wj] : blends) m.skinning_weights(v, j) = wj * cap / total;
        m.skinning_weights(v, own) = 1.0 - cap;
    }

    // joint regressor: min-norm affine combination of the nearest vertices,
    // exact on the template by construction
    m.joint_regressor = MatX::Zero(J, V);
    for (long j = 0; j < J; ++j) {
        const Vec3 target = jp[static_cast<std::size_t>(j)];
        std::vector<std::pair<double, long>> order;
        for (long v = 0; v < V; ++v)
            order.emplace_back((mesh.verts[static_cast<std::size_t>(v)] - target).squaredNorm(), v);
        std::partial_sort(order.begin(), order.begin() + 12, order.end());
        const int k = 12;
        MatX A(4, k);
        for (int i = 0; i < k; ++i) {
            A.col(i).head<3>() = mesh.verts[static_cast<std::size_t>(order[static_cast<std::size_t>(i)].second)];
            A(3, i) = 1.0;
        }
        Eigen::Vector4d b;
        b << target, 1.0;
        const VecX w = A.completeOrthogonalDecomposition().solve(b);
        for (int i = 0; i < k; ++i)
            m.joint_regressor(j, order[static_cast<std::size_t>(i)].second) = w[i];
    }

    // part masks
    for (long v = 0; v < V; ++v) {
        switch (mesh.part[static_cast<std::size_t>(v)]) {
            case kRightHand: m.mask_right_hand.push_back(static_cast<int>(v)); break;
            case kLeftHand: m.mask_left_hand.push_back(static_cast<int>(v)); break;
            case kFace: m.mask_face.push_back(static_cast<int>(v)); break;
            case kTorso: m.mask_torso.push_back(static_cast<int>(v)); break;
            case kArms: m.mask_arms.push_back(static_cast<int>(v)); break;
            default: break;
        }
    }

    // shape blendshapes: a handful of strong semantic components, then small
    // smooth seeded displacement fields up to n_shape_coeffs
    m.shape_blendshapes = MatX::Zero(3 * V, n_shape_coeffs);
    const Vec3 belly_center(0, 1.06, 0.10);
    const Vec3 head_center(0, 1.615, 0.012);
    for (long v = 0; v < V; ++v) {
        const Vec3 p = mesh.verts[static_cast<std::size_t>(v)];
        const int own = mesh.owner[static_cast<std::size_t>(v)];
        auto put = [&](long k, const Vec3& d) { m.shape_blendshapes.block<3, 1>(3 * v, k) = d; };

        put(0, 0.04 * p);  // stature: uniform scale about the origin
        // belly girth: radial push from the spine axis, gaussian falloff around the belly
        {
            Vec3 radial(p.x(), 0, p.z());
            const double rn = radial.norm();
            if (rn > 1e-9) radial /= rn;
            const double fall = std::exp(-(p - belly_center).squaredNorm() / (2 * 0.18 * 0.18));
            put(1, 0.030 * fall * radial);
        }
        // limb length: stretch arms/legs along the limb away from their root
        {
            Vec3 d = Vec3::Zero();
            if (own == 15 || own == 16 || own == 17 || own >= layout::kLhFirst) {
                const Vec3 root = jp[15];
                d = 0.055 * (p - root);
            } else if (own == 19 || own == 20 || own == 21 ||
                       (own >= layout::kRhFirst && own < layout::kLhFirst)) {
                const Vec3 root = jp[19];
                d = 0.055 * (p - root);
            } else if (own >= 6 && own <= 13) {
                const Vec3 root = own <= 9 ? jp[6] : jp[10];
                d = 0.055 * (p - root);
            }
            put(2, d);
        }
        // head size
        {
            const Vec3 d = p - head_center;
            const double fall = std::exp(-d.squaredNorm() / (2 * 0.13 * 0.13));
            put(3, 0.018 * fall * d);
        }
        // hand size: radial about each wrist
        {
            Vec3 d = Vec3::Zero();
            if (own >= layout::kRhFirst && own < layout::kLhFirst) d = 0.08 * (p - jp[21]);
            else if (own >= layout::kLhFirst) d = 0.08 * (p - jp[17]);
            else if (own == 17) d = 0.05 * (p - jp[17]);
            else if (own == 21) d = 0.05 * (p - jp[21]);
            put(4, d);
        }
        // shoulder width
        {
            const double fall = std::exp(-std::pow(p.y() - 1.39, 2) / (2 * 0.10 * 0.10));
            put(5, Vec3(0.02 * fall * (p.x() > 0 ? 1 : -1), 0, 0));
        }
        // chest depth
        {
            const double fall =
                std::exp(-std::pow(p.y() - 1.30, 2) / (2 * 0.09 * 0.09)) * (p.z() > 0 ? 1.0 : 0.3);
            put(6, Vec3(0, 0, 0.02 * fall));
        }
        // leg girth
        if (own >= 6 && own <= 13) {
            const Vec3 axis_pt(p.x() > 0 ? 0.095 : -0.095, p.y(), 0);
            Vec3 radial = p - axis_pt;
            radial.y() = 0;
            const double rn = radial.norm();
            if (rn > 1e-9) put(7, 0.018 * (radial / rn));
        }
    }
    {
        Rng rng(seed);
        for (long k = 8; k < n_shape_coeffs; ++k) {
            // three random low-frequency sinusoids per component
            std::array<Vec3, 3> freq, phase_axis;
            std::array<double, 3> phase;
            for (int i = 0; i < 3; ++i) {
                freq[static_cast<std::size_t>(i)] =
                    Vec3(rng.normal(), rng.normal(), rng.normal()) * 3.0;
                phase[static_cast<std::size_t>(i)] = rng.uniform() * 2 * M_PI;
                phase_axis[static_cast<std::size_t>(i)] =
                    Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
            }
            for (long v = 0; v < V; ++v) {
                const Vec3 p = mesh.verts[static_cast<std::size_t>(v)];
                Vec3 d = Vec3::Zero();
                for (int i = 0; i < 3; ++i)
                    d += std::sin(freq[static_cast<std::size_t>(i)].dot(p) +
                                  phase[static_cast<std::size_t>(i)]) *
                         phase_axis[static_cast<std::size_t>(i)];
                m.shape_blendshapes.block<3, 1>(3 * v, k) = 0.0012 * d;
            }
        }
    }

    // expression blendshapes: smooth bumps supported on the face mask only
    m.expr_blendshapes = MatX::Zero(3 * V, layout::kExpr);
    {
        Rng rng(seed ^ 0x9e37ull);
        std::vector<Vec3> face_pts;
        for (int v : m.mask_face) face_pts.push_back(mesh.verts[static_cast<std::size_t>(v)]);
        for (long e = 0; e < layout::kExpr; ++e) {
            const Vec3 c = face_pts[rng.uniform_int(face_pts.size())];
            const Vec3 dir = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
            for (int v : m.mask_face) {
                const Vec3 p = mesh.verts[static_cast<std::size_t>(v)];
                const double fall = std::exp(-(p - c).squaredNorm() / (2 * 0.03 * 0.03));
                m.expr_blendshapes.block<3, 1>(3 * v, e) = 0.004 * fall * dir;
            }
        }
    }

    // keypoints: root + 21 body joints, 10 fingertips, jaw, 4 face vertices
    for (int j = 0; j <= 21; ++j) m.keypoints.push_back({false, j, 0});
    for (int t : rh.fingertip_verts) m.keypoints.push_back({true, t, 1});
    for (int t : lh.fingertip_verts) m.keypoints.push_back({true, t, 1});
    m.keypoints.push_back({false, layout::kJaw, 2});
    {
        auto pick = [&](auto&& score) {
            int best = m.mask_face[0];
            double bs = -1e30;
            for (int v : m.mask_face) {
                const double s = score(mesh.verts[static_cast<std::size_t>(v)]);
                if (s > bs) {
                    bs = s;
                    best = v;
                }
            }
            return best;
        };
        m.keypoints.push_back({true, pick([](const Vec3& p) { return p.z(); }), 2});          // nose
        m.keypoints.push_back({true, pick([](const Vec3& p) { return -p.y(); }), 2});         // chin
        m.keypoints.push_back({true, pick([](const Vec3& p) { return p.x() + 0.2 * p.z(); }), 2});
        m.keypoints.push_back({true, pick([](const Vec3& p) { return -p.x() + 0.2 * p.z(); }), 2});
    }

    // joint limits: axis-angle boxes, generous for arm/finger chains
    m.joint_limits = MatX::Zero(J, 6);
    auto lim = [&](int j, double lo, double hi) {
        m.joint_limits.row(j) << lo, lo, lo, hi, hi, hi;
    };
    lim(0, 0, 0);
    for (int j : {1, 2, 3}) lim(j, -0.45, 0.45);
    lim(4, -0.7, 0.7);
    lim(5, -0.6, 0.6);
    for (int j : {6, 10}) lim(j, -1.0, 1.0);
    for (int j : {7, 11}) lim(j, -0.1, 2.0);
    for (int j : {8, 9, 12, 13}) lim(j, -0.5, 0.5);
    for (int j : {14, 18}) lim(j, -0.35, 0.35);
    for (int j : {15, 19}) lim(j, -2.0, 2.0);
    for (int j : {16, 20}) lim(j, -2.4, 2.4);
    for (int j : {17, 21}) lim(j, -1.1, 1.1);
    m.joint_limits.row(layout::kJaw) << -0.12, -0.15, -0.15, 0.5, 0.15, 0.15;
    for (int j = layout::kRhFirst; j < J; ++j) lim(j, -1.9, 1.9);

    m.finalize();
    m.validate();
    return m;
}

}  // namespace scprior
