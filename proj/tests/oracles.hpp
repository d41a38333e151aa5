#pragma once

// Test-side oracles, independent of the BVH/grid query paths they check.

#include <vector>

#include "scprior/body_model.hpp"
#include "scprior/common.hpp"
#include "scprior/geometry.hpp"

namespace scprior::oracles {

// O(F) all-triangle intersection
inline std::vector<RayHit> brute_force_ray_hits(const MatX& verts, const MatXi& faces,
                                                const Vec3& o, const Vec3& d, double t_min,
                                                double t_max,
                                                const std::vector<int>& exclude = {}) {
    std::vector<RayHit> hits;
    for (long f = 0; f < faces.rows(); ++f) {
        if (std::find(exclude.begin(), exclude.end(), static_cast<int>(f)) != exclude.end())
            continue;
        double t;
        bool back;
        if (geo_detail::ray_triangle(o, d, verts.row(faces(f, 0)).transpose(),
                                     verts.row(faces(f, 1)).transpose(),
                                     verts.row(faces(f, 2)).transpose(), t, back) &&
            t > t_min && t < t_max)
            hits.push_back({static_cast<int>(f), t, back});
    }
    std::sort(hits.begin(), hits.end(),
              [](const RayHit& a, const RayHit& b) { return a.t != b.t ? a.t < b.t : a.triangle < b.triangle; });
    return hits;
}

// odd crossing count along the same offset ray the detector uses
inline bool parity_inside(const MatX& verts, const MatXi& faces, const Vec3& vertex_pos,
                          const Vec3& normal, const std::vector<int>& exclude) {
    const Vec3 origin = vertex_pos + kRayOriginEpsilon * normal;
    const auto hits = brute_force_ray_hits(verts, faces, origin, normal, 0.0, 1e30, exclude);
    return hits.size() % 2 == 1;
}

inline std::vector<int> parity_collided(const MatX& verts, const MatXi& faces,
                                        const std::vector<int>& probes, const MatX& normals) {
    const auto incident = incident_triangles(verts.rows(), faces);
    std::vector<int> out;
    for (int v : probes) {
        const Vec3 n = normals.row(v).transpose();
        if (n.norm() < 1e-12) continue;
        if (parity_inside(verts, faces, verts.row(v).transpose(), n,
                          incident[static_cast<std::size_t>(v)]))
            out.push_back(v);
    }
    std::sort(out.begin(), out.end());
    return out;
}

// O(V^2) contact flags
inline std::vector<char> brute_force_contact_flags(const MatX& verts, const BodyModel& model,
                                                   double threshold) {
    const std::vector<int> hand = model.hand_vertices();
    std::vector<char> flags(hand.size(), 0);
    for (std::size_t i = 0; i < hand.size(); ++i) {
        double best = 1e300;
        for (long v = 0; v < model.vertex_count(); ++v) {
            if (model.is_hand_vertex[static_cast<std::size_t>(v)]) continue;
            best = std::min(best, (verts.row(hand[i]) - verts.row(v)).norm());
        }
        flags[i] = best < threshold ? 1 : 0;
    }
    return flags;
}

// star-shaped blob: a perturbed, randomly oriented UV sphere, closed and
// watertight. The random orientation keeps probe rays in general position so
// they do not thread shared edges of the structured tessellation.
inline void add_blob(MatX& verts, MatXi& faces, const Vec3& center, double radius, Rng& rng,
                     int segs = 11, int bands = 7, double bump = 0.2, bool oriented = true) {
    const long v0 = verts.rows();
    std::vector<Vec3> pts;
    // smooth radial field from a few random harmonics
    Vec3 k1(rng.normal(), rng.normal(), rng.normal());
    Vec3 k2(rng.normal(), rng.normal(), rng.normal());
    const double p1 = rng.uniform() * 2 * M_PI, p2 = rng.uniform() * 2 * M_PI;
    const Mat3 orient =
        oriented ? aa_to_matrix(Vec3(rng.normal(), rng.normal(), rng.normal()).normalized() *
                                (0.3 + rng.uniform()))
                 : Mat3::Identity();
    auto rad = [&](const Vec3& dir) {
        return radius * (1.0 + bump * 0.5 * (std::sin(k1.dot(dir) + p1) + std::sin(k2.dot(dir) + p2)));
    };
    auto place = [&](const Vec3& dir) { return center + orient * (rad(dir) * dir); };
    pts.push_back(place(Vec3(0, 0, -1)));
    std::vector<std::vector<long>> band_ids;
    long next = v0 + 1;
    for (int b = 1; b < bands; ++b) {
        const double phi = M_PI * b / bands - M_PI / 2;
        std::vector<long> ids;
        for (int s = 0; s < segs; ++s) {
            const double th = 2 * M_PI * s / segs;
            const Vec3 dir(std::cos(phi) * std::cos(th), std::cos(phi) * std::sin(th),
                           std::sin(phi));
            pts.push_back(place(dir));
            ids.push_back(next++);
        }
        band_ids.push_back(ids);
    }
    pts.push_back(place(Vec3(0, 0, 1)));
    const long north = next;

    const long old_v = verts.rows();
    verts.conservativeResize(old_v + static_cast<long>(pts.size()), 3);
    for (std::size_t i = 0; i < pts.size(); ++i)
        verts.row(old_v + static_cast<long>(i)) = pts[i].transpose();

    std::vector<Eigen::Vector3i> fs;
    for (int s = 0; s < segs; ++s)
        fs.emplace_back(static_cast<int>(v0), static_cast<int>(band_ids[0][(s + 1) % segs]),
                        static_cast<int>(band_ids[0][s]));
    for (std::size_t b = 0; b + 1 < band_ids.size(); ++b)
        for (int s = 0; s < segs; ++s) {
            const int a = static_cast<int>(band_ids[b][s]);
            const int bb = static_cast<int>(band_ids[b][(s + 1) % segs]);
            const int c = static_cast<int>(band_ids[b + 1][(s + 1) % segs]);
            const int d = static_cast<int>(band_ids[b + 1][s]);
            fs.emplace_back(a, bb, c);
            fs.emplace_back(a, c, d);
        }
    for (int s = 0; s < segs; ++s)
        fs.emplace_back(static_cast<int>(north), static_cast<int>(band_ids.back()[s]),
                        static_cast<int>(band_ids.back()[(s + 1) % segs]));

    const long old_f = faces.rows();
    faces.conservativeResize(old_f + static_cast<long>(fs.size()), 3);
    for (std::size_t i = 0; i < fs.size(); ++i)
        faces.row(old_f + static_cast<long>(i)) = fs[i].transpose();
}

// closed axis-aligned box with outward winding
inline void add_box(MatX& verts, MatXi& faces, const Vec3& lo, const Vec3& hi) {
    const long v0 = verts.rows();
    MatX corners(8, 3);
    corners << lo.x(), lo.y(), lo.z(), hi.x(), lo.y(), lo.z(), hi.x(), hi.y(), lo.z(), lo.x(),
        hi.y(), lo.z(), lo.x(), lo.y(), hi.z(), hi.x(), lo.y(), hi.z(), hi.x(), hi.y(), hi.z(),
        lo.x(), hi.y(), hi.z();
    verts.conservativeResize(v0 + 8, 3);
    verts.bottomRows(8) = corners;
    const int q[6][4] = {{0, 1, 2, 3}, {5, 4, 7, 6}, {4, 0, 3, 7}, {1, 5, 6, 2}, {4, 5, 1, 0}, {3, 2, 6, 7}};
    const long f0 = faces.rows();
    faces.conservativeResize(f0 + 12, 3);
    for (int i = 0; i < 6; ++i) {
        faces.row(f0 + 2 * i) << static_cast<int>(v0) + q[i][0], static_cast<int>(v0) + q[i][2],
            static_cast<int>(v0) + q[i][1];
        faces.row(f0 + 2 * i + 1) << static_cast<int>(v0) + q[i][0], static_cast<int>(v0) + q[i][3],
            static_cast<int>(v0) + q[i][2];
    }
}

}  // namespace scprior::oracles
