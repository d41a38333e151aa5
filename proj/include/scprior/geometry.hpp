#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <vector>

#include "scprior/body_model.hpp"
#include "scprior/common.hpp"
#include "scprior/tensor.hpp"

namespace scprior {

// --- ray / triangle ----------------------------------------------------------

struct RayHit {
    int triangle = -1;
    double t = 0;
    bool back_facing = false;  // sign of dot(face normal, ray direction)
};

namespace geo_detail {
constexpr double kMtEpsilon = 1e-9;

// Moller-Trumbore. Returns false for parallel or out-of-triangle rays.
inline bool ray_triangle(const Vec3& o, const Vec3& d, const Vec3& a, const Vec3& b, const Vec3& c,
                         double& t, bool& back_facing) {
    const Vec3 e1 = b - a, e2 = c - a;
    const Vec3 p = d.cross(e2);
    const double det = e1.dot(p);
    if (std::abs(det) < kMtEpsilon) return false;
    const double inv = 1.0 / det;
    const Vec3 s = o - a;
    const double u = s.dot(p) * inv;
    if (u < 0.0 || u > 1.0) return false;
    const Vec3 q = s.cross(e1);
    const double v = d.dot(q) * inv;
    if (v < 0.0 || u + v > 1.0) return false;
    t = e2.dot(q) * inv;
    // det = -d . (e1 x e2): a negative determinant means the ray runs along
    // the outward normal, i.e. it exits through this face
    back_facing = det < 0.0;
    return true;
}
}  // namespace geo_detail

// Median-split AABB tree. The tree owns a snapshot of the mesh; refit()
// updates vertex positions without rebuilding the topology.
class Bvh {
public:
    struct Node {
        Vec3 lo, hi;
        int left = -1, right = -1;
        int first = 0, count = 0;  // leaf triangle range when count > 0
    };

    Bvh() = default;

    Bvh(const MatX& vertices, const MatXi& faces) { build(vertices, faces); }

    void build(const MatX& vertices, const MatXi& faces) {
        require(faces.rows() >= 1, "build_bvh: mesh has no triangles");
        require(vertices.allFinite(), "build_bvh: vertex coordinates must be finite");
        verts_ = vertices;
        faces_ = faces;
        const long F = faces.rows();
        order_.resize(static_cast<std::size_t>(F));
        for (long i = 0; i < F; ++i) order_[static_cast<std::size_t>(i)] = static_cast<int>(i);
        nodes_.clear();
        nodes_.reserve(static_cast<std::size_t>(2 * F));
        build_node(0, static_cast<int>(F));
    }

    void refit(const MatX& vertices) {
        require(vertices.rows() == verts_.rows(), "bvh refit: vertex count changed");
        require(vertices.allFinite(), "bvh refit: vertex coordinates must be finite");
        verts_ = vertices;
        // children are allocated after their parent, so a reverse sweep sees
        // child boxes before the parent needs them
        for (long i = static_cast<long>(nodes_.size()) - 1; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.count > 0) {
                leaf_bounds(n);
            } else {
                const Node& l = nodes_[static_cast<std::size_t>(n.left)];
                const Node& r = nodes_[static_cast<std::size_t>(n.right)];
                n.lo = l.lo.cwiseMin(r.lo);
                n.hi = l.hi.cwiseMax(r.hi);
            }
        }
    }

    const MatX& vertices() const { return verts_; }
    const MatXi& faces() const { return faces_; }
    std::size_t node_count() const { return nodes_.size(); }

    // All intersections with t in (t_min, t_max), sorted by distance.
    // Triangles listed in `exclude` (sorted or not) are skipped.
    std::vector<RayHit> ray_hits(const Vec3& origin, const Vec3& direction, double t_min,
                                 double t_max, const std::vector<int>& exclude = {}) const {
        require(direction.norm() > 0, "ray_hits: zero direction");
        std::vector<RayHit> hits;
        const Vec3 inv = direction.cwiseInverse();
        std::vector<int> stack;
        stack.push_back(0);
        while (!stack.empty()) {
            const Node& n = nodes_[static_cast<std::size_t>(stack.back())];
            stack.pop_back();
            if (!box_hit(n, origin, inv, t_min, t_max)) continue;
            if (n.count > 0) {
                for (int i = n.first; i < n.first + n.count; ++i) {
                    const int tri = order_[static_cast<std::size_t>(i)];
                    if (std::find(exclude.begin(), exclude.end(), tri) != exclude.end()) continue;
                    double t;
                    bool back;
                    if (geo_detail::ray_triangle(origin, direction, vert(faces_(tri, 0)),
                                                 vert(faces_(tri, 1)), vert(faces_(tri, 2)), t,
                                                 back) &&
                        t > t_min && t < t_max)
                        hits.push_back({tri, t, back});
                }
            } else {
                stack.push_back(n.left);
                stack.push_back(n.right);
            }
        }
        std::sort(hits.begin(), hits.end(), [](const RayHit& a, const RayHit& b) {
            return a.t != b.t ? a.t < b.t : a.triangle < b.triangle;
        });
        return hits;
    }

private:
    Vec3 vert(int i) const { return verts_.row(i).transpose(); }

    void leaf_bounds(Node& n) {
        Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
        for (int i = n.first; i < n.first + n.count; ++i) {
            const int tri = order_[static_cast<std::size_t>(i)];
            for (int k = 0; k < 3; ++k) {
                const Vec3 p = vert(faces_(tri, k));
                lo = lo.cwiseMin(p);
                hi = hi.cwiseMax(p);
            }
        }
        n.lo = lo;
        n.hi = hi;
    }

    int build_node(int first, int count) {
        const int id = static_cast<int>(nodes_.size());
        nodes_.emplace_back();
        nodes_[static_cast<std::size_t>(id)].first = first;
        nodes_[static_cast<std::size_t>(id)].count = count;
        leaf_bounds(nodes_[static_cast<std::size_t>(id)]);
        if (count <= 4) return id;

        Vec3 clo = Vec3::Constant(1e300), chi = Vec3::Constant(-1e300);
        for (int i = first; i < first + count; ++i) {
            const Vec3 c = centroid(order_[static_cast<std::size_t>(i)]);
            clo = clo.cwiseMin(c);
            chi = chi.cwiseMax(c);
        }
        int axis = 0;
        (chi - clo).maxCoeff(&axis);
        // full sort with an id tie-break keeps the tree independent of input
        // permutations of equal centroids
        std::sort(order_.begin() + first, order_.begin() + first + count, [&](int a, int b) {
            const double ca = centroid(a)[axis], cb = centroid(b)[axis];
            return ca != cb ? ca < cb : a < b;
        });
        const int half = count / 2;
        nodes_[static_cast<std::size_t>(id)].count = 0;
        const int l = build_node(first, half);
        const int r = build_node(first + half, count - half);
        nodes_[static_cast<std::size_t>(id)].left = l;
        nodes_[static_cast<std::size_t>(id)].right = r;
        const Node& ln = nodes_[static_cast<std::size_t>(l)];
        const Node& rn = nodes_[static_cast<std::size_t>(r)];
        nodes_[static_cast<std::size_t>(id)].lo = ln.lo.cwiseMin(rn.lo);
        nodes_[static_cast<std::size_t>(id)].hi = ln.hi.cwiseMax(rn.hi);
        return id;
    }

    Vec3 centroid(int tri) const {
        return (vert(faces_(tri, 0)) + vert(faces_(tri, 1)) + vert(faces_(tri, 2))) / 3.0;
    }

    static bool box_hit(const Node& n, const Vec3& o, const Vec3& inv, double t_min, double t_max) {
        double t0 = t_min, t1 = t_max;
        for (int a = 0; a < 3; ++a) {
            double ta = (n.lo[a] - o[a]) * inv[a];
            double tb = (n.hi[a] - o[a]) * inv[a];
            if (ta > tb) std::swap(ta, tb);
            t0 = std::max(t0, ta);
            t1 = std::min(t1, tb);
            if (t0 > t1) return false;
        }
        return true;
    }

    std::vector<Node> nodes_;
    std::vector<int> order_;
    MatX verts_;
    MatXi faces_;
};

inline Bvh build_bvh(const MatX& vertices, const MatXi& faces) { return Bvh(vertices, faces); }

// area-weighted vertex normals
inline MatX vertex_normals(const MatX& vertices, const MatXi& faces) {
    MatX n = MatX::Zero(vertices.rows(), 3);
    for (long f = 0; f < faces.rows(); ++f) {
        const Vec3 a = vertices.row(faces(f, 0)).transpose();
        const Vec3 b = vertices.row(faces(f, 1)).transpose();
        const Vec3 c = vertices.row(faces(f, 2)).transpose();
        const Vec3 fn = (b - a).cross(c - a);  // twice the area, outward for CCW
        for (int k = 0; k < 3; ++k) n.row(faces(f, k)) += fn.transpose();
    }
    for (long v = 0; v < n.rows(); ++v) {
        const double len = n.row(v).norm();
        if (len > 1e-20) n.row(v) /= len;
    }
    return n;
}

inline std::vector<std::vector<int>> incident_triangles(long vertex_count, const MatXi& faces) {
    std::vector<std::vector<int>> inc(static_cast<std::size_t>(vertex_count));
    for (long f = 0; f < faces.rows(); ++f)
        for (int k = 0; k < 3; ++k)
            inc[static_cast<std::size_t>(faces(f, k))].push_back(static_cast<int>(f));
    return inc;
}

// --- inside-mesh detection -----------------------------------------------------

struct CollisionReport {
    std::vector<int> collided;  // sorted vertex ids
    double ratio = 0;           // |collided| / V
    int skipped_zero_normal = 0;
};

constexpr double kRayOriginEpsilon = 1e-6;

// Casts a ray along the outward normal from just off each probe vertex; the
// vertex is inside the mesh when the nearest hit is a back face.
inline CollisionReport detect_collisions(const Bvh& bvh, const std::vector<int>& probe_mask,
                                         const MatX& normals,
                                         const std::vector<std::vector<int>>& incident) {
    CollisionReport report;
    const MatX& verts = bvh.vertices();
    for (int v : probe_mask) {
        const Vec3 n = normals.row(v).transpose();
        if (n.norm() < 1e-12) {
            report.skipped_zero_normal += 1;
            continue;
        }
        const Vec3 origin = verts.row(v).transpose() + kRayOriginEpsilon * n;
        const auto hits = bvh.ray_hits(origin, n, 0.0, 1e30, incident[static_cast<std::size_t>(v)]);
        if (!hits.empty() && hits.front().back_facing) report.collided.push_back(v);
    }
    std::sort(report.collided.begin(), report.collided.end());
    report.ratio = static_cast<double>(report.collided.size()) / static_cast<double>(verts.rows());
    return report;
}

inline CollisionReport detect_collisions(const MatX& vertices, const MatXi& faces,
                                         const std::vector<int>& probe_mask, const MatX& normals) {
    const Bvh bvh(vertices, faces);
    return detect_collisions(bvh, probe_mask, normals, incident_triangles(vertices.rows(), faces));
}

// --- nearest-neighbor grid ------------------------------------------------------

// Uniform hash grid over a fixed subset of vertices.
class UniformGrid {
public:
    UniformGrid(const MatX& points, const std::vector<int>& subset, double cell)
        : points_(points), cell_(cell) {
        require(cell > 0, "uniform grid: cell size must be positive");
        for (int id : subset) cells_[key(points.row(id).transpose())].push_back(id);
    }

    // nearest subset point within `radius` of q, or -1; bounded cell scan
    int nearest_within(const Vec3& q, double radius, double* best_dist = nullptr) const {
        const int span = static_cast<int>(std::ceil(radius / cell_)) + 1;
        const Eigen::Vector3i c0 = cell_of(q);
        int best = -1;
        double best_d2 = radius * radius;
        for (int dx = -span; dx <= span; ++dx)
            for (int dy = -span; dy <= span; ++dy)
                for (int dz = -span; dz <= span; ++dz) {
                    const auto it = cells_.find(pack(c0.x() + dx, c0.y() + dy, c0.z() + dz));
                    if (it == cells_.end()) continue;
                    for (int id : it->second) {
                        const double d2 = (points_.row(id).transpose() - q).squaredNorm();
                        if (d2 < best_d2 || (d2 == best_d2 && best >= 0 && id < best)) {
                            best_d2 = d2;
                            best = id;
                        }
                    }
                }
        if (best >= 0 && best_dist) *best_dist = std::sqrt(best_d2);
        return best;
    }

    // nearest subset point to q; returns -1 when the subset is empty
    int nearest(const Vec3& q, double* best_dist = nullptr) const {
        if (cells_.empty()) return -1;
        int best = -1;
        double best_d2 = 1e300;
        const Eigen::Vector3i c0 = cell_of(q);
        for (int radius = 1;; ++radius) {
            // scan the cube shell at this radius
            for (int dx = -radius; dx <= radius; ++dx)
                for (int dy = -radius; dy <= radius; ++dy)
                    for (int dz = -radius; dz <= radius; ++dz) {
                        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != radius &&
                            radius > 1)
                            continue;  // interior already scanned
                        const auto it =
                            cells_.find(pack(c0.x() + dx, c0.y() + dy, c0.z() + dz));
                        if (it == cells_.end()) continue;
                        for (int id : it->second) {
                            const double d2 = (points_.row(id).transpose() - q).squaredNorm();
                            if (d2 < best_d2 || (d2 == best_d2 && id < best)) {
                                best_d2 = d2;
                                best = id;
                            }
                        }
                    }
            // all points within (radius-1) cells are guaranteed scanned
            if (best >= 0 && std::sqrt(best_d2) <= (radius - 1) * cell_) break;
            if (radius > 64 && best >= 0) break;
            if (radius > 4096) break;  // empty shells far beyond any data
        }
        if (best_dist) *best_dist = std::sqrt(best_d2);
        return best;
    }

private:
    Eigen::Vector3i cell_of(const Vec3& p) const {
        return {static_cast<int>(std::floor(p.x() / cell_)),
                static_cast<int>(std::floor(p.y() / cell_)),
                static_cast<int>(std::floor(p.z() / cell_))};
    }
    static std::int64_t pack(int x, int y, int z) {
        return (static_cast<std::int64_t>(x) * 73856093) ^
               (static_cast<std::int64_t>(y) * 19349663) ^
               (static_cast<std::int64_t>(z) * 83492791);
    }
    std::int64_t key(const Vec3& p) const {
        const Eigen::Vector3i c = cell_of(p);
        return pack(c.x(), c.y(), c.z());
    }

    const MatX& points_;
    double cell_;
    std::unordered_map<std::int64_t, std::vector<int>> cells_;
};

// --- contact maps ----------------------------------------------------------------

constexpr double kContactThreshold = 0.003;  // meters

// Binary flags over the hand vertex set: set when a hand vertex sits strictly
// closer than `threshold` to any non-hand vertex. `partners` records the
// nearest non-hand vertex per flagged entry for heatmap attribution.
struct ContactMap {
    std::vector<int> hand_vertices;  // fixed order: right hand then left hand
    std::vector<char> flags;
    std::vector<int> partners;  // -1 when unflagged
    double threshold = kContactThreshold;
    long frame_id = 0;

    bool any() const {
        for (char f : flags)
            if (f) return true;
        return false;
    }
};

inline ContactMap binary_contact_map(const MatX& vertices, const BodyModel& model,
                                     double threshold = kContactThreshold, long frame_id = 0) {
    require(threshold > 0, "binary_contact_map: threshold must be positive");
    ContactMap map;
    map.threshold = threshold;
    map.frame_id = frame_id;
    map.hand_vertices = model.hand_vertices();

    std::vector<int> non_hand;
    for (long v = 0; v < model.vertex_count(); ++v)
        if (!model.is_hand_vertex[static_cast<std::size_t>(v)]) non_hand.push_back(static_cast<int>(v));

    const UniformGrid grid(vertices, non_hand, std::max(threshold, 1e-4));
    map.flags.resize(map.hand_vertices.size(), 0);
    map.partners.resize(map.hand_vertices.size(), -1);
    for (std::size_t i = 0; i < map.hand_vertices.size(); ++i) {
        // bounded scan: only strictly-closer-than-threshold hits count
        const int nn = grid.nearest_within(vertices.row(map.hand_vertices[i]).transpose(), threshold);
        if (nn >= 0) {
            map.flags[i] = 1;
            map.partners[i] = nn;
        }
    }
    return map;
}

inline std::vector<long> screen_contact_frames(const std::vector<MatX>& frames,
                                               const BodyModel& model,
                                               double threshold = kContactThreshold) {
    std::vector<long> out;
    for (std::size_t i = 0; i < frames.size(); ++i)
        if (binary_contact_map(frames[i], model, threshold, static_cast<long>(i)).any())
            out.push_back(static_cast<long>(i));
    return out;
}

struct ContactHeatmap {
    VecX values;  // per-vertex likelihood over all V
    long sample_count = 0;
};

// Per-vertex mean of binary per-frame contact indicators. A frame marks its
// flagged hand vertices and each flagged vertex's nearest partner, so both
// sides of the contact are populated.
inline ContactHeatmap accumulate_heatmap(const std::vector<ContactMap>& maps,
                                         const BodyModel& model) {
    require(!maps.empty(), "accumulate_heatmap: no contact maps");
    ContactHeatmap heat;
    heat.values = VecX::Zero(model.vertex_count());
    heat.sample_count = static_cast<long>(maps.size());
    std::vector<char> frame_flag(static_cast<std::size_t>(model.vertex_count()));
    for (const ContactMap& map : maps) {
        require(static_cast<long>(map.hand_vertices.size()) ==
                    static_cast<long>(model.hand_vertices().size()),
                "accumulate_heatmap: contact map does not match the model");
        std::fill(frame_flag.begin(), frame_flag.end(), 0);
        for (std::size_t i = 0; i < map.flags.size(); ++i) {
            if (!map.flags[i]) continue;
            frame_flag[static_cast<std::size_t>(map.hand_vertices[i])] = 1;
            if (map.partners[i] >= 0) frame_flag[static_cast<std::size_t>(map.partners[i])] = 1;
        }
        for (long v = 0; v < model.vertex_count(); ++v)
            heat.values[v] += frame_flag[static_cast<std::size_t>(v)];
    }
    heat.values /= static_cast<double>(heat.sample_count);
    return heat;
}

// --- hand collision loss ----------------------------------------------------------

// L1 penetration loss restricted to hand probes and their nearest non-hand
// partners. Depth is the distance to the first back-facing hit along the
// outward normal; the hit plane is frozen for the backward pass.
struct CollisionLossTerm {
    int vertex = -1;
    double depth = 0;
    Vec3 depth_grad = Vec3::Zero();  // d(depth)/d(vertex position), frozen plane
};

struct CollisionLossResult {
    double loss = 0;
    std::vector<CollisionLossTerm> terms;
    CollisionReport report;  // over the probe set, ratio over all V
};

inline CollisionLossResult hand_collision_loss(const MatX& vertices, const MatXi& faces,
                                               const BodyModel& model, Bvh* reusable = nullptr) {
    Bvh local;
    Bvh* bvh = reusable ? reusable : &local;
    if (reusable && reusable->node_count() > 0)
        bvh->refit(vertices);
    else
        bvh->build(vertices, faces);

    const auto incident = incident_triangles(vertices.rows(), faces);
    const MatX normals = vertex_normals(vertices, faces);

    CollisionLossResult out;
    const std::vector<int> hand = model.hand_vertices();
    const CollisionReport hand_report = detect_collisions(*bvh, hand, normals, incident);

    // partners: nearest non-hand vertex per collided hand vertex
    std::vector<int> probes = hand;
    if (!hand_report.collided.empty()) {
        std::vector<int> non_hand;
        for (long v = 0; v < model.vertex_count(); ++v)
            if (!model.is_hand_vertex[static_cast<std::size_t>(v)])
                non_hand.push_back(static_cast<int>(v));
        const UniformGrid grid(vertices, non_hand, 0.02);
        std::vector<int> partners;
        for (int v : hand_report.collided) {
            const int nn = grid.nearest(vertices.row(v).transpose());
            if (nn >= 0) partners.push_back(nn);
        }
        std::sort(partners.begin(), partners.end());
        partners.erase(std::unique(partners.begin(), partners.end()), partners.end());
        probes.insert(probes.end(), partners.begin(), partners.end());
    }

    // depth terms for every collided probe
    std::vector<char> seen(static_cast<std::size_t>(vertices.rows()), 0);
    for (int v : probes) {
        if (seen[static_cast<std::size_t>(v)]) continue;
        seen[static_cast<std::size_t>(v)] = 1;
        const Vec3 n = normals.row(v).transpose();
        if (n.norm() < 1e-12) {
            out.report.skipped_zero_normal += 1;
            continue;
        }
        const Vec3 origin = vertices.row(v).transpose() + kRayOriginEpsilon * n;
        const auto hits = bvh->ray_hits(origin, n, 0.0, 1e30, incident[static_cast<std::size_t>(v)]);
        if (hits.empty() || !hits.front().back_facing) continue;
        const RayHit& hit = hits.front();
        const Vec3 a = vertices.row(faces(hit.triangle, 0)).transpose();
        const Vec3 b = vertices.row(faces(hit.triangle, 1)).transpose();
        const Vec3 c = vertices.row(faces(hit.triangle, 2)).transpose();
        const Vec3 tn = (b - a).cross(c - a).normalized();
        const double denom = n.dot(tn);
        CollisionLossTerm term;
        term.vertex = v;
        term.depth = hit.t;
        // t = ((a - o) . tn) / (d . tn) with the plane frozen
        term.depth_grad = std::abs(denom) > 1e-12 ? Vec3(-tn / denom) : Vec3::Zero();
        out.terms.push_back(term);
        out.report.collided.push_back(v);
    }
    std::sort(out.report.collided.begin(), out.report.collided.end());
    out.report.ratio =
        static_cast<double>(out.report.collided.size()) / static_cast<double>(vertices.rows());
    if (!out.terms.empty()) {
        double sum = 0;
        for (const auto& t : out.terms) sum += std::abs(t.depth);
        out.loss = sum / static_cast<double>(out.terms.size());
    }
    return out;
}

// Tape hook: vertices tensor (V x 3) -> scalar loss, gradient through the
// frozen-plane depth terms only.
inline ad::Tensor collision_loss_op(ad::Tape& tape, const ad::Tensor& vertices, const MatXi& faces,
                                    const BodyModel& model, Bvh* reusable = nullptr,
                                    CollisionLossResult* details = nullptr) {
    MatX v(vertices.rows(), 3);
    ad::CMapM vm = vertices.mat();
    for (long i = 0; i < v.rows(); ++i) v.row(i) = vm.row(i);
    CollisionLossResult res = hand_collision_loss(v, faces, model, reusable);
    if (details) *details = res;

    Eigen::VectorXd value(1);
    value[0] = res.loss;
    const long vid = vertices.id();
    const auto terms = res.terms;
    const double inv_n = res.terms.empty() ? 0.0 : 1.0 / static_cast<double>(res.terms.size());
    return ad::custom_op(tape, 1, 1, std::move(value), {vertices},
                         [vid, terms, inv_n](ad::Tape& t, long self) {
                             const double g = t.node(self).grad[0];
                             if (g == 0.0) return;
                             ad::MapM gv = t.grad_acc(vid);
                             for (const CollisionLossTerm& term : terms) {
                                 const double sign = term.depth >= 0 ? 1.0 : -1.0;
                                 gv.row(term.vertex) +=
                                     (g * inv_n * sign) * term.depth_grad.transpose();
                             }
                         });
}

}  // namespace scprior
