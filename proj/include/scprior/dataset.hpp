#pragma once

#include <string>
#include <vector>

#include "scprior/body_model.hpp"
#include "scprior/container.hpp"

namespace scprior {

struct PoseSample {
    VecX pose_aa;  // 166, axis-angle layout
    long subject = 0;
    long action = 0;
};

// Screened self-contact poses with per-subject identity coefficients.
struct PoseDataset {
    std::vector<PoseSample> samples;
    MatX subject_shapes;  // n_subjects x N_s
    std::vector<std::string> action_names;
    std::string split;  // "train" or "eval"
    int format_version = 1;

    long size() const { return static_cast<long>(samples.size()); }
    long subject_count() const { return subject_shapes.rows(); }

    ShapeVector shape_of(long sample) const {
        return ShapeVector(subject_shapes.row(samples[static_cast<std::size_t>(sample)].subject)
                               .transpose());
    }
};

inline ArrayContainer dataset_to_container(const PoseDataset& ds) {
    ArrayContainer c("SCDS0001");
    const auto n = static_cast<std::uint64_t>(ds.size());
    std::vector<double> poses(static_cast<std::size_t>(n) * layout::kAaDim);
    std::vector<std::int32_t> subjects(static_cast<std::size_t>(n));
    std::vector<std::int32_t> actions(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        for (long d = 0; d < layout::kAaDim; ++d)
            poses[i * layout::kAaDim + static_cast<std::size_t>(d)] = ds.samples[i].pose_aa[d];
        subjects[i] = static_cast<std::int32_t>(ds.samples[i].subject);
        actions[i] = static_cast<std::int32_t>(ds.samples[i].action);
    }
    c.add_f64("poses", {n, static_cast<std::uint64_t>(layout::kAaDim)}, std::move(poses));
    std::vector<double> shapes(static_cast<std::size_t>(ds.subject_shapes.size()));
    for (long i = 0; i < ds.subject_shapes.rows(); ++i)
        for (long j = 0; j < ds.subject_shapes.cols(); ++j)
            shapes[static_cast<std::size_t>(i * ds.subject_shapes.cols() + j)] = ds.subject_shapes(i, j);
    c.add_f64("shapes",
              {static_cast<std::uint64_t>(ds.subject_shapes.rows()),
               static_cast<std::uint64_t>(ds.subject_shapes.cols())},
              std::move(shapes));
    c.add_i32("subject_ids", {n}, std::move(subjects));
    c.add_i32("action_ids", {n}, std::move(actions));
    std::string names;
    for (const std::string& a : ds.action_names) names += a + "\n";
    c.add_u8("action_names", {names.size()}, std::vector<std::uint8_t>(names.begin(), names.end()));
    c.add_u8("split", {ds.split.size()}, std::vector<std::uint8_t>(ds.split.begin(), ds.split.end()));
    c.add_i32("format_version", {1}, {ds.format_version});
    return c;
}

inline PoseDataset dataset_from_container(const ArrayContainer& c) {
    PoseDataset ds;
    const auto& pdims = c.get("poses").dims;
    if (pdims.size() != 2 || pdims[1] != layout::kAaDim)
        throw parse_error("dataset: poses must be N x 166");
    const long n = static_cast<long>(pdims[0]);
    const auto& poses = c.get_f64("poses");
    const auto& subjects = c.get_i32("subject_ids");
    const auto& actions = c.get_i32("action_ids");
    if (static_cast<long>(subjects.size()) != n || static_cast<long>(actions.size()) != n)
        throw parse_error("dataset: id arrays do not match the pose count");
    ds.samples.resize(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) {
        PoseSample& s = ds.samples[static_cast<std::size_t>(i)];
        s.pose_aa.resize(layout::kAaDim);
        for (long d = 0; d < layout::kAaDim; ++d)
            s.pose_aa[d] = poses[static_cast<std::size_t>(i * layout::kAaDim + d)];
        s.subject = subjects[static_cast<std::size_t>(i)];
        s.action = actions[static_cast<std::size_t>(i)];
    }
    const auto& sdims = c.get("shapes").dims;
    const auto& shapes = c.get_f64("shapes");
    ds.subject_shapes.resize(static_cast<long>(sdims[0]), static_cast<long>(sdims[1]));
    for (long i = 0; i < ds.subject_shapes.rows(); ++i)
        for (long j = 0; j < ds.subject_shapes.cols(); ++j)
            ds.subject_shapes(i, j) = shapes[static_cast<std::size_t>(i * ds.subject_shapes.cols() + j)];
    const auto& names = c.get_u8("action_names");
    std::string cur;
    for (std::uint8_t b : names) {
        if (b == '\n') {
            ds.action_names.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(b));
        }
    }
    const auto& split = c.get_u8("split");
    ds.split.assign(split.begin(), split.end());
    ds.format_version = c.get_i32("format_version")[0];
    return ds;
}

inline void save_dataset(const PoseDataset& ds, const std::string& path) {
    dataset_to_container(ds).write(path);
}

inline PoseDataset load_dataset(const std::string& path) {
    return dataset_from_container(ArrayContainer::read(path, "SCDS0001"));
}

}  // namespace scprior
