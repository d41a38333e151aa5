#pragma once

#include <cinttypes>
#include <cstdio>
#include <string>
#include <vector>

#include "scprior/body_model.hpp"
#include "scprior/common.hpp"

namespace scprior {

// OBJ export: vertices and triangular faces, 1-based indices. printf-based
// formatting keeps output byte-stable across runs.
inline void write_obj(const std::string& path, const MatX& vertices, const MatXi& faces) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw error("cannot open '" + path + "' for writing");
    for (long v = 0; v < vertices.rows(); ++v)
        std::fprintf(f, "v %.9g %.9g %.9g\n", vertices(v, 0), vertices(v, 1), vertices(v, 2));
    for (long t = 0; t < faces.rows(); ++t)
        std::fprintf(f, "f %d %d %d\n", faces(t, 0) + 1, faces(t, 1) + 1, faces(t, 2) + 1);
    std::fclose(f);
}

// Per-vertex scalar sidecar: one value per vertex line, same order as the OBJ.
inline void write_heat_sidecar(const std::string& path, const std::vector<double>& values) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw error("cannot open '" + path + "' for writing");
    for (double v : values) std::fprintf(f, "%.9g\n", v);
    std::fclose(f);
}

}  // namespace scprior
