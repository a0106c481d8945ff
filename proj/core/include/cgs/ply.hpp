#pragma once

#include <stdexcept>
#include <string>

#include "cgs/scene.hpp"

namespace cgs {

/// Malformed or incomplete PLY structure (bad header, missing field, short body).
struct PlyFormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Structurally valid file carrying invalid values (NaN/Inf).
struct PlyValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Writes the scene as binary little-endian PLY in the reference 3DGS vertex
/// layout: x,y,z, nx,ny,nz (zero), f_dc_0..2 (zeroth-order SH: (c-0.5)/C0),
/// opacity (logit), scale_0..2 (log), rot_0..3. All properties are float32.
void export_ply(const GaussianScene& scene, const std::string& path);

/// Inverse of export_ply; extra properties are ignored, required ones must
/// be present. Round-trips within 1e-6 per field.
GaussianScene import_ply(const std::string& path);

/// The exact header emitted for n primitives (used by layout checks).
std::string ply_header_string(int64_t n);

constexpr double kShC0 = 0.28209479177387814;

}  // namespace cgs
