#include "cgs/ply.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

namespace cgs {

namespace {

const char* kFields[] = {"x",       "y",       "z",       "nx",      "ny",      "nz",
                         "f_dc_0",  "f_dc_1",  "f_dc_2",  "opacity", "scale_0", "scale_1",
                         "scale_2", "rot_0",   "rot_1",   "rot_2",   "rot_3"};
constexpr int kFieldCount = 17;

double logit(double p) { return std::log(p / (1.0 - p)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

std::string ply_header_string(int64_t n) {
    std::ostringstream os;
    os << "ply\n"
       << "format binary_little_endian 1.0\n"
       << "element vertex " << n << "\n";
    for (const char* f : kFields) os << "property float " << f << "\n";
    os << "end_header\n";
    return os.str();
}

void export_ply(const GaussianScene& scene, const std::string& path) {
    const int64_t n = scene.size();
    for (const Tensor* t :
         {&scene.positions, &scene.rotations, &scene.log_scales, &scene.colors, &scene.opacities}) {
        if (!t->all_finite()) throw PlyValidationError("export_ply: non-finite attribute value");
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw PlyFormatError("export_ply: cannot open " + path);
    out << ply_header_string(n);

    std::vector<float> row(kFieldCount);
    for (int64_t i = 0; i < n; ++i) {
        const Vec3 p = scene.position_at(i);
        const Vec3 c = scene.color_at(i);
        const Vec3 ls = scene.log_scale_at(i);
        const Quat q = scene.rotation_at(i);
        // Opacity is stored as a logit; clamp away from {0,1} so it stays finite.
        const double o = std::clamp(scene.opacity_at(i), 1e-7, 1.0 - 1e-7);
        row[0] = static_cast<float>(p[0]);
        row[1] = static_cast<float>(p[1]);
        row[2] = static_cast<float>(p[2]);
        row[3] = row[4] = row[5] = 0.0f;
        for (int k = 0; k < 3; ++k)
            row[static_cast<size_t>(6 + k)] = static_cast<float>((c[static_cast<size_t>(k)] - 0.5) / kShC0);
        row[9] = static_cast<float>(logit(o));
        for (int k = 0; k < 3; ++k) row[static_cast<size_t>(10 + k)] = static_cast<float>(ls[static_cast<size_t>(k)]);
        for (int k = 0; k < 4; ++k) row[static_cast<size_t>(13 + k)] = static_cast<float>(q[static_cast<size_t>(k)]);
        out.write(reinterpret_cast<const char*>(row.data()), sizeof(float) * kFieldCount);
    }
    if (!out) throw PlyFormatError("export_ply: write failed for " + path);
}

GaussianScene import_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PlyFormatError("import_ply: cannot open " + path);

    std::string line;
    if (!std::getline(in, line) || line != "ply") throw PlyFormatError("import_ply: not a PLY file");
    if (!std::getline(in, line) || line != "format binary_little_endian 1.0")
        throw PlyFormatError("import_ply: unsupported PLY format: " + line);

    int64_t n = -1;
    std::vector<std::string> props;
    while (std::getline(in, line)) {
        if (line == "end_header") break;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "comment") continue;
        if (word == "element") {
            std::string name;
            ls >> name >> n;
            if (name != "vertex") throw PlyFormatError("import_ply: unexpected element " + name);
        } else if (word == "property") {
            std::string type, name;
            ls >> type >> name;
            if (type != "float") throw PlyFormatError("import_ply: unsupported property type " + type);
            props.push_back(name);
        }
    }
    if (n < 0) throw PlyFormatError("import_ply: missing vertex element");

    std::map<std::string, int> index;
    for (size_t i = 0; i < props.size(); ++i) index[props[i]] = static_cast<int>(i);
    for (const char* f : kFields) {
        if (std::string(f) == "nx" || std::string(f) == "ny" || std::string(f) == "nz") continue;
        if (!index.count(f)) throw PlyFormatError(std::string("import_ply: missing field ") + f);
    }

    const size_t stride = props.size();
    std::vector<float> row(stride);
    GaussianScene scene(n);
    auto get = [&](const char* name) { return static_cast<double>(row[static_cast<size_t>(index.at(name))]); };
    for (int64_t i = 0; i < n; ++i) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(sizeof(float) * stride));
        if (!in) throw PlyFormatError("import_ply: truncated vertex data");
        for (float v : row)
            if (!std::isfinite(v)) throw PlyValidationError("import_ply: non-finite value in vertex data");
        const Vec3 pos = {get("x"), get("y"), get("z")};
        const Vec3 color = {get("f_dc_0") * kShC0 + 0.5, get("f_dc_1") * kShC0 + 0.5,
                            get("f_dc_2") * kShC0 + 0.5};
        const Vec3 log_scale = {get("scale_0"), get("scale_1"), get("scale_2")};
        const Quat rot = {get("rot_0"), get("rot_1"), get("rot_2"), get("rot_3")};
        scene.set_primitive(i, pos, rot, log_scale, color, sigmoid(get("opacity")));
    }
    return scene;
}

}  // namespace cgs
