#include "flowrecon/io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace flowrecon {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("unexpected end of file reading a u32");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_tensor_stream(std::ostream& os, const Tensor& t) {
    os.write("FRT1", 4);
    unsigned char dt = static_cast<unsigned char>(t.dtype());
    unsigned char rk = static_cast<unsigned char>(t.rank());
    os.write(reinterpret_cast<const char*>(&dt), 1);
    os.write(reinterpret_cast<const char*>(&rk), 1);
    for (int64_t i = 0; i < t.rank(); ++i) put_u32(os, static_cast<uint32_t>(t.extent(i)));
    if (t.dtype() == Dtype::Float32) {
        for (int64_t i = 0; i < t.numel(); ++i) {
            float f = static_cast<float>(t[i]);
            os.write(reinterpret_cast<const char*>(&f), sizeof(float));
        }
    } else {
        for (int64_t i = 0; i < t.numel(); ++i) {
            double d = t[i];
            os.write(reinterpret_cast<const char*>(&d), sizeof(double));
        }
    }
}

Tensor read_tensor_stream(std::istream& is, const std::string& what) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "FRT1", 4) != 0)
        throw IoError(what + ": missing FRT1 magic bytes");
    unsigned char dt = 0, rk = 0;
    is.read(reinterpret_cast<char*>(&dt), 1);
    is.read(reinterpret_cast<char*>(&rk), 1);
    if (!is) throw IoError(what + ": truncated FRT1 header");
    if (dt > 1) throw IoError(what + ": unknown dtype code " + std::to_string(dt));
    Shape shape;
    for (int i = 0; i < rk; ++i) shape.push_back(static_cast<int64_t>(get_u32(is)));
    Dtype dtype = static_cast<Dtype>(dt);
    Tensor t(shape, dtype);
    if (dtype == Dtype::Float32) {
        for (int64_t i = 0; i < t.numel(); ++i) {
            float f;
            is.read(reinterpret_cast<char*>(&f), sizeof(float));
            t[i] = static_cast<double>(f);
        }
    } else {
        for (int64_t i = 0; i < t.numel(); ++i) {
            double d;
            is.read(reinterpret_cast<char*>(&d), sizeof(double));
            t[i] = d;
        }
    }
    if (!is) throw IoError(what + ": truncated FRT1 payload");
    return t;
}

}  // namespace

void write_tensor(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    write_tensor_stream(os, t);
    if (!os) throw IoError("write failed for '" + path + "'");
}

Tensor read_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "' for reading");
    return read_tensor_stream(is, path);
}

const std::string* Checkpoint::find_meta(const std::string& key) const {
    for (const auto& [k, v] : meta)
        if (k == key) return &v;
    return nullptr;
}

void Checkpoint::set_meta(const std::string& key, const std::string& value) {
    for (auto& [k, v] : meta)
        if (k == key) {
            v = value;
            return;
        }
    meta.emplace_back(key, value);
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os.write("FRA1", 4);
    put_u32(os, static_cast<uint32_t>(ck.meta.size()));
    for (const auto& [k, v] : ck.meta) {
        put_u32(os, static_cast<uint32_t>(k.size()));
        os.write(k.data(), static_cast<std::streamsize>(k.size()));
        put_u32(os, static_cast<uint32_t>(v.size()));
        os.write(v.data(), static_cast<std::streamsize>(v.size()));
    }
    put_u32(os, static_cast<uint32_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) {
        put_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_tensor_stream(os, t);
    }
    if (!os) throw IoError("write failed for '" + path + "'");

    std::ostringstream man;
    for (const auto& [k, v] : ck.meta) man << k << " = " << v << "\n";
    for (const auto& [name, t] : ck.tensors)
        man << name << " " << shape_str(t.shape()) << " " << dtype_name(t.dtype()) << "\n";
    write_text(path + ".txt", man.str());
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "' for reading");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "FRA1", 4) != 0)
        throw IoError(path + ": missing FRA1 magic bytes");
    Checkpoint ck;
    uint32_t n_meta = get_u32(is);
    auto read_str = [&is, &path]() {
        uint32_t len = get_u32(is);
        std::string s(len, '\0');
        is.read(s.data(), len);
        if (!is) throw IoError(path + ": truncated string");
        return s;
    };
    for (uint32_t i = 0; i < n_meta; ++i) {
        std::string k = read_str();
        std::string v = read_str();
        ck.meta.emplace_back(std::move(k), std::move(v));
    }
    uint32_t n_tensors = get_u32(is);
    for (uint32_t i = 0; i < n_tensors; ++i) {
        std::string name = read_str();
        ck.tensors.emplace(std::move(name), read_tensor_stream(is, path));
    }
    return ck;
}

void store_params(Checkpoint& ck, const ParameterStore& params, bool with_optimizer_state) {
    for (const auto& [name, slot] : params) {
        ck.tensors["param/" + name] = slot.value;
        if (with_optimizer_state) {
            ck.tensors["opt.m1/" + name] = slot.m1;
            ck.tensors["opt.m2/" + name] = slot.m2;
        }
    }
    if (with_optimizer_state)
        ck.set_meta("adam.step", std::to_string(params.adam_timestep()));
}

void restore_params(const Checkpoint& ck, ParameterStore& params) {
    for (const auto& [key, t] : ck.tensors) {
        if (key.rfind("param/", 0) != 0) continue;
        std::string name = key.substr(6);
        if (params.has(name)) {
            ParamSlot& slot = params.at(name);
            if (slot.value.shape() != t.shape())
                throw IoError("checkpoint parameter '" + name + "' has shape " +
                              shape_str(t.shape()) + ", expected " +
                              shape_str(slot.value.shape()));
            slot.value = t;
        } else {
            params.create(name, t);
        }
        auto m1 = ck.tensors.find("opt.m1/" + name);
        auto m2 = ck.tensors.find("opt.m2/" + name);
        if (m1 != ck.tensors.end()) params.at(name).m1 = m1->second;
        if (m2 != ck.tensors.end()) params.at(name).m2 = m2->second;
    }
    if (const std::string* s = ck.find_meta("adam.step"))
        params.set_adam_timestep(std::stoll(*s));
}

void write_pgm(const std::string& path, const Tensor& image) {
    int64_t h, w;
    if (image.rank() == 2) {
        h = image.extent(0);
        w = image.extent(1);
    } else if (image.rank() == 3 && image.extent(0) == 1) {
        h = image.extent(1);
        w = image.extent(2);
    } else {
        throw ShapeError("write_pgm: expected (h,w) or (1,h,w), got " + shape_str(image.shape()));
    }
    double lo = image.min(), hi = image.max();
    double span = hi - lo;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "P5\n" << w << " " << h << "\n255\n";
    for (int64_t i = 0; i < h * w; ++i) {
        double v = span > 0.0 ? (image[i] - lo) / span : 0.0;
        unsigned char b = static_cast<unsigned char>(std::lround(255.0 * v));
        os.write(reinterpret_cast<const char*>(&b), 1);
    }
    if (!os) throw IoError("write failed for '" + path + "'");
    std::ostringstream side;
    side << "min = " << format_double(lo) << "\nmax = " << format_double(hi)
         << "\nscale = value*(max-min)/255+min\n";
    write_text(path + ".txt", side.str());
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw IoError("write failed for '" + path + "'");
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::ostringstream os;
    for (size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << "\n";
    for (const auto& row : rows) {
        if (row.size() != header.size())
            throw IoError("csv row has " + std::to_string(row.size()) + " fields, header has " +
                          std::to_string(header.size()));
        for (size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
        os << "\n";
    }
    write_text(path, os.str());
}

std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace flowrecon
