#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "scprior/common.hpp"

namespace scprior {

static_assert(std::endian::native == std::endian::little,
              "container format is little-endian; big-endian hosts are unsupported");

// One binary container format backs every file the toolkit writes: body
// models (SCBM0001), datasets (SCDS0001) and checkpoints (SCCP0001).
//
// Layout: 8-byte magic, u32 array count, then per array
//   u32 name length, name bytes,
//   u8 dtype (0 = f64, 1 = i32, 2 = u8),
//   u32 ndim, u64 dims[ndim],
//   raw data.
class ArrayContainer {
public:
    enum class DType : std::uint8_t { F64 = 0, I32 = 1, U8 = 2 };

    struct Entry {
        std::string name;
        DType dtype = DType::F64;
        std::vector<std::uint64_t> dims;
        std::vector<double> f64;
        std::vector<std::int32_t> i32;
        std::vector<std::uint8_t> u8;

        std::uint64_t count() const {
            std::uint64_t n = 1;
            for (auto d : dims) n *= d;
            return n;
        }
    };

    explicit ArrayContainer(std::string magic = "SCBM0001") : magic_(std::move(magic)) {
        require(magic_.size() == 8, "container magic must be exactly 8 bytes");
    }

    const std::string& magic() const { return magic_; }

    void add_f64(const std::string& name, std::vector<std::uint64_t> dims, std::vector<double> data) {
        check_new(name, dims, data.size());
        Entry e;
        e.name = name;
        e.dtype = DType::F64;
        e.dims = std::move(dims);
        e.f64 = std::move(data);
        entries_.push_back(std::move(e));
    }

    void add_i32(const std::string& name, std::vector<std::uint64_t> dims, std::vector<std::int32_t> data) {
        check_new(name, dims, data.size());
        Entry e;
        e.name = name;
        e.dtype = DType::I32;
        e.dims = std::move(dims);
        e.i32 = std::move(data);
        entries_.push_back(std::move(e));
    }

    void add_u8(const std::string& name, std::vector<std::uint64_t> dims, std::vector<std::uint8_t> data) {
        check_new(name, dims, data.size());
        Entry e;
        e.name = name;
        e.dtype = DType::U8;
        e.dims = std::move(dims);
        e.u8 = std::move(data);
        entries_.push_back(std::move(e));
    }

    bool has(const std::string& name) const { return find(name) != nullptr; }

    const Entry& get(const std::string& name) const {
        const Entry* e = find(name);
        if (!e) throw parse_error("container is missing array '" + name + "'");
        return *e;
    }

    const std::vector<double>& get_f64(const std::string& name) const {
        const Entry& e = get(name);
        if (e.dtype != DType::F64) throw parse_error("array '" + name + "' is not float64");
        return e.f64;
    }

    const std::vector<std::int32_t>& get_i32(const std::string& name) const {
        const Entry& e = get(name);
        if (e.dtype != DType::I32) throw parse_error("array '" + name + "' is not int32");
        return e.i32;
    }

    const std::vector<std::uint8_t>& get_u8(const std::string& name) const {
        const Entry& e = get(name);
        if (e.dtype != DType::U8) throw parse_error("array '" + name + "' is not uint8");
        return e.u8;
    }

    const std::vector<Entry>& entries() const { return entries_; }

    std::vector<std::uint8_t> serialize() const {
        std::vector<std::uint8_t> out;
        auto put = [&out](const void* p, std::size_t n) {
            const auto* b = static_cast<const std::uint8_t*>(p);
            out.insert(out.end(), b, b + n);
        };
        put(magic_.data(), 8);
        const std::uint32_t count = static_cast<std::uint32_t>(entries_.size());
        put(&count, 4);
        for (const Entry& e : entries_) {
            const std::uint32_t nl = static_cast<std::uint32_t>(e.name.size());
            put(&nl, 4);
            put(e.name.data(), nl);
            const std::uint8_t dt = static_cast<std::uint8_t>(e.dtype);
            put(&dt, 1);
            const std::uint32_t nd = static_cast<std::uint32_t>(e.dims.size());
            put(&nd, 4);
            for (std::uint64_t d : e.dims) put(&d, 8);
            switch (e.dtype) {
                case DType::F64: put(e.f64.data(), e.f64.size() * 8); break;
                case DType::I32: put(e.i32.data(), e.i32.size() * 4); break;
                case DType::U8: put(e.u8.data(), e.u8.size()); break;
            }
        }
        return out;
    }

    // Atomic write: temp file in the same directory, then rename.
    void write(const std::string& path) const {
        const std::vector<std::uint8_t> bytes = serialize();
        const std::string tmp = path + ".tmp";
        {
            std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
            if (!f) throw error("cannot open '" + tmp + "' for writing");
            f.write(reinterpret_cast<const char*>(bytes.data()),
                    static_cast<std::streamsize>(bytes.size()));
            if (!f) throw error("short write to '" + tmp + "'");
        }
        std::filesystem::rename(tmp, path);
    }

    static ArrayContainer parse(const std::vector<std::uint8_t>& bytes, const std::string& source) {
        std::size_t off = 0;
        auto need = [&](std::size_t n, const char* what) {
            if (off + n > bytes.size())
                throw parse_error(source + ": truncated while reading " + what + " at byte offset " +
                                  std::to_string(off));
        };
        auto take = [&](void* dst, std::size_t n, const char* what) {
            need(n, what);
            std::memcpy(dst, bytes.data() + off, n);
            off += n;
        };

        char magic[9] = {0};
        take(magic, 8, "magic header");
        ArrayContainer c{std::string(magic, 8)};

        std::uint32_t count = 0;
        take(&count, 4, "array count");
        for (std::uint32_t i = 0; i < count; ++i) {
            Entry e;
            std::uint32_t nl = 0;
            take(&nl, 4, "array name length");
            if (nl > 4096)
                throw parse_error(source + ": implausible name length " + std::to_string(nl) +
                                  " at byte offset " + std::to_string(off - 4));
            e.name.resize(nl);
            take(e.name.data(), nl, "array name");
            std::uint8_t dt = 0;
            take(&dt, 1, ("dtype of '" + e.name + "'").c_str());
            if (dt > 2)
                throw parse_error(source + ": unknown dtype " + std::to_string(dt) + " for array '" +
                                  e.name + "' at byte offset " + std::to_string(off - 1));
            e.dtype = static_cast<DType>(dt);
            std::uint32_t nd = 0;
            take(&nd, 4, "ndim");
            if (nd > 8)
                throw parse_error(source + ": implausible ndim " + std::to_string(nd) + " for array '" +
                                  e.name + "'");
            e.dims.resize(nd);
            for (std::uint32_t d = 0; d < nd; ++d) take(&e.dims[d], 8, "dims");
            const std::uint64_t n = e.count();
            switch (e.dtype) {
                case DType::F64:
                    e.f64.resize(n);
                    take(e.f64.data(), n * 8, ("data of '" + e.name + "'").c_str());
                    break;
                case DType::I32:
                    e.i32.resize(n);
                    take(e.i32.data(), n * 4, ("data of '" + e.name + "'").c_str());
                    break;
                case DType::U8:
                    e.u8.resize(n);
                    take(e.u8.data(), n, ("data of '" + e.name + "'").c_str());
                    break;
            }
            c.entries_.push_back(std::move(e));
        }
        return c;
    }

    static ArrayContainer read(const std::string& path, const std::string& expected_magic = "") {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw error("cannot open '" + path + "'");
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                        std::istreambuf_iterator<char>());
        ArrayContainer c = parse(bytes, path);
        if (!expected_magic.empty() && c.magic() != expected_magic)
            throw parse_error(path + ": magic mismatch, expected '" + expected_magic + "' got '" +
                              c.magic() + "'");
        return c;
    }

    std::uint64_t content_hash() const {
        const auto bytes = serialize();
        return fnv1a64(bytes.data(), bytes.size());
    }

private:
    const Entry* find(const std::string& name) const {
        for (const Entry& e : entries_)
            if (e.name == name) return &e;
        return nullptr;
    }

    void check_new(const std::string& name, const std::vector<std::uint64_t>& dims, std::size_t n) {
        require(!has(name), "duplicate array '" + name + "'");
        std::uint64_t prod = 1;
        for (auto d : dims) prod *= d;
        require(prod == n, "array '" + name + "': dims do not match data length");
    }

    std::string magic_;
    std::vector<Entry> entries_;
};

}  // namespace scprior
