#include "nucleo/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_map>

namespace nucleo {

namespace {

constexpr char kMagic[6] = {'N', 'U', 'C', 'V', '1', '\0'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    out.append(buf, 4);  // little-endian host assumed; asserted at startup below
}

struct Reader {
    const std::string& s;
    std::size_t pos = 0;
    explicit Reader(const std::string& s_) : s(s_) {}
    void need(std::size_t n) const {
        if (pos + n > s.size()) throw CheckpointError("checkpoint truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(s[pos++]);
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string r = s.substr(pos, n);
        pos += n;
        return r;
    }
};

struct Entry {
    std::string name;
    Shape shape;
};

static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes LE host");

}  // namespace

void save_checkpoint(const Registry& reg, const std::string& path) {
    std::string manifest(kMagic, 6);
    std::string payload;

    std::vector<std::pair<std::string, const std::vector<double>*>> entries;
    std::vector<Shape> shapes;
    for (const auto& [name, t] : reg.params()) {
        entries.emplace_back(name, &t.data());
        shapes.push_back(t.shape());
    }
    for (const auto& b : reg.buffers()) {
        entries.emplace_back(b.name, b.data);
        shapes.push_back(Shape{b.data->size()});
    }

    put_u32(manifest, static_cast<std::uint32_t>(entries.size()));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        put_u32(manifest, static_cast<std::uint32_t>(entries[i].first.size()));
        manifest += entries[i].first;
        manifest.push_back(0);  // dtype code: f32
        manifest.push_back(static_cast<char>(shapes[i].size()));
        for (auto e : shapes[i]) put_u32(manifest, static_cast<std::uint32_t>(e));
        for (double v : *entries[i].second) put_f32(payload, static_cast<float>(v));
    }

    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
              static_cast<uInt>(payload.size())));
    std::string tail;
    put_u32(tail, crc);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open checkpoint for writing: " + path);
    f << manifest << payload << tail;
    if (!f) throw CheckpointError("checkpoint write failed: " + path);
}

void load_checkpoint(Registry& reg, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint: " + path);
    std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r(blob);
    if (r.bytes(6) != std::string(kMagic, 6))
        throw CheckpointError("bad checkpoint magic in " + path);

    const std::uint32_t count = r.u32();
    std::vector<Entry> entries(count);
    std::size_t payload_elems = 0;
    for (auto& e : entries) {
        e.name = r.bytes(r.u32());
        if (r.u8() != 0) throw CheckpointError("unsupported dtype code for " + e.name);
        const std::uint8_t rank = r.u8();
        for (int i = 0; i < rank; ++i) e.shape.push_back(r.u32());
        payload_elems += shape_numel(e.shape);
    }

    const std::size_t payload_off = r.pos;
    r.need(payload_elems * 4 + 4);
    const auto crc_stored = [&] {
        Reader t(blob);
        t.pos = payload_off + payload_elems * 4;
        return t.u32();
    }();
    const auto crc_actual = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(blob.data() + payload_off),
              static_cast<uInt>(payload_elems * 4)));
    if (crc_stored != crc_actual)
        throw CheckpointError("checkpoint CRC mismatch in " + path + " (corrupted payload)");

    std::unordered_map<std::string, std::pair<Shape, std::vector<float>>> loaded;
    std::size_t off = payload_off;
    for (const auto& e : entries) {
        const std::size_t n = shape_numel(e.shape);
        std::vector<float> vals(n);
        std::memcpy(vals.data(), blob.data() + off, n * 4);
        off += n * 4;
        loaded.emplace(e.name, std::make_pair(e.shape, std::move(vals)));
    }

    for (auto& [name, t] : reg.params()) {
        auto it = loaded.find(name);
        if (it == loaded.end()) throw CheckpointError("checkpoint missing parameter " + name);
        if (it->second.first != t.shape())
            throw CheckpointError("checkpoint shape mismatch for " + name + ": file has " +
                                  shape_str(it->second.first) + ", model has " +
                                  shape_str(t.shape()));
        auto& dst = const_cast<Tensor&>(t).data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = it->second.second[i];
    }
    for (const auto& b : reg.buffers()) {
        auto it = loaded.find(b.name);
        if (it == loaded.end()) throw CheckpointError("checkpoint missing buffer " + b.name);
        if (shape_numel(it->second.first) != b.data->size())
            throw CheckpointError("checkpoint length mismatch for buffer " + b.name);
        for (std::size_t i = 0; i < b.data->size(); ++i) (*b.data)[i] = it->second.second[i];
        if (b.live) *b.live = true;
    }
}

}  // namespace nucleo
