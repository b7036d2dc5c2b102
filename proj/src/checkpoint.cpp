#include "mdiff/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mdiff {

namespace {

void put_u32(std::string& buf, uint32_t v) {
    buf.push_back(char(v & 0xff));
    buf.push_back(char((v >> 8) & 0xff));
    buf.push_back(char((v >> 16) & 0xff));
    buf.push_back(char((v >> 24) & 0xff));
}

struct Reader {
    const std::string& buf;
    size_t off = 0;

    void need(size_t n, const char* what) const {
        if (off + n > buf.size()) {
            throw std::runtime_error(std::string("truncated checkpoint reading ") + what +
                                     " at offset " + std::to_string(off));
        }
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | uint8_t(buf[off + size_t(i)]);
        off += 4;
        return v;
    }
    std::string bytes(size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(off, n);
        off += n;
        return s;
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::string buf;
    buf += "MD4S";
    put_u32(buf, ckpt.version);
    put_u32(buf, uint32_t(ckpt.config_text.size()));
    buf += ckpt.config_text;

    std::vector<std::pair<std::string, const Tensor<float>*>> all;
    for (const auto& [name, t] : ckpt.tensors) all.emplace_back(name, &t);
    Tensor<float> step_t({1});
    step_t.v[0] = float(ckpt.step);
    all.emplace_back("__step", &step_t);

    put_u32(buf, uint32_t(all.size()));
    for (const auto& [name, t] : all) {
        put_u32(buf, uint32_t(name.size()));
        buf += name;
        put_u32(buf, uint32_t(t->shape.size()));
        for (int d : t->shape) put_u32(buf, uint32_t(d));
        for (float x : t->v) {
            uint32_t bits;
            std::memcpy(&bits, &x, 4);
            put_u32(buf, bits);
        }
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(buf.data(), std::streamsize(buf.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r{buf};

    const std::string magic = r.bytes(4, "magic");
    if (magic != "MD4S") throw std::runtime_error("bad magic at offset 0");
    const uint32_t version = r.u32("version");
    if (version != kCheckpointVersion) {
        throw std::runtime_error("unsupported version " + std::to_string(version) +
                                 " at offset 4");
    }

    Checkpoint ckpt;
    ckpt.version = version;
    const uint32_t cfg_len = r.u32("config length");
    ckpt.config_text = r.bytes(cfg_len, "config text");

    const uint32_t count = r.u32("tensor count");
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = r.u32("tensor name length");
        const std::string name = r.bytes(name_len, "tensor name");
        const uint32_t rank = r.u32("tensor rank");
        std::vector<int> shape;
        int64_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            shape.push_back(int(r.u32("tensor dim")));
            numel *= shape.back();
        }
        Tensor<float> t(shape);
        for (int64_t j = 0; j < numel; ++j) {
            const uint32_t bits = r.u32("tensor data");
            std::memcpy(&t.v[size_t(j)], &bits, 4);
        }
        if (name == "__step") {
            ckpt.step = int64_t(t.v.at(0));
        } else {
            ckpt.tensors.emplace_back(name, std::move(t));
        }
    }
    if (r.off != buf.size()) {
        throw std::runtime_error("trailing bytes at offset " + std::to_string(r.off));
    }
    return ckpt;
}

Checkpoint checkpoint_from_params(const Params<float>& params, const std::string& config_text,
                                  int64_t step) {
    Checkpoint ckpt;
    ckpt.config_text = config_text;
    ckpt.step = step;
    params.for_each([&ckpt](const std::string& name, const Tensor<float>& t) {
        ckpt.tensors.emplace_back(name, t);
    });
    return ckpt;
}

Params<float> params_from_checkpoint(const Checkpoint& ckpt, const ModelConfig& cfg) {
    Params<float> params = init_params<float>(cfg, 0);
    size_t used = 0;
    params.for_each([&](const std::string& name, Tensor<float>& t) {
        for (const auto& [n, src] : ckpt.tensors) {
            if (n != name) continue;
            if (src.shape != t.shape) {
                throw std::runtime_error("checkpoint tensor " + name + " has wrong shape");
            }
            t = src;
            ++used;
            return;
        }
        throw std::runtime_error("checkpoint is missing tensor " + name);
    });
    if (used != ckpt.tensors.size()) {
        throw std::runtime_error("checkpoint has unexpected extra tensors");
    }
    return params;
}

}  // namespace mdiff
