#include "difftts/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace difftts {

using nlohmann::json;

namespace {
constexpr char kMagic[4] = {'D', 'T', 'C', 'K'};
}

void Checkpoint::capture(const nn::ParamRegistry& reg) {
    params.clear();
    buffers.clear();
    for (const auto& [name, p] : reg.params) params.push_back({name, p->shape, p->val});
    for (const auto& [name, b] : reg.buffers) buffers.push_back({name, b->shape, b->val});
}

void Checkpoint::restore(nn::ParamRegistry& reg) const {
    auto apply = [](const std::vector<NamedTensor>& src,
                    const std::vector<std::pair<std::string, Var>>& dst, const char* kind) {
        for (const auto& [name, v] : dst) {
            const NamedTensor* found = nullptr;
            for (const auto& t : src)
                if (t.name == name) {
                    found = &t;
                    break;
                }
            if (!found)
                throw std::runtime_error(std::string("checkpoint restore: missing ") + kind +
                                         " '" + name + "'");
            if (found->shape != v->shape)
                throw std::runtime_error(std::string("checkpoint restore: shape mismatch for '") +
                                         name + "'");
            v->val = found->values;
        }
    };
    if (params.size() != reg.params.size())
        throw std::runtime_error("checkpoint restore: parameter count mismatch");
    apply(params, reg.params, "parameter");
    apply(buffers, reg.buffers, "buffer");
}

namespace {

json tensor_dir_entry(const Checkpoint::NamedTensor& t, uint64_t& offset) {
    json e;
    e["name"] = t.name;
    e["shape"] = t.shape;
    e["offset"] = offset;
    e["count"] = t.values.size();
    offset += t.values.size();
    return e;
}

void read_tensor_list(const json& dir, const std::vector<double>& blob,
                      std::vector<Checkpoint::NamedTensor>& out) {
    for (const auto& e : dir) {
        Checkpoint::NamedTensor t;
        t.name = e.at("name").get<std::string>();
        t.shape = e.at("shape").get<std::vector<int>>();
        uint64_t off = e.at("offset").get<uint64_t>();
        uint64_t cnt = e.at("count").get<uint64_t>();
        if (off + cnt > blob.size()) throw std::runtime_error("checkpoint: blob overrun");
        t.values.assign(blob.begin() + static_cast<long>(off),
                        blob.begin() + static_cast<long>(off + cnt));
        out.push_back(std::move(t));
    }
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    json manifest;
    manifest["module_kind"] = ck.module_kind;
    manifest["config"] = ck.config;
    manifest["has_schedule"] = ck.has_schedule;
    if (ck.has_schedule)
        manifest["schedule"] = {{"kind", ck.schedule.kind},
                                {"beta_min", ck.schedule.beta_min},
                                {"beta_max", ck.schedule.beta_max},
                                {"T", ck.schedule.T}};
    manifest["rng_state"] = ck.rng_state;
    manifest["step"] = ck.step;
    manifest["opt_t"] = ck.opt.t;

    uint64_t offset = 0;
    json pdir = json::array(), bdir = json::array(), mdir = json::array(), vdir = json::array();
    for (const auto& t : ck.params) pdir.push_back(tensor_dir_entry(t, offset));
    for (const auto& t : ck.buffers) bdir.push_back(tensor_dir_entry(t, offset));
    for (const auto& [name, m] : ck.opt.m) {
        Checkpoint::NamedTensor t{name, {static_cast<int>(m.size())}, m};
        mdir.push_back(tensor_dir_entry(t, offset));
    }
    for (const auto& [name, v] : ck.opt.v) {
        Checkpoint::NamedTensor t{name, {static_cast<int>(v.size())}, v};
        vdir.push_back(tensor_dir_entry(t, offset));
    }
    manifest["params"] = pdir;
    manifest["buffers"] = bdir;
    manifest["opt_m"] = mdir;
    manifest["opt_v"] = vdir;

    std::string mstr = manifest.dump();

    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("save_checkpoint: cannot open " + tmp.string());
        os.write(kMagic, 4);
        uint32_t version = kCheckpointFormatVersion;
        os.write(reinterpret_cast<const char*>(&version), 4);
        uint64_t mlen = mstr.size();
        os.write(reinterpret_cast<const char*>(&mlen), 8);
        os.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
        uint64_t blob_count = offset;
        os.write(reinterpret_cast<const char*>(&blob_count), 8);
        auto dump = [&os](const std::vector<double>& v) {
            os.write(reinterpret_cast<const char*>(v.data()),
                     static_cast<std::streamsize>(v.size() * 8));
        };
        for (const auto& t : ck.params) dump(t.values);
        for (const auto& t : ck.buffers) dump(t.values);
        for (const auto& [n, m] : ck.opt.m) dump(m);
        for (const auto& [n, v] : ck.opt.v) dump(v);
        if (!os) throw std::runtime_error("save_checkpoint: write failed " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path.string());
    uint32_t version = 0;
    is.read(reinterpret_cast<char*>(&version), 4);
    if (version != kCheckpointFormatVersion)
        throw std::runtime_error("load_checkpoint: unsupported format version " +
                                 std::to_string(version));
    uint64_t mlen = 0;
    is.read(reinterpret_cast<char*>(&mlen), 8);
    std::string mstr(mlen, '\0');
    is.read(mstr.data(), static_cast<std::streamsize>(mlen));
    if (!is) throw std::runtime_error("load_checkpoint: truncated manifest in " + path.string());
    json manifest = json::parse(mstr);

    uint64_t blob_count = 0;
    is.read(reinterpret_cast<char*>(&blob_count), 8);
    std::vector<double> blob(blob_count);
    is.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(blob_count * 8));
    if (!is) throw std::runtime_error("load_checkpoint: truncated blob in " + path.string());

    Checkpoint ck;
    ck.module_kind = manifest.at("module_kind").get<std::string>();
    ck.config = manifest.at("config");
    ck.has_schedule = manifest.at("has_schedule").get<bool>();
    if (ck.has_schedule) {
        const auto& s = manifest.at("schedule");
        ck.schedule.kind = s.at("kind").get<std::string>();
        ck.schedule.beta_min = s.at("beta_min").get<double>();
        ck.schedule.beta_max = s.at("beta_max").get<double>();
        ck.schedule.T = s.at("T").get<int>();
    }
    ck.rng_state = manifest.at("rng_state").get<std::string>();
    ck.step = manifest.at("step").get<int64_t>();
    ck.opt.t = manifest.at("opt_t").get<int64_t>();

    read_tensor_list(manifest.at("params"), blob, ck.params);
    read_tensor_list(manifest.at("buffers"), blob, ck.buffers);
    std::vector<Checkpoint::NamedTensor> m, v;
    read_tensor_list(manifest.at("opt_m"), blob, m);
    read_tensor_list(manifest.at("opt_v"), blob, v);
    for (auto& t : m) ck.opt.m.emplace_back(t.name, std::move(t.values));
    for (auto& t : v) ck.opt.v.emplace_back(t.name, std::move(t.values));
    return ck;
}

}  // namespace difftts
