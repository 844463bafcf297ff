#include "animator/layers.hpp"

#include <cmath>
#include <fstream>

#include "animator/error.hpp"
#include "animator/tensor_io.hpp"

namespace animator::nn {

void round_to_float(Mat& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
}

Parameter& ParamStore::add(const std::string& group, const std::string& name, Eigen::Index rows, Eigen::Index cols,
                           Init init, double gain) {
    const std::string full = group + "/" + name;
    if (params_.count(full)) throw Error("duplicate parameter " + full);
    Parameter p;
    p.name = full;
    switch (init) {
        case Init::Zero: p.value = Mat::Zero(rows, cols); break;
        case Init::Ones: p.value = Mat::Ones(rows, cols); break;
        case Init::Normal: {
            std::normal_distribution<double> dist(0.0, gain / std::sqrt(static_cast<double>(rows)));
            p.value.resize(rows, cols);
            for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = dist(rng_);
            break;
        }
    }
    round_to_float(p.value);
    p.zero_grad();
    order_.push_back(full);
    return params_.emplace(full, std::move(p)).first->second;
}

Parameter& ParamStore::get(const std::string& full_name) {
    auto it = params_.find(full_name);
    if (it == params_.end()) throw Error("unknown parameter " + full_name);
    return it->second;
}

const Parameter& ParamStore::get(const std::string& full_name) const {
    auto it = params_.find(full_name);
    if (it == params_.end()) throw Error("unknown parameter " + full_name);
    return it->second;
}

std::string ParamStore::group_of(const std::string& full_name) { return full_name.substr(0, full_name.find('/')); }

std::vector<std::string> ParamStore::groups() const {
    std::vector<std::string> out;
    for (const auto& n : order_) {
        auto g = group_of(n);
        if (out.empty() || out.back() != g) {
            if (std::find(out.begin(), out.end(), g) == out.end()) out.push_back(g);
        }
    }
    return out;
}

std::vector<Parameter*> ParamStore::group(const std::string& name) {
    std::vector<Parameter*> out;
    for (const auto& n : order_) {
        if (group_of(n) == name) out.push_back(&params_.at(n));
    }
    return out;
}

std::vector<const Parameter*> ParamStore::group(const std::string& name) const {
    std::vector<const Parameter*> out;
    for (const auto& n : order_) {
        if (group_of(n) == name) out.push_back(&params_.at(n));
    }
    return out;
}

std::vector<Parameter*> ParamStore::all() {
    std::vector<Parameter*> out;
    for (const auto& n : order_) out.push_back(&params_.at(n));
    return out;
}

std::vector<const Parameter*> ParamStore::all() const {
    std::vector<const Parameter*> out;
    for (const auto& n : order_) out.push_back(&params_.at(n));
    return out;
}

std::size_t ParamStore::numel() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
}

void ParamStore::set_trainable(const std::function<bool(const std::string&)>& pred) {
    for (auto& [name, p] : params_) p.trainable = pred(group_of(name));
}

void ParamStore::zero_grad() {
    for (auto& [_, p] : params_) p.zero_grad();
}

std::uint64_t ParamStore::group_hash(const std::string& group_name) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto* p : group(group_name)) {
        h = hash_bytes(std::as_bytes(std::span<const char>(p->name.data(), p->name.size())), h);
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            const float f = static_cast<float>(p->value.data()[i]);
            h = hash_bytes(std::as_bytes(std::span<const float>(&f, 1)), h);
        }
    }
    return h;
}

void ParamStore::randomize(std::uint64_t seed, double std) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, std);
    for (const auto& n : order_) {
        auto& v = params_.at(n).value;
        for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = dist(rng);
        round_to_float(v);
    }
}

void ParamStore::save(const std::filesystem::path& dir, const nlohmann::json& extra) const {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest = extra.is_object() ? extra : nlohmann::json::object();
    nlohmann::json groups_json = nlohmann::json::object();
    for (const auto& g : groups()) {
        std::vector<float> flat;
        nlohmann::json members = nlohmann::json::array();
        for (const auto* p : group(g)) {
            members.push_back({{"name", p->name}, {"shape", {p->value.rows(), p->value.cols()}}, {"offset", flat.size()}});
            for (Eigen::Index i = 0; i < p->value.size(); ++i) flat.push_back(static_cast<float>(p->value.data()[i]));
        }
        const std::string file = g + ".dat";
        const std::size_t n = flat.size();
        write_tensor(dir / file, Tensor({n}, std::move(flat)));
        groups_json[g] = {{"file", file}, {"members", members}};
    }
    manifest["groups"] = groups_json;
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << '\n';
    if (!out) throw Error("cannot write checkpoint manifest in " + dir.string());
}

nlohmann::json ParamStore::load(const std::filesystem::path& dir, const std::vector<std::string>& required) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw FormatError("checkpoint manifest missing in " + dir.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint manifest: ") + e.what());
    }
    const auto& groups_json = manifest.at("groups");
    for (const auto& g : required) {
        if (!groups_json.contains(g)) throw FormatError("checkpoint lacks parameter group " + g);
    }
    for (const auto& [g, desc] : groups_json.items()) {
        if (group(g).empty()) continue;  // group not part of this model
        const Tensor flat = read_tensor(dir / desc.at("file").get<std::string>());
        for (const auto& m : desc.at("members")) {
            const auto name = m.at("name").get<std::string>();
            if (!contains(name)) throw FormatError("checkpoint parameter " + name + " unknown to model");
            auto& p = get(name);
            const auto rows = m.at("shape")[0].get<Eigen::Index>();
            const auto cols = m.at("shape")[1].get<Eigen::Index>();
            if (rows != p.value.rows() || cols != p.value.cols()) throw FormatError("checkpoint shape mismatch for " + name);
            const auto off = m.at("offset").get<std::size_t>();
            if (off + static_cast<std::size_t>(rows * cols) > flat.numel()) throw FormatError("checkpoint group truncated: " + g);
            for (Eigen::Index i = 0; i < rows * cols; ++i) p.value.data()[i] = flat[off + static_cast<std::size_t>(i)];
        }
    }
    return manifest;
}

Linear Linear::create(ParamStore& store, const std::string& group, const std::string& name, Eigen::Index in,
                      Eigen::Index out, bool zero, double gain) {
    Linear l;
    l.weight = &store.add(group, name + ".weight", in, out, zero ? Init::Zero : Init::Normal, gain);
    l.bias = &store.add(group, name + ".bias", 1, out, Init::Zero);
    return l;
}

Var Linear::operator()(const Var& x) const { return add_row(matmul(x, param(*weight)), param(*bias)); }

Conv2d Conv2d::create(ParamStore& store, const std::string& group, const std::string& name, Eigen::Index in,
                      Eigen::Index out, std::size_t kernel, std::size_t stride, std::size_t pad, bool zero,
                      double gain) {
    Conv2d c;
    c.proj = Linear::create(store, group, name, static_cast<Eigen::Index>(kernel * kernel) * in, out, zero, gain);
    c.kernel = kernel;
    c.stride = stride;
    c.pad = pad;
    return c;
}

Var Conv2d::operator()(const Var& x, std::size_t height, std::size_t width, std::size_t batch) const {
    if (kernel == 1 && stride == 1 && pad == 0) return proj(x);
    return proj(im2col(x, height, width, kernel, stride, pad, batch));
}

void AdamW::step(ParamStore& store) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto* p : store.all()) {
        if (!p->trainable) continue;
        if (p->grad.size() != p->value.size()) p->zero_grad();
        auto& slot = slots_[p->name];
        if (slot.m.size() == 0) {
            slot.m = Mat::Zero(p->value.rows(), p->value.cols());
            slot.v = Mat::Zero(p->value.rows(), p->value.cols());
        }
        slot.m = cfg_.beta1 * slot.m + (1.0 - cfg_.beta1) * p->grad;
        slot.v = cfg_.beta2 * slot.v + (1.0 - cfg_.beta2) * p->grad.cwiseAbs2();
        p->value *= (1.0 - cfg_.lr * cfg_.weight_decay);
        p->value.array() -= cfg_.lr * (slot.m.array() / bc1) / ((slot.v.array() / bc2).sqrt() + cfg_.eps);
        round_to_float(p->value);
    }
}

Mat sinusoid(double x, Eigen::Index width, double max_period) {
    const Eigen::Index half = width / 2;
    Mat out = Mat::Zero(1, width);
    for (Eigen::Index i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(max_period) * static_cast<double>(i) / static_cast<double>(std::max<Eigen::Index>(half, 1)));
        out(0, i) = std::sin(x * freq);
        out(0, half + i) = std::cos(x * freq);
    }
    return out;
}

}  // namespace animator::nn
