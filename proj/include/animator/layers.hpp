#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "animator/autograd.hpp"

namespace animator::nn {

enum class Init { Zero, Normal, Ones };

// Owns named parameters, organised in groups ("blocks.0.face_attn", ...).
// Parameter addresses are stable for the lifetime of the store.
class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;
    ParamStore(ParamStore&&) = default;
    ParamStore& operator=(ParamStore&&) = default;

    // Normal init uses std = gain / sqrt(rows) (rows = fan-in for weights).
    Parameter& add(const std::string& group, const std::string& name, Eigen::Index rows, Eigen::Index cols,
                   Init init = Init::Normal, double gain = 1.0);

    Parameter& get(const std::string& full_name);
    const Parameter& get(const std::string& full_name) const;
    bool contains(const std::string& full_name) const { return params_.count(full_name) != 0; }

    std::vector<std::string> groups() const;
    std::vector<Parameter*> group(const std::string& name);
    std::vector<const Parameter*> group(const std::string& name) const;
    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;
    std::size_t numel() const;

    void set_trainable(const std::function<bool(const std::string& group)>& pred);
    void zero_grad();

    // FNV-1a over the float32 image of every parameter in the group.
    std::uint64_t group_hash(const std::string& group) const;

    // Fresh random values for every parameter, ignoring zero-init (gradient checks).
    void randomize(std::uint64_t seed, double std = 0.3);

    // One tensor container per group plus a manifest describing member shapes.
    void save(const std::filesystem::path& dir, const nlohmann::json& extra = {}) const;
    // Loads every group present on disk; groups in `required` must exist.
    nlohmann::json load(const std::filesystem::path& dir, const std::vector<std::string>& required = {});

    static std::string group_of(const std::string& full_name);

private:
    std::mt19937_64 rng_;
    std::map<std::string, Parameter> params_;
    std::vector<std::string> order_;
};

struct Linear {
    Parameter* weight = nullptr;  // in x out
    Parameter* bias = nullptr;    // 1 x out

    static Linear create(ParamStore& store, const std::string& group, const std::string& name, Eigen::Index in,
                         Eigen::Index out, bool zero = false, double gain = 1.0);
    Var operator()(const Var& x) const;
};

// 2D convolution over a batch of (height*width) x C grids via im2col.
struct Conv2d {
    Linear proj;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t pad = 1;

    static Conv2d create(ParamStore& store, const std::string& group, const std::string& name, Eigen::Index in,
                         Eigen::Index out, std::size_t kernel, std::size_t stride, std::size_t pad, bool zero = false,
                         double gain = 1.0);
    std::size_t out_size(std::size_t in) const { return (in + 2 * pad - kernel) / stride + 1; }
    Var operator()(const Var& x, std::size_t height, std::size_t width, std::size_t batch) const;
};

struct AdamWConfig {
    double lr = 5e-6;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled-weight-decay Adam. Only trainable parameters are touched; updated
// values are rounded to float32 so checkpoints round-trip exactly.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}
    void step(ParamStore& store);
    void set_lr(double lr) { cfg_.lr = lr; }
    const AdamWConfig& config() const { return cfg_; }
    long steps() const { return t_; }

private:
    struct Slot {
        Mat m;
        Mat v;
    };
    AdamWConfig cfg_;
    std::map<std::string, Slot> slots_;
    long t_ = 0;
};

// Round every entry to the nearest float32.
void round_to_float(Mat& m);

// Fixed sinusoidal features [sin(x*f_k), cos(x*f_k)] with geometric frequencies.
Mat sinusoid(double x, Eigen::Index width, double max_period = 10000.0);

}  // namespace animator::nn
