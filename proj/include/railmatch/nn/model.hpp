#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "railmatch/nn/kernels.hpp"
#include "railmatch/nn/tensor.hpp"
#include "railmatch/rng.hpp"

namespace railmatch::nn {

inline bool& use_parallel_kernels() {
    static bool flag = true;
    return flag;
}

template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                    std::size_t stride, std::size_t pad, Tensor<T>& y) {
    if (use_parallel_kernels())
        conv2d_forward_omp(x, w, b, stride, pad, y);
    else
        conv2d_forward_serial(x, w, b, stride, pad, y);
}

template <typename T>
struct Param {
    Tensor<T> value, grad, m, v;

    void init_shape(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        value = Tensor<T>(n, c, h, w);
        grad = zeros_like(value);
        m = zeros_like(value);
        v = zeros_like(value);
    }
};

template <typename T>
class Layer {
  public:
    virtual ~Layer() = default;
    virtual Tensor<T> forward(const Tensor<T>& x, bool training) = 0;
    virtual Tensor<T> backward(const Tensor<T>& dy) = 0;
    virtual void collect_params(std::vector<Param<T>*>& out) {}
    virtual void collect_buffers(std::vector<std::vector<T>*>& out) {}
};

template <typename T>
class Conv2d : public Layer<T> {
  public:
    Conv2d(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride, std::size_t pad,
           Rng& rng)
        : stride_(stride), pad_(pad) {
        w_.init_shape(cout, cin, k, k);
        b_.init_shape(1, cout, 1, 1);
        const T scale = static_cast<T>(std::sqrt(2.0 / static_cast<double>(cin * k * k)));
        for (auto& v : w_.value.data) v = static_cast<T>(rng.normal(0.0, 1.0)) * scale;
    }

    Tensor<T> forward(const Tensor<T>& x, bool) override {
        x_ = x;
        Tensor<T> y;
        conv2d_forward(x, w_.value, b_.value, stride_, pad_, y);
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) override {
        Tensor<T> dx;
        conv2d_backward(x_, w_.value, dy, stride_, pad_, dx, w_.grad, b_.grad);
        return dx;
    }

    void collect_params(std::vector<Param<T>*>& out) override {
        out.push_back(&w_);
        out.push_back(&b_);
    }

  private:
    std::size_t stride_, pad_;
    Param<T> w_, b_;
    Tensor<T> x_;
};

template <typename T>
class BatchNorm2d : public Layer<T> {
  public:
    explicit BatchNorm2d(std::size_t c) : running_mean_(c, T(0)), running_var_(c, T(1)) {
        gamma_.init_shape(1, c, 1, 1);
        beta_.init_shape(1, c, 1, 1);
        gamma_.value.fill(T(1));
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) override {
        Tensor<T> y;
        batchnorm_forward(x, gamma_.value, beta_.value, static_cast<T>(1e-5), training,
                          running_mean_, running_var_, static_cast<T>(0.1), y, &cache_);
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) override {
        Tensor<T> dx;
        batchnorm_backward(dy, gamma_.value, cache_, dx, gamma_.grad, beta_.grad);
        return dx;
    }

    void collect_params(std::vector<Param<T>*>& out) override {
        out.push_back(&gamma_);
        out.push_back(&beta_);
    }
    void collect_buffers(std::vector<std::vector<T>*>& out) override {
        out.push_back(&running_mean_);
        out.push_back(&running_var_);
    }

  private:
    Param<T> gamma_, beta_;
    std::vector<T> running_mean_, running_var_;
    BatchNormCache<T> cache_;
};

template <typename T>
class ReLU : public Layer<T> {
  public:
    Tensor<T> forward(const Tensor<T>& x, bool) override {
        x_ = x;
        Tensor<T> y;
        relu_forward(x, y);
        return y;
    }
    Tensor<T> backward(const Tensor<T>& dy) override {
        Tensor<T> dx;
        relu_backward(x_, dy, dx);
        return dx;
    }

  private:
    Tensor<T> x_;
};

template <typename T>
class GlobalAvgPool : public Layer<T> {
  public:
    Tensor<T> forward(const Tensor<T>& x, bool) override {
        x_ = x;
        Tensor<T> y;
        gap_forward(x, y);
        return y;
    }
    Tensor<T> backward(const Tensor<T>& dy) override {
        Tensor<T> dx;
        gap_backward(x_, dy, dx);
        return dx;
    }

  private:
    Tensor<T> x_;
};

template <typename T>
class Linear : public Layer<T> {
  public:
    Linear(std::size_t fin, std::size_t fout, Rng& rng) {
        w_.init_shape(fout, fin, 1, 1);
        b_.init_shape(1, fout, 1, 1);
        const T scale = static_cast<T>(std::sqrt(2.0 / static_cast<double>(fin)));
        for (auto& v : w_.value.data) v = static_cast<T>(rng.normal(0.0, 1.0)) * scale;
    }

    Tensor<T> forward(const Tensor<T>& x, bool) override {
        x_ = x;
        Tensor<T> y;
        linear_forward(x, w_.value, b_.value, y);
        return y;
    }
    Tensor<T> backward(const Tensor<T>& dy) override {
        Tensor<T> dx;
        linear_backward(x_, w_.value, dy, dx, w_.grad, b_.grad);
        return dx;
    }
    void collect_params(std::vector<Param<T>*>& out) override {
        out.push_back(&w_);
        out.push_back(&b_);
    }

  private:
    Param<T> w_, b_;
    Tensor<T> x_;
};

// Two 3x3 conv+bn sub-paths with an identity (or projected) skip.
template <typename T>
class ResBlock : public Layer<T> {
  public:
    ResBlock(std::size_t cin, std::size_t cout, std::size_t stride, Rng& rng)
        : conv1_(cin, cout, 3, stride, 1, rng),
          bn1_(cout),
          conv2_(cout, cout, 3, 1, 1, rng),
          bn2_(cout) {
        if (stride != 1 || cin != cout) {
            proj_ = std::make_unique<Conv2d<T>>(cin, cout, 1, stride, 0, rng);
            proj_bn_ = std::make_unique<BatchNorm2d<T>>(cout);
        }
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) override {
        Tensor<T> h = bn1_.forward(conv1_.forward(x, training), training);
        h = relu1_.forward(h, training);
        h = bn2_.forward(conv2_.forward(h, training), training);
        Tensor<T> skip = proj_ ? proj_bn_->forward(proj_->forward(x, training), training) : x;
        for (std::size_t i = 0; i < h.size(); ++i) h.data[i] += skip.data[i];
        return relu_out_.forward(h, training);
    }

    Tensor<T> backward(const Tensor<T>& dy) override {
        Tensor<T> d = relu_out_.backward(dy);
        Tensor<T> dskip = proj_ ? proj_->backward(proj_bn_->backward(d)) : d;
        Tensor<T> dmain = conv1_.backward(bn1_.backward(
            relu1_.backward(conv2_.backward(bn2_.backward(d)))));
        for (std::size_t i = 0; i < dmain.size(); ++i) dmain.data[i] += dskip.data[i];
        return dmain;
    }

    void collect_params(std::vector<Param<T>*>& out) override {
        conv1_.collect_params(out);
        bn1_.collect_params(out);
        conv2_.collect_params(out);
        bn2_.collect_params(out);
        if (proj_) {
            proj_->collect_params(out);
            proj_bn_->collect_params(out);
        }
    }
    void collect_buffers(std::vector<std::vector<T>*>& out) override {
        bn1_.collect_buffers(out);
        bn2_.collect_buffers(out);
        if (proj_bn_) proj_bn_->collect_buffers(out);
    }

  private:
    Conv2d<T> conv1_;
    BatchNorm2d<T> bn1_;
    Conv2d<T> conv2_;
    BatchNorm2d<T> bn2_;
    ReLU<T> relu1_, relu_out_;
    std::unique_ptr<Conv2d<T>> proj_;
    std::unique_ptr<BatchNorm2d<T>> proj_bn_;
};

enum class BackbonePreset { Tiny, Small, Resnet18Like };

inline BackbonePreset backbone_preset_from_string(const std::string& s) {
    if (s == "tiny") return BackbonePreset::Tiny;
    if (s == "small") return BackbonePreset::Small;
    if (s == "resnet18-like" || s == "resnet18_like") return BackbonePreset::Resnet18Like;
    throw std::runtime_error("unknown backbone preset: " + s);
}

inline std::string backbone_preset_name(BackbonePreset p) {
    switch (p) {
        case BackbonePreset::Tiny: return "tiny";
        case BackbonePreset::Small: return "small";
        case BackbonePreset::Resnet18Like: return "resnet18-like";
    }
    throw std::runtime_error("bad preset");
}

struct ModelConfig {
    BackbonePreset preset = BackbonePreset::Small;
    std::size_t input_channels = 3;
    bool dual_branch = false;        // separate towers for each image, merged head
    std::size_t output_dim = 2;
};

// A sequential tower; the dual-branch network runs two of these and merges
// their pooled features through a small head.
template <typename T>
class Tower {
  public:
    Tower() = default;
    Tower(BackbonePreset preset, std::size_t cin, Rng& rng) {
        switch (preset) {
            case BackbonePreset::Tiny:
                // four stride-2 stages: the receptive field must span the
                // offset between the two curves or pooled features cannot
                // express their relative displacement
                add<Conv2d<T>>(cin, 8, 3, 2, 1, rng);
                add<BatchNorm2d<T>>(8);
                add<ReLU<T>>();
                add<Conv2d<T>>(8, 16, 3, 2, 1, rng);
                add<BatchNorm2d<T>>(16);
                add<ReLU<T>>();
                add<Conv2d<T>>(16, 16, 3, 2, 1, rng);
                add<BatchNorm2d<T>>(16);
                add<ReLU<T>>();
                add<Conv2d<T>>(16, 16, 3, 2, 1, rng);
                add<BatchNorm2d<T>>(16);
                add<ReLU<T>>();
                feature_dim_ = 16;
                break;
            case BackbonePreset::Small:
                // stride-4 7x7 stem (overlapping windows keep sub-stride
                // detail while cutting the cost of every later stage), two
                // stride-2 stages, then full-receptive-field blocks at the
                // coarse scale before pooling
                add<Conv2d<T>>(cin, 16, 7, 4, 3, rng);
                add<BatchNorm2d<T>>(16);
                add<ReLU<T>>();
                add<Conv2d<T>>(16, 32, 3, 2, 1, rng);
                add<BatchNorm2d<T>>(32);
                add<ReLU<T>>();
                add<Conv2d<T>>(32, 64, 3, 2, 1, rng);
                add<BatchNorm2d<T>>(64);
                add<ReLU<T>>();
                add<Conv2d<T>>(64, 64, 3, 1, 1, rng);
                add<BatchNorm2d<T>>(64);
                add<ReLU<T>>();
                add<Conv2d<T>>(64, 64, 3, 1, 1, rng);
                add<BatchNorm2d<T>>(64);
                add<ReLU<T>>();
                add<Conv2d<T>>(64, 64, 3, 1, 1, rng);
                add<BatchNorm2d<T>>(64);
                add<ReLU<T>>();
                feature_dim_ = 64;
                break;
            case BackbonePreset::Resnet18Like:
                add<Conv2d<T>>(cin, 16, 3, 2, 1, rng);
                add<BatchNorm2d<T>>(16);
                add<ReLU<T>>();
                add<ResBlock<T>>(16, 16, 1, rng);
                add<ResBlock<T>>(16, 32, 2, rng);
                add<ResBlock<T>>(32, 64, 2, rng);
                add<ResBlock<T>>(64, 128, 2, rng);
                feature_dim_ = 128;
                break;
        }
        add<GlobalAvgPool<T>>();
    }

    std::size_t feature_dim() const { return feature_dim_; }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        Tensor<T> h = x;
        for (auto& l : layers_) h = l->forward(h, training);
        return h;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        Tensor<T> d = dy;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) d = (*it)->backward(d);
        return d;
    }

    void collect_params(std::vector<Param<T>*>& out) {
        for (auto& l : layers_) l->collect_params(out);
    }
    void collect_buffers(std::vector<std::vector<T>*>& out) {
        for (auto& l : layers_) l->collect_buffers(out);
    }

  private:
    template <typename L, typename... A>
    void add(A&&... a) {
        layers_.push_back(std::make_unique<L>(std::forward<A>(a)...));
    }
    std::vector<std::unique_ptr<Layer<T>>> layers_;
    std::size_t feature_dim_ = 0;
};

template <typename T>
class Network {
  public:
    explicit Network(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        Rng rng(derive_seed(seed, 0xA11C));
        tower_a_ = Tower<T>(cfg.preset, cfg.input_channels, rng);
        std::size_t feat = tower_a_.feature_dim();
        if (cfg.dual_branch) {
            tower_b_ = Tower<T>(cfg.preset, cfg.input_channels, rng);
            feat *= 2;
            merge_ = std::make_unique<Linear<T>>(feat, tower_a_.feature_dim(), rng);
            merge_relu_ = std::make_unique<ReLU<T>>();
            feat = tower_a_.feature_dim();
        }
        head_ = std::make_unique<Linear<T>>(feat, cfg.output_dim, rng);
    }

    const ModelConfig& config() const { return cfg_; }

    // Single-branch forward ignores xb.  The output layer is a plain affine
    // map, so predictions are unbounded in both coordinates.
    Tensor<T> forward(const Tensor<T>& xa, const Tensor<T>* xb, bool training) {
        Tensor<T> fa = tower_a_.forward(xa, training);
        Tensor<T> feat;
        if (cfg_.dual_branch) {
            if (!xb) throw std::runtime_error("dual-branch network needs two inputs");
            Tensor<T> fb = tower_b_.forward(*xb, training);
            feat = Tensor<T>(fa.n(), fa.c() + fb.c(), 1, 1);
            for (std::size_t in = 0; in < fa.n(); ++in) {
                for (std::size_t c = 0; c < fa.c(); ++c)
                    feat.data[in * feat.c() + c] = fa.data[in * fa.c() + c];
                for (std::size_t c = 0; c < fb.c(); ++c)
                    feat.data[in * feat.c() + fa.c() + c] = fb.data[in * fb.c() + c];
            }
            split_c_ = fa.c();
            feat = merge_relu_->forward(merge_->forward(feat, training), training);
        } else {
            feat = fa;
        }
        return head_->forward(feat, training);
    }

    void backward(const Tensor<T>& dloss) {
        Tensor<T> d = head_->backward(dloss);
        if (cfg_.dual_branch) {
            d = merge_->backward(merge_relu_->backward(d));
            Tensor<T> da(d.n(), split_c_, 1, 1), db(d.n(), d.c() - split_c_, 1, 1);
            for (std::size_t in = 0; in < d.n(); ++in) {
                for (std::size_t c = 0; c < split_c_; ++c)
                    da.data[in * split_c_ + c] = d.data[in * d.c() + c];
                for (std::size_t c = 0; c < db.c(); ++c)
                    db.data[in * db.c() + c] = d.data[in * d.c() + split_c_ + c];
            }
            tower_b_.backward(db);
            tower_a_.backward(da);
        } else {
            tower_a_.backward(d);
        }
    }

    std::vector<Param<T>*> params() {
        std::vector<Param<T>*> out;
        tower_a_.collect_params(out);
        if (cfg_.dual_branch) {
            tower_b_.collect_params(out);
            merge_->collect_params(out);
        }
        head_->collect_params(out);
        return out;
    }

    std::vector<std::vector<T>*> buffers() {
        std::vector<std::vector<T>*> out;
        tower_a_.collect_buffers(out);
        if (cfg_.dual_branch) tower_b_.collect_buffers(out);
        return out;
    }

    std::size_t param_count() {
        std::size_t n = 0;
        for (auto* p : params()) n += p->value.size();
        return n;
    }

    void zero_grads() {
        for (auto* p : params()) p->grad.fill(T(0));
    }

    void save_weights(const std::string& path) {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open " + path + " for writing");
        const char magic[8] = {'R', 'M', 'N', 'E', 'T', '0', '1', '\n'};
        f.write(magic, 8);
        auto write_vec = [&](const std::vector<T>& v) {
            const std::uint64_t n = v.size();
            f.write(reinterpret_cast<const char*>(&n), 8);
            std::vector<double> d(v.begin(), v.end());
            f.write(reinterpret_cast<const char*>(d.data()),
                    static_cast<std::streamsize>(d.size() * sizeof(double)));
        };
        auto ps = params();
        std::uint64_t np = ps.size();
        f.write(reinterpret_cast<const char*>(&np), 8);
        for (auto* p : ps) write_vec(p->value.data);
        auto bs = buffers();
        std::uint64_t nb = bs.size();
        f.write(reinterpret_cast<const char*>(&nb), 8);
        for (auto* b : bs) write_vec(*b);
        if (!f) throw std::runtime_error("failed writing " + path);
    }

    void load_weights(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open " + path);
        char magic[8];
        f.read(magic, 8);
        if (std::string(magic, 8) != "RMNET01\n")
            throw std::runtime_error("bad weights file: " + path);
        auto read_vec = [&](std::vector<T>& v) {
            std::uint64_t n = 0;
            f.read(reinterpret_cast<char*>(&n), 8);
            if (n != v.size()) throw std::runtime_error("weights shape mismatch in " + path);
            std::vector<double> d(n);
            f.read(reinterpret_cast<char*>(d.data()),
                   static_cast<std::streamsize>(n * sizeof(double)));
            for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<T>(d[i]);
        };
        auto ps = params();
        std::uint64_t np = 0;
        f.read(reinterpret_cast<char*>(&np), 8);
        if (np != ps.size()) throw std::runtime_error("weights param count mismatch in " + path);
        for (auto* p : ps) read_vec(p->value.data);
        auto bs = buffers();
        std::uint64_t nb = 0;
        f.read(reinterpret_cast<char*>(&nb), 8);
        if (nb != bs.size()) throw std::runtime_error("weights buffer count mismatch in " + path);
        for (auto* b : bs) read_vec(*b);
        if (!f) throw std::runtime_error("truncated weights file: " + path);
    }

  private:
    ModelConfig cfg_;
    Tower<T> tower_a_, tower_b_;
    std::unique_ptr<Linear<T>> merge_;
    std::unique_ptr<ReLU<T>> merge_relu_;
    std::unique_ptr<Linear<T>> head_;
    std::size_t split_c_ = 0;
};

template <typename T>
class Adam {
  public:
    Adam(T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::vector<Param<T>*>& params) {
        ++t_;
        const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1_), t_));
        const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2_), t_));
        for (auto* p : params) {
            for (std::size_t i = 0; i < p->value.size(); ++i) {
                const T g = p->grad.data[i];
                p->m.data[i] = beta1_ * p->m.data[i] + (T(1) - beta1_) * g;
                p->v.data[i] = beta2_ * p->v.data[i] + (T(1) - beta2_) * g * g;
                const T mhat = p->m.data[i] / bc1;
                const T vhat = p->v.data[i] / bc2;
                p->value.data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    T learning_rate() const { return lr_; }

  private:
    T lr_, beta1_, beta2_, eps_;
    int t_ = 0;
};

}  // namespace railmatch::nn
