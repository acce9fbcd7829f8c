#include "ngc/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "ngc/rng.hpp"

namespace ngc {

namespace {

constexpr double kLogClamp = 1e-12;

void validate_spec(const ModelSpec& s) {
    if (s.input_dim == 0 || s.output_dim == 0)
        throw TensorError("model widths must be positive");
    for (uint32_t h : s.hidden)
        if (h == 0) throw TensorError("model widths must be positive");
}

// Target of one training/eval call: regression values or class labels.
struct TargetView {
    const double* values = nullptr;   // rows x out
    const uint16_t* labels = nullptr; // rows
};

struct Engine {
    ModelSpec spec;
    std::vector<uint32_t> dims;  // [in, hidden..., out]
    std::vector<size_t> w_ofs, b_ofs;
    size_t total = 0;
    size_t layers = 0;

    explicit Engine(const ModelSpec& s) : spec(s) {
        validate_spec(s);
        dims.push_back(s.input_dim);
        for (uint32_t h : s.hidden) dims.push_back(h);
        dims.push_back(s.output_dim);
        layers = dims.size() - 1;
        for (size_t l = 0; l < layers; ++l) {
            w_ofs.push_back(total);
            total += size_t(dims[l]) * dims[l + 1];
            b_ofs.push_back(total);
            total += dims[l + 1];
        }
    }

    // acts[l] holds rows x dims[l]; acts[layers] is the head output.
    void forward(const double* w, const double* X, size_t m,
                 std::vector<std::vector<double>>& acts) const {
        acts.resize(layers + 1);
        acts[0].assign(X, X + m * dims[0]);
        for (size_t l = 0; l < layers; ++l) {
            size_t in = dims[l], out = dims[l + 1];
            acts[l + 1].assign(m * out, 0.0);
            const double* W = w + w_ofs[l];
            const double* b = w + b_ofs[l];
            const double* A = acts[l].data();
            double* O = acts[l + 1].data();
            for (size_t r = 0; r < m; ++r) {
                double* orow = O + r * out;
                for (size_t o = 0; o < out; ++o) orow[o] = b[o];
                const double* arow = A + r * in;
                for (size_t i = 0; i < in; ++i) {
                    double a = arow[i];
                    if (a == 0.0) continue;  // one-hot inputs are mostly zero
                    const double* wrow = W + i * out;
                    for (size_t o = 0; o < out; ++o) orow[o] += a * wrow[o];
                }
            }
            if (l + 1 < layers) {
                if (spec.activation == Activation::HyperbolicTangent)
                    for (double& v : acts[l + 1]) v = std::tanh(v);
                else
                    for (double& v : acts[l + 1]) v = v > 0.0 ? v : 0.0;
            } else if (spec.head == Head::Softmax) {
                for (size_t r = 0; r < m; ++r) {
                    double* row = O + r * out;
                    double mx = row[0];
                    for (size_t o = 1; o < out; ++o) mx = std::max(mx, row[o]);
                    double s = 0.0;
                    for (size_t o = 0; o < out; ++o) {
                        row[o] = std::exp(row[o] - mx);
                        s += row[o];
                    }
                    for (size_t o = 0; o < out; ++o) row[o] /= s;
                }
            }
        }
    }

    size_t active_rows(size_t m, const uint8_t* mask) const {
        if (!mask) return m;
        size_t n = 0;
        for (size_t r = 0; r < m; ++r) n += mask[r] ? 1 : 0;
        return n;
    }

    // Mean loss over unmasked rows. out_scale2, when given, reports the
    // loss with per-output squared scale factors (raw units after target
    // standardization) without affecting anything else.
    double loss_from_acts(const std::vector<std::vector<double>>& acts, size_t m,
                          const TargetView& tgt, LossKind kind, const uint8_t* mask,
                          const double* out_scale2 = nullptr) const {
        size_t out = dims[layers];
        const double* P = acts[layers].data();
        size_t act = active_rows(m, mask);
        if (act == 0) return 0.0;
        double loss = 0.0;
        if (kind == LossKind::L2) {
            for (size_t r = 0; r < m; ++r) {
                if (mask && !mask[r]) continue;
                const double* prow = P + r * out;
                const double* trow = tgt.values + r * out;
                for (size_t o = 0; o < out; ++o) {
                    double d = prow[o] - trow[o];
                    loss += d * d * (out_scale2 ? out_scale2[o] : 1.0);
                }
            }
            return loss / double(act * out);
        }
        for (size_t r = 0; r < m; ++r) {
            if (mask && !mask[r]) continue;
            double p = P[r * out + tgt.labels[r]];
            loss += -std::log(std::max(p, kLogClamp));
        }
        return loss / double(act);
    }

    // Gradient of the mean loss; returns the same loss value as
    // loss_from_acts (without out_scale2). grad must hold `total` zeros.
    double backward_from_acts(const double* w, const std::vector<std::vector<double>>& acts,
                              size_t m, const TargetView& tgt, LossKind kind,
                              const uint8_t* mask, double* grad) const {
        size_t out = dims[layers];
        size_t act = active_rows(m, mask);
        if (act == 0) return 0.0;
        const double* P = acts[layers].data();
        std::vector<double> delta(m * out, 0.0);
        double loss = 0.0;
        if (kind == LossKind::L2) {
            double inv = 1.0 / double(act * out);
            for (size_t r = 0; r < m; ++r) {
                if (mask && !mask[r]) continue;
                const double* prow = P + r * out;
                const double* trow = tgt.values + r * out;
                double* drow = delta.data() + r * out;
                for (size_t o = 0; o < out; ++o) {
                    double d = prow[o] - trow[o];
                    loss += d * d * inv;
                    drow[o] = 2.0 * d * inv;
                }
                if (spec.head == Head::Softmax) {
                    // pull the L2 gradient back through the softmax Jacobian
                    double dot = 0.0;
                    for (size_t o = 0; o < out; ++o) dot += drow[o] * prow[o];
                    for (size_t o = 0; o < out; ++o) drow[o] = prow[o] * (drow[o] - dot);
                }
            }
        } else {
            if (spec.head != Head::Softmax)
                throw TensorError("cross-entropy requires a softmax head");
            double inv = 1.0 / double(act);
            for (size_t r = 0; r < m; ++r) {
                if (mask && !mask[r]) continue;
                const double* prow = P + r * out;
                double* drow = delta.data() + r * out;
                double p = prow[tgt.labels[r]];
                loss += -std::log(std::max(p, kLogClamp)) * inv;
                if (p <= kLogClamp) continue;  // clamped region: loss locally constant
                for (size_t o = 0; o < out; ++o) drow[o] = prow[o] * inv;
                drow[tgt.labels[r]] -= inv;
            }
        }
        // backprop through affine layers
        std::vector<double> next;
        for (size_t l = layers; l-- > 0;) {
            size_t in = dims[l], o_dim = dims[l + 1];
            const double* A = acts[l].data();
            double* gW = grad + w_ofs[l];
            double* gb = grad + b_ofs[l];
            for (size_t r = 0; r < m; ++r) {
                const double* drow = delta.data() + r * o_dim;
                for (size_t o = 0; o < o_dim; ++o) gb[o] += drow[o];
                const double* arow = A + r * in;
                for (size_t i = 0; i < in; ++i) {
                    double a = arow[i];
                    if (a == 0.0) continue;
                    double* grow = gW + i * o_dim;
                    for (size_t o = 0; o < o_dim; ++o) grow[o] += a * drow[o];
                }
            }
            if (l == 0) break;
            next.assign(m * in, 0.0);
            const double* W = w + w_ofs[l];
            for (size_t r = 0; r < m; ++r) {
                const double* drow = delta.data() + r * o_dim;
                const double* arow = A + r * in;
                double* nrow = next.data() + r * in;
                for (size_t i = 0; i < in; ++i) {
                    const double* wrow = W + i * o_dim;
                    double s = 0.0;
                    for (size_t o = 0; o < o_dim; ++o) s += wrow[o] * drow[o];
                    double a = arow[i];
                    double deriv = spec.activation == Activation::HyperbolicTangent
                                       ? 1.0 - a * a
                                       : (a > 0.0 ? 1.0 : 0.0);
                    nrow[i] = s * deriv;
                }
            }
            delta.swap(next);
        }
        return loss;
    }
};

std::vector<double> promote(const std::vector<float>& v) {
    return std::vector<double>(v.begin(), v.end());
}

void check_batch(const ModelSpec& spec, const Tensor& batch) {
    if (batch.dtype != DType::F32) throw TensorError("model input must be f32");
    if (batch.shape.empty() || batch.cols() != spec.input_dim)
        throw TensorError("batch trailing dimension " + std::to_string(batch.cols()) +
                          " does not match model input dimension " +
                          std::to_string(spec.input_dim));
}

TargetView check_target(const ModelSpec& spec, size_t rows, const Tensor& target,
                        LossKind kind, std::vector<double>& values_buf) {
    TargetView tv;
    if (kind == LossKind::CrossEntropy) {
        if (target.dtype != DType::U16) throw TensorError("cross-entropy targets must be labels");
        if (target.numel() != rows) throw TensorError("label count does not match batch rows");
        for (uint16_t l : target.u)
            if (l >= spec.output_dim) throw TensorError("label out of range");
        tv.labels = target.u.data();
    } else {
        if (target.dtype != DType::F32) throw TensorError("L2 targets must be f32");
        if (target.rows() != rows || target.cols() != spec.output_dim)
            throw TensorError("target shape does not match model output");
        values_buf.assign(target.f.begin(), target.f.end());
        tv.values = values_buf.data();
    }
    return tv;
}

}  // namespace

size_t param_count(const ModelSpec& spec) {
    validate_spec(spec);
    return Engine(spec).total;
}

DenseModel init_model(const ModelSpec& spec) {
    Engine eng(spec);
    DenseModel m;
    m.spec = spec;
    m.params.assign(eng.total, 0.0f);
    m.opt_m.assign(eng.total, 0.0f);
    m.opt_v.assign(eng.total, 0.0f);
    Rng rng(spec.init_seed);
    for (size_t l = 0; l < eng.layers; ++l) {
        size_t in = eng.dims[l], out = eng.dims[l + 1];
        double limit = std::sqrt(6.0 / double(in + out));
        float* W = m.params.data() + eng.w_ofs[l];
        for (size_t i = 0; i < in * out; ++i) W[i] = float(rng.uniform(-limit, limit));
        // biases stay zero
    }
    return m;
}

Tensor forward(const DenseModel& model, const Tensor& batch) {
    check_batch(model.spec, batch);
    Engine eng(model.spec);
    if (model.params.size() != eng.total) throw TensorError("parameter vector size mismatch");
    size_t m = batch.rows();
    std::vector<double> X(batch.f.begin(), batch.f.end());
    std::vector<double> w = promote(model.params);
    std::vector<std::vector<double>> acts;
    eng.forward(w.data(), X.data(), m, acts);
    std::vector<uint32_t> out_shape(batch.shape.begin(), batch.shape.end() - 1);
    out_shape.push_back(model.spec.output_dim);
    std::vector<float> out(acts[eng.layers].begin(), acts[eng.layers].end());
    return Tensor::from_f32(std::move(out_shape), std::move(out));
}

double loss_l2(const Tensor& pred, const Tensor& target) {
    if (pred.dtype != DType::F32 || target.dtype != DType::F32)
        throw TensorError("loss_l2 expects f32 tensors");
    if (!pred.same_shape(target)) throw TensorError("loss_l2 shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < pred.f.size(); ++i) {
        double d = double(pred.f[i]) - double(target.f[i]);
        s += d * d;
    }
    return s / double(pred.numel());
}

double loss_cross_entropy(const Tensor& pred, const Tensor& target_labels) {
    if (pred.dtype != DType::F32) throw TensorError("predictions must be f32");
    if (target_labels.dtype != DType::U16) throw TensorError("targets must be labels");
    size_t rows = pred.rows(), C = pred.cols();
    if (target_labels.numel() != rows) throw TensorError("label count mismatch");
    double s = 0.0;
    for (size_t r = 0; r < rows; ++r) {
        uint16_t l = target_labels.u[r];
        if (l >= C) throw TensorError("label out of range");
        s += -std::log(std::max(double(pred.f[r * C + l]), kLogClamp));
    }
    return s / double(rows);
}

std::vector<double> backward(const DenseModel& model, const Tensor& batch, const Tensor& target,
                             LossKind loss) {
    check_batch(model.spec, batch);
    Engine eng(model.spec);
    size_t m = batch.rows();
    std::vector<double> values_buf;
    TargetView tv = check_target(model.spec, m, target, loss, values_buf);
    std::vector<double> X(batch.f.begin(), batch.f.end());
    std::vector<double> w = promote(model.params);
    std::vector<std::vector<double>> acts;
    eng.forward(w.data(), X.data(), m, acts);
    std::vector<double> grad(eng.total, 0.0);
    eng.backward_from_acts(w.data(), acts, m, tv, loss, nullptr, grad.data());
    return grad;
}

double grad_check(const DenseModel& model, const Tensor& batch, const Tensor& target,
                  LossKind loss) {
    Engine eng(model.spec);
    if (eng.total > 5000) throw TensorError("grad_check is limited to models with <= 5000 parameters");
    check_batch(model.spec, batch);
    size_t m = batch.rows();
    std::vector<double> values_buf;
    TargetView tv = check_target(model.spec, m, target, loss, values_buf);
    std::vector<double> X(batch.f.begin(), batch.f.end());
    std::vector<double> w = promote(model.params);
    std::vector<std::vector<double>> acts;
    eng.forward(w.data(), X.data(), m, acts);
    std::vector<double> grad(eng.total, 0.0);
    eng.backward_from_acts(w.data(), acts, m, tv, loss, nullptr, grad.data());

    const double h = 1e-4;
    double worst = 0.0;
    for (size_t i = 0; i < eng.total; ++i) {
        double keep = w[i];
        w[i] = keep + h;
        eng.forward(w.data(), X.data(), m, acts);
        double lp = eng.loss_from_acts(acts, m, tv, loss, nullptr);
        w[i] = keep - h;
        eng.forward(w.data(), X.data(), m, acts);
        double lm = eng.loss_from_acts(acts, m, tv, loss, nullptr);
        w[i] = keep;
        double numeric = (lp - lm) / (2.0 * h);
        double denom = std::max(1e-8, std::abs(grad[i]) + std::abs(numeric));
        worst = std::max(worst, std::abs(grad[i] - numeric) / denom);
    }
    return worst;
}

FitResult fit(DenseModel& model, const Tensor& inputs, const Tensor& targets,
              const TrainConfig& config, const std::vector<uint8_t>* row_mask) {
    if (config.epochs < 1) throw TensorError("epochs must be >= 1");
    if (!(config.learning_rate > 0.0)) throw TensorError("learning rate must be positive");
    if (config.batch_size < 1) throw TensorError("batch size must be >= 1");
    check_batch(model.spec, inputs);
    Engine eng(model.spec);
    if (model.params.size() != eng.total) throw TensorError("parameter vector size mismatch");
    size_t n = inputs.rows();
    if (n == 0) throw TensorError("empty dataset");
    LossKind kind = model.spec.head == Head::Softmax ? LossKind::CrossEntropy : LossKind::L2;
    std::vector<double> target_buf;
    TargetView all_tv = check_target(model.spec, n, targets, kind, target_buf);
    if (row_mask && row_mask->size() != n) throw TensorError("row mask size mismatch");
    const uint8_t* mask = row_mask ? row_mask->data() : nullptr;
    size_t n_active = eng.active_rows(n, mask);
    if (n_active == 0) throw TensorError("all rows masked out");

    size_t in = model.spec.input_dim, out = model.spec.output_dim;

    // per-dimension standardization over unmasked rows
    std::vector<double> X(inputs.f.begin(), inputs.f.end());
    std::vector<double> mu(in, 0.0), sd(in, 0.0);
    for (size_t r = 0; r < n; ++r) {
        if (mask && !mask[r]) continue;
        for (size_t i = 0; i < in; ++i) mu[i] += X[r * in + i];
    }
    for (size_t i = 0; i < in; ++i) mu[i] /= double(n_active);
    for (size_t r = 0; r < n; ++r) {
        if (mask && !mask[r]) continue;
        for (size_t i = 0; i < in; ++i) {
            double d = X[r * in + i] - mu[i];
            sd[i] += d * d;
        }
    }
    for (size_t i = 0; i < in; ++i) sd[i] = std::sqrt(sd[i] / double(n_active)) + 1e-6;
    for (size_t r = 0; r < n; ++r)
        for (size_t i = 0; i < in; ++i) X[r * in + i] = (X[r * in + i] - mu[i]) / sd[i];

    bool reg = kind == LossKind::L2;
    std::vector<double> tmu(out, 0.0), tsd(out, 1.0), scale2(out, 1.0);
    std::vector<double> Y;
    if (reg) {
        Y.assign(all_tv.values, all_tv.values + n * out);
        std::fill(tsd.begin(), tsd.end(), 0.0);
        for (size_t r = 0; r < n; ++r) {
            if (mask && !mask[r]) continue;
            for (size_t o = 0; o < out; ++o) tmu[o] += Y[r * out + o];
        }
        for (size_t o = 0; o < out; ++o) tmu[o] /= double(n_active);
        for (size_t r = 0; r < n; ++r) {
            if (mask && !mask[r]) continue;
            for (size_t o = 0; o < out; ++o) {
                double d = Y[r * out + o] - tmu[o];
                tsd[o] += d * d;
            }
        }
        for (size_t o = 0; o < out; ++o) {
            tsd[o] = std::sqrt(tsd[o] / double(n_active)) + 1e-6;
            scale2[o] = tsd[o] * tsd[o];
        }
        for (size_t r = 0; r < n; ++r)
            for (size_t o = 0; o < out; ++o) Y[r * out + o] = (Y[r * out + o] - tmu[o]) / tsd[o];
    }

    // move the raw-frame weights into this data's standardized frame
    std::vector<double> w = promote(model.params);
    {
        double* W0 = w.data() + eng.w_ofs[0];
        double* b0 = w.data() + eng.b_ofs[0];
        size_t d1 = eng.dims[1];
        for (size_t i = 0; i < in; ++i)
            for (size_t o = 0; o < d1; ++o) b0[o] += mu[i] * W0[i * d1 + o];
        for (size_t i = 0; i < in; ++i)
            for (size_t o = 0; o < d1; ++o) W0[i * d1 + o] *= sd[i];
        if (reg) {
            size_t ll = eng.layers - 1;
            double* WL = w.data() + eng.w_ofs[ll];
            double* bL = w.data() + eng.b_ofs[ll];
            size_t dl = eng.dims[ll];
            for (size_t i = 0; i < dl; ++i)
                for (size_t o = 0; o < out; ++o) WL[i * out + o] /= tsd[o];
            for (size_t o = 0; o < out; ++o) bL[o] = (bL[o] - tmu[o]) / tsd[o];
        }
    }

    std::vector<double> adam_m(eng.total, 0.0), adam_v(eng.total, 0.0);
    uint64_t t = 0;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    Rng shuffle_rng(config.shuffle_seed);
    std::vector<size_t> perm(n);
    for (size_t i = 0; i < n; ++i) perm[i] = i;

    size_t bs = config.batch_size;
    std::vector<double> Xb(bs * in), Yb(reg ? bs * out : 0);
    std::vector<uint16_t> Lb(reg ? 0 : bs);
    std::vector<uint8_t> Mb(bs);
    std::vector<double> grad(eng.total);
    std::vector<std::vector<double>> acts;
    FitResult result;
    result.epoch_loss.reserve(config.epochs);

    for (uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle_rng.shuffle(perm);
        double epoch_loss = 0.0;
        size_t epoch_rows = 0;
        for (size_t start = 0; start < n; start += bs) {
            size_t m = std::min(bs, n - start);
            size_t act_rows = 0;
            for (size_t r = 0; r < m; ++r) {
                size_t src = perm[start + r];
                std::memcpy(&Xb[r * in], &X[src * in], in * sizeof(double));
                if (reg)
                    std::memcpy(&Yb[r * out], &Y[src * out], out * sizeof(double));
                else
                    Lb[r] = all_tv.labels[src];
                Mb[r] = mask ? mask[src] : 1;
                act_rows += Mb[r] ? 1 : 0;
            }
            if (act_rows == 0) continue;
            TargetView tv;
            if (reg)
                tv.values = Yb.data();
            else
                tv.labels = Lb.data();
            eng.forward(w.data(), Xb.data(), m, acts);
            grad.assign(eng.total, 0.0);
            double std_loss =
                eng.backward_from_acts(w.data(), acts, m, tv, kind, Mb.data(), grad.data());
            if (!std::isfinite(std_loss))
                throw std::runtime_error("fit: non-finite loss at epoch " + std::to_string(epoch));
            double raw_loss =
                reg ? eng.loss_from_acts(acts, m, tv, kind, Mb.data(), scale2.data()) : std_loss;
            epoch_loss += raw_loss * double(act_rows);
            epoch_rows += act_rows;
            ++t;
            double c1 = 1.0 - std::pow(b1, double(t));
            double c2 = 1.0 - std::pow(b2, double(t));
            double lr = config.learning_rate, wd = config.weight_decay;
            for (size_t i = 0; i < eng.total; ++i) {
                adam_m[i] = b1 * adam_m[i] + (1.0 - b1) * grad[i];
                adam_v[i] = b2 * adam_v[i] + (1.0 - b2) * grad[i] * grad[i];
                double mh = adam_m[i] / c1;
                double vh = adam_v[i] / c2;
                w[i] -= lr * (mh / (std::sqrt(vh) + eps) + wd * w[i]);
            }
        }
        result.epoch_loss.push_back(epoch_rows ? epoch_loss / double(epoch_rows) : 0.0);
    }

    // fold the standardization back so the model maps raw inputs to raw outputs
    {
        double* W0 = w.data() + eng.w_ofs[0];
        double* b0 = w.data() + eng.b_ofs[0];
        size_t d1 = eng.dims[1];
        for (size_t i = 0; i < in; ++i)
            for (size_t o = 0; o < d1; ++o) W0[i * d1 + o] /= sd[i];
        for (size_t i = 0; i < in; ++i)
            for (size_t o = 0; o < d1; ++o) b0[o] -= mu[i] * W0[i * d1 + o];
        if (reg) {
            size_t ll = eng.layers - 1;
            double* WL = w.data() + eng.w_ofs[ll];
            double* bL = w.data() + eng.b_ofs[ll];
            size_t dl = eng.dims[ll];
            for (size_t i = 0; i < dl; ++i)
                for (size_t o = 0; o < out; ++o) WL[i * out + o] *= tsd[o];
            for (size_t o = 0; o < out; ++o) bL[o] = bL[o] * tsd[o] + tmu[o];
        }
    }

    for (size_t i = 0; i < eng.total; ++i) {
        model.params[i] = float(w[i]);
        model.opt_m[i] = float(adam_m[i]);
        model.opt_v[i] = float(adam_v[i]);
    }
    model.step_count += t;
    return result;
}

namespace {

void put_u32v(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
}
void put_u64v(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
}
uint32_t get_u32p(const uint8_t* p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}
uint64_t get_u64p(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(p[i]) << (8 * i);
    return v;
}

constexpr char kModelMagic[4] = {'N', 'G', 'C', 'M'};
constexpr uint32_t kModelVersion = 1;

}  // namespace

void save_checkpoint(const std::filesystem::path& file, const DenseModel& model) {
    Engine eng(model.spec);
    if (model.params.size() != eng.total) throw TensorError("parameter vector size mismatch");
    std::vector<uint8_t> out;
    out.insert(out.end(), kModelMagic, kModelMagic + 4);
    put_u32v(out, kModelVersion);
    put_u32v(out, model.spec.input_dim);
    put_u32v(out, model.spec.output_dim);
    put_u32v(out, uint32_t(model.spec.hidden.size()));
    for (uint32_t h : model.spec.hidden) put_u32v(out, h);
    out.push_back(uint8_t(model.spec.activation));
    out.push_back(uint8_t(model.spec.head));
    put_u64v(out, model.spec.init_seed);
    put_u64v(out, model.step_count);
    for (float v : model.params) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_u32v(out, bits);
    }
    std::ofstream f(file, std::ios::binary | std::ios::trunc);
    if (!f) throw TensorError("cannot open for writing: " + file.string());
    f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
    if (!f) throw TensorError("write failed: " + file.string());
}

DenseModel load_checkpoint(const std::filesystem::path& file) {
    std::ifstream f(file, std::ios::binary | std::ios::ate);
    if (!f) throw TensorError("cannot open: " + file.string());
    std::streamsize sz = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> b(static_cast<size_t>(sz));
    f.read(reinterpret_cast<char*>(b.data()), sz);
    if (!f) throw TensorError("read failed: " + file.string());

    if (b.size() < 4 || std::memcmp(b.data(), kModelMagic, 4) != 0)
        throw ParseError("bad magic, expected NGCM", 0);
    if (b.size() < 20) throw ParseError("truncated header", b.size());
    uint32_t version = get_u32p(b.data() + 4);
    if (version != kModelVersion)
        throw ParseError("unsupported version " + std::to_string(version), 4);
    DenseModel m;
    m.spec.input_dim = get_u32p(b.data() + 8);
    m.spec.output_dim = get_u32p(b.data() + 12);
    uint32_t nh = get_u32p(b.data() + 16);
    size_t off = 20;
    if (nh > 64) throw ParseError("implausible hidden layer count", 16);
    if (b.size() < off + nh * 4 + 18) throw ParseError("truncated spec", b.size());
    m.spec.hidden.resize(nh);
    for (uint32_t i = 0; i < nh; ++i, off += 4) m.spec.hidden[i] = get_u32p(b.data() + off);
    uint8_t act = b[off], head = b[off + 1];
    if (act > 1) throw ParseError("unknown activation", off);
    if (head > 1) throw ParseError("unknown head", off + 1);
    m.spec.activation = Activation(act);
    m.spec.head = Head(head);
    off += 2;
    m.spec.init_seed = get_u64p(b.data() + off);
    off += 8;
    m.step_count = get_u64p(b.data() + off);
    off += 8;
    size_t count = param_count(m.spec);
    if (b.size() != off + count * 4)
        throw ParseError("parameter payload size mismatch, expected " + std::to_string(count * 4) +
                             " bytes, found " + std::to_string(b.size() - off),
                         off);
    m.params.resize(count);
    for (size_t i = 0; i < count; ++i) {
        uint32_t bits = get_u32p(b.data() + off + i * 4);
        std::memcpy(&m.params[i], &bits, 4);
    }
    m.opt_m.assign(count, 0.0f);
    m.opt_v.assign(count, 0.0f);
    return m;
}

}  // namespace ngc
