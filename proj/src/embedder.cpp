#include "rdml/embedder.hpp"

#include <cmath>
#include <cstring>

#include "rdml/error.hpp"

namespace rdml {

std::vector<std::size_t> EmbeddingModel::layer_sizes() const {
    std::vector<std::size_t> sizes;
    if (layers.empty()) return sizes;
    sizes.push_back(layers.front().in_dim());
    for (const auto& l : layers) sizes.push_back(l.out_dim());
    return sizes;
}

void EmbeddingModel::validate() const {
    require(!layers.empty(), ErrorKind::InvalidArgument, "model has no layers");
    for (std::size_t k = 0; k < layers.size(); ++k) {
        const auto& l = layers[k];
        require(l.in_dim() > 0 && l.out_dim() > 0, ErrorKind::InvalidArgument,
                "layer " + std::to_string(k) + " has an empty weight matrix");
        require(l.bias.rows() == 1 && l.bias.cols() == l.out_dim(), ErrorKind::ShapeMismatch,
                "layer " + std::to_string(k) + " bias is " + l.bias.shape_str());
        if (k + 1 < layers.size())
            require(l.out_dim() == layers[k + 1].in_dim(), ErrorKind::ShapeMismatch,
                    "layer " + std::to_string(k) + " output does not chain into layer " +
                        std::to_string(k + 1));
    }
    require(layers.back().activation == Activation::Identity, ErrorKind::InvalidArgument,
            "last layer must be linear");
}

std::vector<ParamRef> EmbeddingModel::params() {
    std::vector<ParamRef> out;
    for (std::size_t k = 0; k < layers.size(); ++k) {
        out.push_back({"layer" + std::to_string(k) + ".weight", &layers[k].weight});
        out.push_back({"layer" + std::to_string(k) + ".bias", &layers[k].bias});
    }
    return out;
}

std::size_t EmbeddingModel::param_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
}

std::uint64_t EmbeddingModel::fingerprint() const noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    auto mix = [&h](const Matrix& m) {
        for (double v : m.data()) {
            std::uint64_t bits = 0;
            std::memcpy(&bits, &v, sizeof bits);
            h = (h ^ bits) * 0x100000001B3ULL;
        }
        h = (h ^ m.rows()) * 0x100000001B3ULL;
    };
    for (const auto& l : layers) {
        mix(l.weight);
        mix(l.bias);
    }
    return h;
}

bool operator==(const EmbeddingModel& a, const EmbeddingModel& b) {
    if (a.normalize_output != b.normalize_output || a.layers.size() != b.layers.size()) return false;
    for (std::size_t k = 0; k < a.layers.size(); ++k) {
        const auto& la = a.layers[k];
        const auto& lb = b.layers[k];
        if (la.activation != lb.activation || !(la.weight == lb.weight) || !(la.bias == lb.bias))
            return false;
    }
    return true;
}

ParamGrads zero_grads(const EmbeddingModel& model) {
    ParamGrads g;
    for (const auto& l : model.layers) {
        g.emplace_back(l.weight.rows(), l.weight.cols());
        g.emplace_back(l.bias.rows(), l.bias.cols());
    }
    return g;
}

void accumulate(ParamGrads& into, const ParamGrads& g, double scale) {
    require(into.size() == g.size(), ErrorKind::ShapeMismatch, "accumulate: gradient sets differ");
    for (std::size_t i = 0; i < g.size(); ++i) {
        require(into[i].same_shape(g[i]), ErrorKind::ShapeMismatch,
                "accumulate: gradient " + std::to_string(i) + " shape differs");
        auto& dst = into[i].data();
        const auto& src = g[i].data();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += scale * src[j];
    }
}

EmbeddingModel init_model(const std::vector<std::size_t>& layer_sizes, bool normalize, Rng& rng) {
    require(layer_sizes.size() >= 2, ErrorKind::InvalidArgument,
            "init_model: need at least input and output sizes");
    for (std::size_t s : layer_sizes)
        require(s > 0, ErrorKind::InvalidArgument, "init_model: layer sizes must be positive");

    EmbeddingModel model;
    model.normalize_output = normalize;
    for (std::size_t k = 0; k + 1 < layer_sizes.size(); ++k) {
        const std::size_t in = layer_sizes[k];
        const std::size_t out = layer_sizes[k + 1];
        DenseLayer layer;
        layer.weight = Matrix(in, out);
        const double scale = std::sqrt(2.0 / static_cast<double>(in));
        for (auto& w : layer.weight.data()) w = scale * rng.normal();
        layer.bias = Matrix(1, out);
        layer.activation = k + 2 == layer_sizes.size() ? Activation::Identity : Activation::Relu;
        model.layers.push_back(std::move(layer));
    }
    return model;
}

namespace {

void check_input(const EmbeddingModel& model, const Matrix& x) {
    model.validate();
    require(x.cols() == model.input_dim(), ErrorKind::ShapeMismatch,
            "forward: input has " + std::to_string(x.cols()) + " columns, model expects " +
                std::to_string(model.input_dim()));
    require(x.all_finite(), ErrorKind::NumericFailure, "forward: input contains non-finite values");
}

Matrix affine(const DenseLayer& layer, const Matrix& h) {
    Matrix z = matmul(h, layer.weight);
    for (std::size_t r = 0; r < z.rows(); ++r) {
        auto zr = z.row(r);
        for (std::size_t c = 0; c < zr.size(); ++c) zr[c] += layer.bias(0, c);
    }
    return z;
}

void apply_activation(Activation act, Matrix& z) {
    if (act == Activation::Relu)
        for (auto& v : z.data()) v = v > 0.0 ? v : 0.0;
}

std::vector<double> normalize_rows(Matrix& e) {
    std::vector<double> norms(e.rows());
    for (std::size_t r = 0; r < e.rows(); ++r) {
        const double n = norm2(e.row(r));
        require(n > 0.0, ErrorKind::NumericFailure,
                "forward: embedding row " + std::to_string(r) + " is zero before normalisation");
        norms[r] = n;
        for (auto& v : e.row(r)) v /= n;
    }
    return norms;
}

}  // namespace

ForwardResult forward(const EmbeddingModel& model, const Matrix& x) {
    check_input(model, x);
    ForwardResult res;
    auto& tr = res.trace;
    tr.model_fingerprint = model.fingerprint();
    Matrix h = x;
    for (const auto& layer : model.layers) {
        tr.inputs.push_back(h);
        Matrix z = affine(layer, h);
        tr.pre_activations.push_back(z);
        apply_activation(layer.activation, z);
        h = std::move(z);
    }
    tr.raw_output = h;
    if (model.normalize_output) tr.row_norms = normalize_rows(h);
    require(h.all_finite(), ErrorKind::NumericFailure, "forward: non-finite embeddings");
    res.embeddings = std::move(h);
    return res;
}

Matrix embed(const EmbeddingModel& model, const Matrix& x) {
    check_input(model, x);
    Matrix h = x;
    for (const auto& layer : model.layers) {
        h = affine(layer, h);
        apply_activation(layer.activation, h);
    }
    if (model.normalize_output) normalize_rows(h);
    require(h.all_finite(), ErrorKind::NumericFailure, "embed: non-finite embeddings");
    return h;
}

BackwardResult backward(const EmbeddingModel& model, const ForwardTrace& trace, const Matrix& grad_out) {
    require(trace.inputs.size() == model.layers.size() &&
                trace.pre_activations.size() == model.layers.size(),
            ErrorKind::InvalidArgument, "backward: trace layer count does not match model");
    require(trace.model_fingerprint == model.fingerprint(), ErrorKind::InvalidArgument,
            "backward: trace was produced by different model parameters");
    require(grad_out.same_shape(trace.raw_output), ErrorKind::ShapeMismatch,
            "backward: output gradient is " + grad_out.shape_str() + ", forward output was " +
                trace.raw_output.shape_str());

    Matrix g = grad_out;
    if (model.normalize_output) {
        // e = h/|h|  =>  dh = (de - e (e . de)) / |h|
        for (std::size_t r = 0; r < g.rows(); ++r) {
            const double n = trace.row_norms[r];
            auto hr = trace.raw_output.row(r);
            auto gr = g.row(r);
            double proj = 0.0;
            for (std::size_t c = 0; c < gr.size(); ++c) proj += hr[c] / n * gr[c];
            for (std::size_t c = 0; c < gr.size(); ++c) gr[c] = (gr[c] - hr[c] / n * proj) / n;
        }
    }

    BackwardResult res;
    res.param_grads.resize(2 * model.layers.size());
    for (std::size_t k = model.layers.size(); k-- > 0;) {
        const auto& layer = model.layers[k];
        if (layer.activation == Activation::Relu) {
            const auto& z = trace.pre_activations[k].data();
            auto& gd = g.data();
            for (std::size_t i = 0; i < gd.size(); ++i)
                if (!(z[i] > 0.0)) gd[i] = 0.0;
        }
        res.param_grads[2 * k] = matmul_tn(trace.inputs[k], g);
        res.param_grads[2 * k + 1] = col_sums(g);
        g = matmul_nt(g, layer.weight);
    }
    res.input_grad = std::move(g);
    return res;
}

namespace {

const char* activation_name(Activation a) { return a == Activation::Relu ? "relu" : "identity"; }

Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::Relu;
    if (s == "identity") return Activation::Identity;
    fail(ErrorKind::Config, "unknown activation '" + s + "'");
}

}  // namespace

nlohmann::json to_json(const EmbeddingModel& model) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : model.layers) {
        layers.push_back({{"in", l.in_dim()},
                          {"out", l.out_dim()},
                          {"activation", activation_name(l.activation)},
                          {"weight", l.weight.data()},
                          {"bias", l.bias.data()}});
    }
    return {{"layer_sizes", model.layer_sizes()},
            {"normalize", model.normalize_output},
            {"layers", std::move(layers)}};
}

EmbeddingModel model_from_json(const nlohmann::json& j) {
    try {
        EmbeddingModel model;
        model.normalize_output = j.at("normalize").get<bool>();
        const auto sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
        const auto& layers = j.at("layers");
        require(sizes.size() == layers.size() + 1, ErrorKind::Config,
                "model json: layer_sizes does not match layer list");
        for (std::size_t k = 0; k < layers.size(); ++k) {
            const auto& lj = layers[k];
            DenseLayer l;
            l.weight = Matrix(sizes[k], sizes[k + 1], lj.at("weight").get<std::vector<double>>());
            l.bias = Matrix(1, sizes[k + 1], lj.at("bias").get<std::vector<double>>());
            l.activation = parse_activation(lj.at("activation").get<std::string>());
            model.layers.push_back(std::move(l));
        }
        model.validate();
        return model;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Config, std::string("model json: ") + e.what());
    }
}

}  // namespace rdml
