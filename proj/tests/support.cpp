#include "support.hpp"

namespace diffsos::testing {

namespace {

std::size_t pick(RandomStream& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

} // namespace

std::vector<PrimitiveCase> primitive_cases() {
    std::vector<PrimitiveCase> c;
    auto shape4 = [](RandomStream& rng) {
        return Shape{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, 5), pick(rng, 2, 5)};
    };

    c.push_back({"add",
                 [=](RandomStream& rng, std::size_t) {
                     const Shape s = shape4(rng);
                     return std::vector<Tensor>{random_tensor(s, rng, -1, 1, true), random_tensor(s, rng, -1, 1, true)};
                 },
                 [](const std::vector<Tensor>& x) { return add(x[0], x[1]); }});
    c.push_back({"sub",
                 [=](RandomStream& rng, std::size_t) {
                     const Shape s = shape4(rng);
                     return std::vector<Tensor>{random_tensor(s, rng, -1, 1, true), random_tensor(s, rng, -1, 1, true)};
                 },
                 [](const std::vector<Tensor>& x) { return sub(x[0], x[1]); }});
    c.push_back({"mul",
                 [=](RandomStream& rng, std::size_t) {
                     const Shape s = shape4(rng);
                     return std::vector<Tensor>{random_tensor(s, rng, -1, 1, true), random_tensor(s, rng, -1, 1, true)};
                 },
                 [](const std::vector<Tensor>& x) { return mul(x[0], x[1]); }});
    c.push_back({"mul_scalar",
                 [=](RandomStream& rng, std::size_t) { return std::vector<Tensor>{random_tensor(shape4(rng), rng, -1, 1, true)}; },
                 [](const std::vector<Tensor>& x) { return mul(x[0], -1.7); }});
    c.push_back({"add_scalar",
                 [=](RandomStream& rng, std::size_t) { return std::vector<Tensor>{random_tensor(shape4(rng), rng, -1, 1, true)}; },
                 [](const std::vector<Tensor>& x) { return square(add_scalar(x[0], 0.3)); }});
    c.push_back({"matmul",
                 [](RandomStream& rng, std::size_t) {
                     const std::size_t m = pick(rng, 1, 5), k = pick(rng, 1, 5), n = pick(rng, 1, 5);
                     return std::vector<Tensor>{random_tensor({m, k}, rng, -1, 1, true),
                                                random_tensor({k, n}, rng, -1, 1, true)};
                 },
                 [](const std::vector<Tensor>& x) { return matmul(x[0], x[1]); }});
    c.push_back({"linear",
                 [](RandomStream& rng, std::size_t) {
                     const std::size_t n = pick(rng, 1, 4), in = pick(rng, 1, 6), out = pick(rng, 1, 5);
                     return std::vector<Tensor>{random_tensor({n, in}, rng, -1, 1, true),
                                                random_tensor({out, in}, rng, -1, 1, true),
                                                random_tensor({out}, rng, -1, 1, true)};
                 },
                 [](const std::vector<Tensor>& x) { return linear(x[0], x[1], x[2]); }});
    c.push_back({"conv2d",
                 [](RandomStream& rng, std::size_t) {
                     const std::size_t n = pick(rng, 1, 2), ci = pick(rng, 1, 3), co = pick(rng, 1, 3);
                     const std::size_t k = rng.below(2) == 0 ? 1 : 3;
                     return std::vector<Tensor>{random_tensor({n, ci, pick(rng, 3, 6), pick(rng, 3, 6)}, rng, -1, 1, true),
                                                random_tensor({co, ci, k, k}, rng, -1, 1, true),
                                                random_tensor({co}, rng, -1, 1, true),
                                                // options ride along as a constant tensor
                                                Tensor::from({4}, {double(pick(rng, 1, 2)), double(pick(rng, 1, 2)),
                                                                   double(k == 3 ? pick(rng, 0, 1) : 0),
                                                                   double(k == 3 ? pick(rng, 0, 1) : 0)})};
                 },
                 [](const std::vector<Tensor>& x) {
                     const auto o = x[3].data();
                     return conv2d(x[0], x[1], x[2],
                                   {std::size_t(o[0]), std::size_t(o[1]), std::size_t(o[2]), std::size_t(o[3])});
                 }});
    c.push_back({"silu",
                 [=](RandomStream& rng, std::size_t) { return std::vector<Tensor>{random_tensor(shape4(rng), rng, -3, 3, true)}; },
                 [](const std::vector<Tensor>& x) { return silu(x[0]); }});
    c.push_back({"group_norm",
                 [](RandomStream& rng, std::size_t) {
                     const std::size_t g = pick(rng, 1, 2), cpg = pick(rng, 1, 3);
                     const std::size_t ch = g * cpg;
                     return std::vector<Tensor>{random_tensor({pick(rng, 1, 2), ch, pick(rng, 2, 4), pick(rng, 2, 4)}, rng, -2, 2, true),
                                                random_tensor({ch}, rng, 0.5, 1.5, true),
                                                random_tensor({ch}, rng, -0.5, 0.5, true),
                                                Tensor::scalar(double(g))};
                 },
                 [](const std::vector<Tensor>& x) {
                     return group_norm(x[0], std::size_t(x[3].item()), x[1], x[2]);
                 }});
    c.push_back({"upsample_nearest2x",
                 [=](RandomStream& rng, std::size_t) { return std::vector<Tensor>{random_tensor(shape4(rng), rng, -1, 1, true)}; },
                 [](const std::vector<Tensor>& x) { return upsample_nearest2x(x[0]); }});
    c.push_back({"downsample_strided2x",
                 [=](RandomStream& rng, std::size_t) { return std::vector<Tensor>{random_tensor(shape4(rng), rng, -1, 1, true)}; },
                 [](const std::vector<Tensor>& x) { return downsample_strided2x(x[0]); }});
    c.push_back({"adaptive_avg_pool2d",
                 [](RandomStream& rng, std::size_t) {
                     return std::vector<Tensor>{
                         random_tensor({pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 2, 9), pick(rng, 2, 9)}, rng, -1, 1, true),
                         Tensor::from({2}, {double(pick(rng, 1, 4)), double(pick(rng, 1, 4))})};
                 },
                 [](const std::vector<Tensor>& x) {
                     return adaptive_avg_pool2d(x[0], std::size_t(x[1][0]), std::size_t(x[1][1]));
                 }});
    c.push_back({"concat_channels",
                 [](RandomStream& rng, std::size_t) {
                     const std::size_t n = pick(rng, 1, 2), h = pick(rng, 2, 4), w = pick(rng, 2, 4);
                     return std::vector<Tensor>{random_tensor({n, pick(rng, 1, 3), h, w}, rng, -1, 1, true),
                                                random_tensor({n, pick(rng, 1, 3), h, w}, rng, -1, 1, true)};
                 },
                 [](const std::vector<Tensor>& x) { return concat_channels(x[0], x[1]); }});
    c.push_back({"add_channelwise",
                 [](RandomStream& rng, std::size_t) {
                     const std::size_t n = pick(rng, 1, 3), ch = pick(rng, 1, 4);
                     return std::vector<Tensor>{random_tensor({n, ch, pick(rng, 1, 4), pick(rng, 1, 4)}, rng, -1, 1, true),
                                                random_tensor({n, ch}, rng, -1, 1, true)};
                 },
                 [](const std::vector<Tensor>& x) { return add_channelwise(x[0], x[1]); }});
    c.push_back({"reshape",
                 [=](RandomStream& rng, std::size_t) { return std::vector<Tensor>{random_tensor(shape4(rng), rng, -1, 1, true)}; },
                 [](const std::vector<Tensor>& x) { return square(reshape(x[0], {x[0].numel()})); }});
    c.push_back({"sum",
                 [=](RandomStream& rng, std::size_t) { return std::vector<Tensor>{random_tensor(shape4(rng), rng, -1, 1, true)}; },
                 [](const std::vector<Tensor>& x) { return sum(square(x[0])); }});
    c.push_back({"mean",
                 [=](RandomStream& rng, std::size_t) { return std::vector<Tensor>{random_tensor(shape4(rng), rng, -1, 1, true)}; },
                 [](const std::vector<Tensor>& x) { return mean(square(x[0])); }});
    c.push_back({"abs",
                 [=](RandomStream& rng, std::size_t) { return std::vector<Tensor>{random_away_from_zero(shape4(rng), rng, 0.05, 1.0)}; },
                 [](const std::vector<Tensor>& x) { return abs(x[0]); }});
    c.push_back({"square",
                 [=](RandomStream& rng, std::size_t) { return std::vector<Tensor>{random_tensor(shape4(rng), rng, -2, 2, true)}; },
                 [](const std::vector<Tensor>& x) { return square(x[0]); }});
    c.push_back({"sqrt",
                 [=](RandomStream& rng, std::size_t) { return std::vector<Tensor>{random_tensor(shape4(rng), rng, 0.2, 3.0, true)}; },
                 [](const std::vector<Tensor>& x) { return sqrt(x[0]); }});
    c.push_back({"dft2_modulus",
                 [](RandomStream& rng, std::size_t) {
                     return std::vector<Tensor>{
                         random_tensor({pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 2, 6), pick(rng, 2, 6)}, rng, -1, 1, true)};
                 },
                 [](const std::vector<Tensor>& x) { return dft2_modulus(x[0]); }});
    return c;
}

} // namespace diffsos::testing
