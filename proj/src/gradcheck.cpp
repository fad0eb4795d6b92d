#include "fdseg/gradcheck.hpp"

#include <functional>
#include <map>
#include <random>

#include "fdseg/losses.hpp"

namespace fdseg {

double relative_error(const Vec<double>& a, const Vec<double>& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

namespace {

Vec<double> central_difference(Vec<double> x, double step, const std::function<double(const Vec<double>&)>& f) {
  Vec<double> g(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = f(x);
    x[i] = orig - step;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

Vec<double> flat(const ScalarGrid& g) { return Eigen::Map<const Vec<double>>(g.data(), g.size()); }

ScalarGrid unflat(const Vec<double>& v, Index h, Index w) { return Eigen::Map<const ScalarGrid>(v.data(), h, w); }

struct Instance {
  BinaryMask gt;
  ScalarGrid pred;
  ScalarGrid target_fd;
  ScalarGrid pred_fd;
};

Instance random_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dim(3, 9);
  std::uniform_real_distribution<double> prob(0.05, 0.95), fd(1.8, 3.0);
  std::bernoulli_distribution coin(0.4);
  const Index h = dim(rng), w = dim(rng);
  Instance in{BinaryMask(h, w), ScalarGrid(h, w), ScalarGrid(h, w), ScalarGrid(h, w)};
  for (Index i = 0; i < h * w; ++i) {
    in.gt.data()[i] = coin(rng) ? 1 : 0;
    in.pred.data()[i] = prob(rng);
    in.target_fd.data()[i] = fd(rng);
    in.pred_fd.data()[i] = fd(rng);
  }
  return in;
}


}  // namespace

std::vector<ToyNetConfig> gradcheck_net_configs() {
  ToyNetConfig one;
  one.stages = 1;
  one.stage_channels = {2};
  one.kernel_size = 7;
  one.expansion = 4;
  one.input_h = one.input_w = 8;
  ToyNetConfig two;
  two.stages = 2;
  two.stage_channels = {3, 4};
  two.kernel_size = 3;
  two.expansion = 2;
  two.input_h = two.input_w = 8;
  return {one, two};
}

std::string parameter_family(const std::string& name) {
  if (name.starts_with("stem")) return "stem";
  if (name.starts_with("down")) return "downsample";
  if (name.starts_with("dec")) return "decoder";
  if (name.find("head") != std::string::npos) return "head";
  if (name.find(".dw.") != std::string::npos) return "depthwise";
  if (name.find(".ln.") != std::string::npos) return "layernorm";
  if (name.find(".pw") != std::string::npos) return "pointwise";
  return "other";
}

std::vector<GradcheckEntry> run_gradcheck(const GradcheckOptions& opt) {
  std::vector<GradcheckEntry> report;
  const double eps = 1e-6, clamp = 1e-7;

  // Each loss suite differentiates w.r.t. one flattened grid of an instance.
  struct LossCase {
    std::string name;
    std::function<Vec<double>(const Instance&)> point;
    std::function<double(const Instance&, const Vec<double>&)> value;
    std::function<Vec<double>(const Instance&)> analytic;
  };
  LossConfig hybrid_cfg;
  hybrid_cfg.lambda_fd = 0.1;
  hybrid_cfg.include_bce = true;
  const auto seg_at = [](const Instance& in, const Vec<double>& v) { return unflat(v, in.gt.rows(), in.gt.cols()); };
  std::vector<LossCase> cases = {
      {"loss.dice", [](const Instance& in) { return flat(in.pred); },
       [&](const Instance& in, const Vec<double>& v) { return dice_loss_and_grad(in.gt, seg_at(in, v), eps).loss; },
       [&](const Instance& in) {
         Vec<double> g = flat(dice_loss_and_grad(in.gt, in.pred, eps).grad);
         if (opt.corrupt) g[0] += 1e-2 * (g.norm() + 1.0);
         return g;
       }},
      {"loss.fd_mse", [](const Instance& in) { return flat(in.pred_fd); },
       [&](const Instance& in, const Vec<double>& v) { return fd_mse_and_grad(in.target_fd, seg_at(in, v)).loss; },
       [](const Instance& in) { return flat(fd_mse_and_grad(in.target_fd, in.pred_fd).grad); }},
      {"loss.bce", [](const Instance& in) { return flat(in.pred); },
       [&](const Instance& in, const Vec<double>& v) { return bce_and_grad(in.gt, seg_at(in, v), clamp).loss; },
       [&](const Instance& in) { return flat(bce_and_grad(in.gt, in.pred, clamp).grad); }},
      {"loss.hybrid.seg", [](const Instance& in) { return flat(in.pred); },
       [&](const Instance& in, const Vec<double>& v) {
         return hybrid_loss(in.gt, seg_at(in, v), in.target_fd, in.pred_fd, hybrid_cfg).value.total;
       },
       [&](const Instance& in) { return flat(hybrid_loss(in.gt, in.pred, in.target_fd, in.pred_fd, hybrid_cfg).seg_grad); }},
      {"loss.hybrid.fd", [](const Instance& in) { return flat(in.pred_fd); },
       [&](const Instance& in, const Vec<double>& v) {
         return hybrid_loss(in.gt, in.pred, in.target_fd, seg_at(in, v), hybrid_cfg).value.total;
       },
       [&](const Instance& in) { return flat(hybrid_loss(in.gt, in.pred, in.target_fd, in.pred_fd, hybrid_cfg).fd_grad); }},
  };

  std::uint64_t salt = 0;
  for (const auto& c : cases) {
    std::mt19937_64 rng(opt.seed * 1000003ULL + salt++);
    GradcheckEntry e{c.name, opt.loss_instances, 0.0, opt.loss_tolerance};
    for (int k = 0; k < opt.loss_instances; ++k) {
      const Instance in = random_instance(rng);
      const Vec<double> numeric =
          central_difference(c.point(in), opt.step, [&](const Vec<double>& v) { return c.value(in, v); });
      e.max_rel_error = std::max(e.max_rel_error, relative_error(c.analytic(in), numeric));
    }
    report.push_back(e);
  }

  // Network: f(theta) = sum(a * seg_prob) + sum(b * fd_pred) for random a, b.
  std::map<std::string, GradcheckEntry> families;
  for (const auto& cfg : gradcheck_net_configs()) {
    std::mt19937_64 rng(opt.seed * 1000003ULL + salt++);
    std::uniform_real_distribution<double> u(-1.0, 1.0), pixel(0.0, 1.0);
    for (int k = 0; k < opt.net_instances; ++k) {
      ToyNetParams<double> params = init_params(cfg, rng());
      for (const auto& slot : params.layout.slots()) {
        if (!slot.name.ends_with(".w")) {
          auto v = params.slice(slot.name);
          for (Index i = 0; i < v.size(); ++i) v.data()[i] += 0.3 * u(rng);
        }
      }
      ScalarGrid image(cfg.input_h, cfg.input_w);
      for (Index i = 0; i < image.size(); ++i) image.data()[i] = pixel(rng);
      ScalarGrid a(cfg.input_h, cfg.input_w), b(cfg.input_h, cfg.input_w);
      for (Index i = 0; i < a.size(); ++i) {
        a.data()[i] = u(rng);
        b.data()[i] = u(rng);
      }
      const auto objective = [&](const Vec<double>& theta) {
        ToyNetParams<double> p = params;
        p.values = theta;
        const auto out = forward(image, p);
        return (a * out.seg_prob).sum() + (b * out.fd_pred).sum();
      };
      const auto fwd = forward(image, params);
      const Vec<double> analytic = backward(fwd.trace, a, b, params);
      const Vec<double> numeric = central_difference(params.values, opt.step, objective);
      std::map<std::string, std::pair<Vec<double>, Vec<double>>> by_family;
      for (const auto& slot : params.layout.slots()) {
        auto& [an, nu] = by_family[parameter_family(slot.name)];
        const Index old = an.size();
        an.conservativeResize(old + slot.size());
        nu.conservativeResize(old + slot.size());
        an.segment(old, slot.size()) = analytic.segment(slot.offset, slot.size());
        nu.segment(old, slot.size()) = numeric.segment(slot.offset, slot.size());
      }
      for (const auto& [fam, pair] : by_family) {
        auto& e = families.try_emplace(fam, GradcheckEntry{"net." + fam, 0, 0.0, opt.net_tolerance}).first->second;
        ++e.instances;
        e.max_rel_error = std::max(e.max_rel_error, relative_error(pair.first, pair.second));
      }
    }
  }
  for (auto& [_, e] : families) report.push_back(e);
  return report;
}

}  // namespace fdseg
