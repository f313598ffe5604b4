#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "mixsep/gradcheck.hpp"
#include "mixsep/objectives.hpp"
#include "mixsep/rng.hpp"

namespace mixsep::objectives {

// Finite-difference audit of the loss stack over a fixed B=2 feature batch,
// checked against every feature tensor and tau. The fixture seed is frozen to
// keep |.| and max(.) kinks out of central-difference reach (eps = 1e-3); the
// analytic subgradients at those kinks are exact but a straddling quotient is
// not a usable reference.
struct GradCheckReport {
  double cor = 0.0;
  double dis = 0.0;
  double total = 0.0;

  double worst() const { return std::max(cor, std::max(dis, total)); }
  bool pass(double tol = 1e-3) const { return worst() < tol; }
};

namespace gradsuite_detail {

constexpr std::size_t kC = 4, kK = 2, kF = 2, kT = 3, kH = 2, kW = 2;
constexpr std::uint64_t kFixtureSeed = 602;
constexpr double kTau = 0.85;

struct Fixture {
  std::vector<diffmath::BasicTensor<double>> a_sound, a_speech, a_mix, v_sound, v_speech;
};

inline diffmath::BasicTensor<double> random_feature(SplitRng& rng, bool audio) {
  diffmath::BasicTensor<double> t(audio ? diffmath::Shape{kC, kK, kF, kT} : diffmath::Shape{kC, kK, kH, kW});
  for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

inline Fixture make_fixture() {
  Fixture fx;
  SplitRng rng = SplitRng::keyed({kFixtureSeed});
  for (int i = 0; i < 2; ++i) {
    fx.a_sound.push_back(random_feature(rng, true));
    fx.a_speech.push_back(random_feature(rng, true));
    fx.a_mix.push_back(random_feature(rng, true));
    fx.v_sound.push_back(random_feature(rng, false));
    fx.v_speech.push_back(random_feature(rng, false));
  }
  return fx;
}

inline RegContext<double> make_reg_context() {
  RegContext<double> reg;
  reg.nonneg_samples = 16;
  reg.nonneg_seed = 9;
  reg.splice_mask_sound.assign(2, diffmath::BasicTensor<double>());
  reg.splice_mask_speech.assign(2, diffmath::BasicTensor<double>());
  reg.splice_mask_sound[1] = diffmath::BasicTensor<double>::of({kT}, {0.0, 1.0, 1.0});
  return reg;
}

inline BatchFeatures<double> bind_fixture(diffmath::Tape<double>& tape, const Fixture& fx, int slot,
                                          diffmath::Tape<double>::Var override_var) {
  BatchFeatures<double> batch;
  int s = 0;
  auto push = [&](const diffmath::BasicTensor<double>& t, std::vector<diffmath::Tape<double>::Var>& into) {
    into.push_back(s == slot ? override_var : tape.input(t));
    ++s;
  };
  for (int i = 0; i < 2; ++i) push(fx.a_sound[i], batch.audio_sound);
  for (int i = 0; i < 2; ++i) push(fx.a_speech[i], batch.audio_speech);
  for (int i = 0; i < 2; ++i) push(fx.a_mix[i], batch.audio_mix);
  for (int i = 0; i < 2; ++i) push(fx.v_sound[i], batch.visual_sound);
  for (int i = 0; i < 2; ++i) push(fx.v_speech[i], batch.visual_speech);
  return batch;
}

inline const diffmath::BasicTensor<double>& fixture_tensor(const Fixture& fx, int slot) {
  const int list = slot / 2, i = slot % 2;
  switch (list) {
    case 0: return fx.a_sound[i];
    case 1: return fx.a_speech[i];
    case 2: return fx.a_mix[i];
    case 3: return fx.v_sound[i];
    default: return fx.v_speech[i];
  }
}

}  // namespace gradsuite_detail

inline GradCheckReport run_loss_gradient_suite(double eps = 1e-3) {
  namespace gd = gradsuite_detail;
  const gd::Fixture fx = gd::make_fixture();
  const RegContext<double> reg = gd::make_reg_context();
  const LossOptions<double> opts;  // published weights, both main terms

  enum class Objective { Cor, Dis, Total };
  auto loss_of = [&](Objective which, diffmath::Tape<double>& tape, const BatchFeatures<double>& batch,
                     diffmath::Tape<double>::Var tau) {
    switch (which) {
      case Objective::Cor: return correspondence_loss(tape, batch, tau);
      case Objective::Dis: return disentanglement_loss(tape, batch, tau);
      default: return compute_losses(tape, batch, tau, opts, reg).total;
    }
  };

  auto check = [&](Objective which) {
    double worst = 0.0;
    for (int slot = 0; slot < 10; ++slot) {
      auto f = [&](diffmath::Tape<double>& tape, diffmath::Tape<double>::Var x) {
        auto batch = gd::bind_fixture(tape, fx, slot, x);
        auto tau = tape.constant(diffmath::BasicTensor<double>::scalar(gd::kTau));
        return loss_of(which, tape, batch, tau);
      };
      worst = std::max(worst, diffmath::finite_diff_check(f, gd::fixture_tensor(fx, slot), eps));
    }
    auto f_tau = [&](diffmath::Tape<double>& tape, diffmath::Tape<double>::Var x) {
      auto batch = gd::bind_fixture(tape, fx, -1, {});
      return loss_of(which, tape, batch, x);
    };
    worst = std::max(worst, diffmath::finite_diff_check(f_tau, diffmath::BasicTensor<double>::scalar(gd::kTau), eps));
    return worst;
  };

  GradCheckReport report;
  report.cor = check(Objective::Cor);
  report.dis = check(Objective::Dis);
  report.total = check(Objective::Total);
  return report;
}

}  // namespace mixsep::objectives
