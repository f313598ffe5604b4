#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <bit>
#include <cmath>
#include <vector>

#include "mixsep/gradcheck.hpp"
#include "mixsep/gradsuite.hpp"
#include "mixsep/objectives.hpp"
#include "mixsep/rng.hpp"

using namespace mixsep;
using namespace mixsep::diffmath;
using namespace mixsep::objectives;

namespace {

constexpr std::size_t kC = 4, kK = 2, kF = 2, kT = 3, kH = 2, kW = 2;

template <typename T>
BasicTensor<T> random_feature(SplitRng& rng, bool audio) {
  BasicTensor<T> t(audio ? Shape{kC, kK, kF, kT} : Shape{kC, kK, kH, kW});
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  return t;
}

template <typename T>
struct FixtureTensors {
  std::vector<BasicTensor<T>> a_sound, a_speech, a_mix, v_sound, v_speech;
};

template <typename T>
FixtureTensors<T> make_fixture(std::uint64_t seed, std::size_t b) {
  FixtureTensors<T> fx;
  SplitRng rng = SplitRng::keyed({seed});
  for (std::size_t i = 0; i < b; ++i) {
    fx.a_sound.push_back(random_feature<T>(rng, true));
    fx.a_speech.push_back(random_feature<T>(rng, true));
    fx.a_mix.push_back(random_feature<T>(rng, true));
    fx.v_sound.push_back(random_feature<T>(rng, false));
    fx.v_speech.push_back(random_feature<T>(rng, false));
  }
  return fx;
}

// Builds batch vars from the fixture; tensor #override_slot (in flattened
// order) is replaced by the supplied var so gradients can be checked per input.
template <typename T>
BatchFeatures<T> bind_fixture(Tape<T>& tape, const FixtureTensors<T>& fx, int override_slot = -1,
                              typename Tape<T>::Var override_var = {}) {
  BatchFeatures<T> batch;
  int slot = 0;
  auto push = [&](const BasicTensor<T>& t, std::vector<typename Tape<T>::Var>& into) {
    if (slot == override_slot) {
      into.push_back(override_var);
    } else {
      into.push_back(tape.input(t));
    }
    ++slot;
  };
  const std::size_t b = fx.a_sound.size();
  for (std::size_t i = 0; i < b; ++i) push(fx.a_sound[i], batch.audio_sound);
  for (std::size_t i = 0; i < b; ++i) push(fx.a_speech[i], batch.audio_speech);
  for (std::size_t i = 0; i < b; ++i) push(fx.a_mix[i], batch.audio_mix);
  for (std::size_t i = 0; i < b; ++i) push(fx.v_sound[i], batch.visual_sound);
  for (std::size_t i = 0; i < b; ++i) push(fx.v_speech[i], batch.visual_speech);
  return batch;
}

template <typename T>
const BasicTensor<T>& fixture_tensor(const FixtureTensors<T>& fx, int slot) {
  const std::size_t b = fx.a_sound.size();
  const std::size_t list = slot / b, i = slot % b;
  switch (list) {
    case 0: return fx.a_sound[i];
    case 1: return fx.a_speech[i];
    case 2: return fx.a_mix[i];
    case 3: return fx.v_sound[i];
    default: return fx.v_speech[i];
  }
}

// From-scratch double evaluation of the volume -> aggregate -> pooled -> nce
// pipeline, independent of the tape.
double oracle_pooled(const Tensor& a, const Tensor& v, int mode_head /* -1 = max across heads */) {
  const std::size_t C = a.extent(0), K = a.extent(1), F = a.extent(2), T = a.extent(3);
  const std::size_t H = v.extent(2), W = v.extent(3);
  double acc = 0;
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t t = 0; t < T; ++t) {
      double best = -1e300;
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
          double cell = -1e300;
          for (std::size_t k = 0; k < K; ++k) {
            if (mode_head >= 0 && static_cast<std::size_t>(mode_head) != k) continue;
            double dot = 0;
            for (std::size_t c = 0; c < C; ++c) {
              dot += static_cast<double>(a[((c * K + k) * F + f) * T + t]) *
                     static_cast<double>(v[((c * K + k) * H + h) * W + w]);
            }
            cell = std::max(cell, dot);
          }
          best = std::max(best, cell);
        }
      }
      acc += best;
    }
  }
  return acc / static_cast<double>(F * T);
}

double oracle_infonce(const std::vector<std::vector<double>>& scores, double tau) {
  const std::size_t B = scores.size();
  auto direction = [&](bool transpose) {
    double total = 0;
    for (std::size_t i = 0; i < B; ++i) {
      double mx = -1e300;
      for (std::size_t j = 0; j < B; ++j) mx = std::max(mx, (transpose ? scores[j][i] : scores[i][j]) / tau);
      double lse = 0;
      for (std::size_t j = 0; j < B; ++j) lse += std::exp((transpose ? scores[j][i] : scores[i][j]) / tau - mx);
      total += -((transpose ? scores[i][i] : scores[i][i]) / tau - mx - std::log(lse));
    }
    return total / static_cast<double>(B);
  };
  return 0.5 * (direction(false) + direction(true));
}

}  // namespace

TEST_CASE("infonce analytic identities") {
  // constant matrix -> log B
  for (std::size_t B : {2ul, 3ul, 5ul}) {
    Tensor scores(Shape{B, B}, 0.37f);
    CHECK(std::fabs(infonce_symmetric(scores, 1.0f) - std::log(static_cast<double>(B))) < 1e-6);
  }

  // identity matrix at tau=1
  Tensor eye = Tensor::of({2, 2}, {1, 0, 0, 1});
  CHECK(infonce_symmetric(eye, 1.0f) == Catch::Approx(std::log(1.0 + std::exp(-1.0))).margin(1e-6));

  // strongly diagonal matrix drives the loss to zero
  Tensor big(Shape{4, 4});
  for (std::size_t i = 0; i < 4; ++i) big[i * 4 + i] = 50.0f;
  CHECK(infonce_symmetric(big, 1.0f) < 1e-6);

  // tau <= 0 rejected
  Tape<float> tape;
  auto s = tape.input(eye);
  CHECK_THROWS_AS(infonce_symmetric(tape, s, tape.scalar(0.0f)), ShapeError);

  // duplicated samples stay finite
  Tensor dup = Tensor::of({2, 2}, {1, 1, 1, 1});
  CHECK(std::isfinite(infonce_symmetric(dup, 0.5f)));
}

TEST_CASE("infonce shift invariances") {
  SplitRng rng = SplitRng::keyed({600});
  Tensor scores(Shape{3, 3});
  for (auto& v : scores.data()) v = static_cast<float>(rng.uniform(-2, 2));

  // a->v direction is invariant to per-row constants
  Tensor shifted = scores;
  const std::array<float, 3> row_shift = {0.7f, -1.3f, 2.2f};
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) shifted[i * 3 + j] += row_shift[i];
  }
  Tape<float> t1, t2;
  auto d1 = t1.val(infonce_direction(t1, t1.input(scores), t1.scalar(1.0f)))[0];
  auto d2 = t2.val(infonce_direction(t2, t2.input(shifted), t2.scalar(1.0f)))[0];
  CHECK(d1 == Catch::Approx(d2).margin(1e-6));

  // the symmetric loss is invariant to a global constant
  Tensor global = scores;
  for (auto& v : global.data()) v += 1.9f;
  CHECK(infonce_symmetric(scores, 0.7f) == Catch::Approx(infonce_symmetric(global, 0.7f)).margin(1e-5));
}

TEST_CASE("correspondence and disentanglement losses match the compositional oracle") {
  auto fx = make_fixture<float>(601, 2);
  const float tau = 0.8f;

  Tape<float> tape;
  auto batch = bind_fixture(tape, fx);
  auto tau_var = tape.constant(Tensor::scalar(tau));
  const float cor = tape.val(correspondence_loss(tape, batch, tau_var))[0];
  const float dis = tape.val(disentanglement_loss(tape, batch, tau_var))[0];

  std::vector<std::vector<double>> sa(2, std::vector<double>(2)), sp = sa, ma = sa, mp = sa;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      sa[i][j] = oracle_pooled(fx.a_sound[i], fx.v_sound[j], -1);
      sp[i][j] = oracle_pooled(fx.a_speech[i], fx.v_speech[j], -1);
      ma[i][j] = oracle_pooled(fx.a_mix[i], fx.v_sound[j], model::kSoundHead);
      mp[i][j] = oracle_pooled(fx.a_mix[i], fx.v_speech[j], model::kSpeechHead);
    }
  }
  const double cor_oracle = oracle_infonce(sa, tau) + oracle_infonce(sp, tau);
  const double dis_oracle = oracle_infonce(ma, tau) + oracle_infonce(mp, tau);
  CHECK(cor == Catch::Approx(cor_oracle).margin(1e-5));
  CHECK(dis == Catch::Approx(dis_oracle).margin(1e-5));
}

TEST_CASE("losses with constant scores collapse to log B") {
  auto fx = make_fixture<float>(602, 3);
  // identical mixtures and identical images make every score matrix constant
  for (int i = 1; i < 3; ++i) {
    fx.a_mix[i] = fx.a_mix[0];
    fx.v_sound[i] = fx.v_sound[0];
    fx.v_speech[i] = fx.v_speech[0];
  }
  Tape<float> tape;
  auto batch = bind_fixture(tape, fx);
  const float dis = tape.val(disentanglement_loss(tape, batch, tape.scalar(1.0f)))[0];
  CHECK(dis == Catch::Approx(2.0 * std::log(3.0)).margin(1e-5));
}

TEST_CASE("regularizer examples") {
  Tape<float> t;

  // disentanglement regularizer
  {
    Tensor s(Shape{2, 1, 1, 1, 1});
    s[1] = 3.0f;
    CHECK(t.val(disentanglement_regularizer(t, t.input(s)))[0] == 0.0f);
    Tensor s2 = Tensor::of({2, 1, 1, 1, 1}, {2, 3});
    CHECK(t.val(disentanglement_regularizer(t, t.input(s2)))[0] == 6.0f);
    Tensor s3 = Tensor::of({2, 1, 1, 1, 1}, {2, -3});
    CHECK(t.val(disentanglement_regularizer(t, t.input(s3)))[0] == 6.0f);
    Tensor bad(Shape{3, 1, 1, 1, 1});
    CHECK_THROWS_AS(disentanglement_regularizer(t, t.input(bad)), ShapeError);
  }

  // splice regularizer
  {
    Tensor agg = Tensor::of({1, 1, 1, 1}, {2.0f});
    Tensor mask1 = Tensor::of({1}, {1.0f});
    CHECK(t.val(splice_regularizer(t, t.input(agg), mask1))[0] == 4.0f);
    Tensor mask0 = Tensor::of({1}, {0.0f});
    CHECK(t.val(splice_regularizer(t, t.input(agg), mask0))[0] == 0.0f);
    Tensor doubled = Tensor::of({1, 1, 1, 1}, {4.0f});
    CHECK(t.val(splice_regularizer(t, t.input(doubled), mask1))[0] == 16.0f);
  }

  // calibration regularizer
  {
    auto val = [&](float tau) {
      Tape<float> local;
      return local.val(calibration_regularizer(local, local.scalar(tau)))[0];
    };
    CHECK(val(1.0f) == 0.0f);
    CHECK(val(0.5f) == 0.0f);
    CHECK(val(2.0f) == Catch::Approx(std::log(2.0) * std::log(2.0)).margin(1e-6));
  }

  // non-negativity pressure
  {
    SplitRng rng = SplitRng::keyed({603});
    Tensor pos(Shape{2, 2}, 0.5f);
    auto vpos = t.input(pos);
    CHECK(t.val(nonneg_regularizer(t, {vpos}, 16, rng))[0] == 0.0f);
    Tensor neg = Tensor::of({1}, {-2.0f});
    auto vneg = t.input(neg);
    CHECK(t.val(nonneg_regularizer(t, {vneg}, 1, rng))[0] == 4.0f);
    Tensor zero = Tensor::of({1}, {0.0f});
    auto vzero = t.input(zero);
    CHECK(t.val(nonneg_regularizer(t, {vzero}, 4, rng))[0] == 0.0f);
  }

  // total variation
  {
    Tensor flat(Shape{2, 3, 1, 1}, 0.8f);
    CHECK(t.val(tv_regularizer(t, t.input(flat)))[0] == 0.0f);
    Tensor step = Tensor::of({1, 2, 1, 1}, {0, 1});
    CHECK(t.val(tv_regularizer(t, t.input(step)))[0] == 1.0f);
    SplitRng rng = SplitRng::keyed({604});
    Tensor r(Shape{2, 4, 1, 2});
    for (auto& v : r.data()) v = static_cast<float>(rng.uniform(-1, 1));
    Tensor rev = r;
    for (std::size_t f = 0; f < 2; ++f) {
      for (std::size_t tt = 0; tt < 4; ++tt) {
        for (std::size_t s = 0; s < 2; ++s) rev[(f * 4 + tt) * 2 + s] = r[(f * 4 + (3 - tt)) * 2 + s];
      }
    }
    CHECK(t.val(tv_regularizer(t, t.input(r)))[0] == Catch::Approx(t.val(tv_regularizer(t, t.input(rev)))[0]));
    Tensor short_t(Shape{2, 1, 1, 1});
    CHECK_THROWS_AS(tv_regularizer(t, t.input(short_t)), ShapeError);
  }
}

TEST_CASE("loss weights default to the published constants") {
  LossWeights<float> w;
  CHECK(w.splice == 0.01f);
  CHECK(w.cal == 0.1f);
  CHECK(w.nonneg == 0.01f);
  CHECK(w.tv == 0.01f);
  CHECK(w.disreg == 0.05f);
}

TEST_CASE("total loss with zero weights is bitwise cor + dis") {
  auto fx = make_fixture<float>(605, 2);
  RegContext<float> reg;
  reg.nonneg_samples = 8;

  LossOptions<float> opts;
  opts.weights = LossWeights<float>{0, 0, 0, 0, 0};

  Tape<float> t1;
  auto b1 = bind_fixture(t1, fx);
  auto tau1 = t1.constant(Tensor::scalar(0.9f));
  auto breakdown = compute_losses(t1, b1, tau1, opts, reg);
  const float total = t1.val(breakdown.total)[0];

  Tape<float> t2;
  auto b2 = bind_fixture(t2, fx);
  auto tau2 = t2.constant(Tensor::scalar(0.9f));
  const float direct = t2.val(t2.add(correspondence_loss(t2, b2, tau2), disentanglement_loss(t2, b2, tau2)))[0];

  CHECK(std::bit_cast<std::uint32_t>(total) == std::bit_cast<std::uint32_t>(direct));
}

TEST_CASE("total loss reproduces the weighted sum of its breakdown") {
  auto fx = make_fixture<float>(606, 2);
  RegContext<float> reg;
  reg.nonneg_samples = 16;
  reg.nonneg_seed = 5;
  reg.splice_mask_sound.assign(2, Tensor());
  reg.splice_mask_speech.assign(2, Tensor());
  reg.splice_mask_sound[0] = Tensor::of({kT}, {0.0f, 1.0f, 0.5f});
  reg.splice_mask_speech[1] = Tensor::of({kT}, {1.0f, 0.0f, 0.0f});

  LossOptions<float> opts;  // published weights
  Tape<float> tape;
  auto batch = bind_fixture(tape, fx);
  auto tau = tape.constant(Tensor::scalar(1.4f));
  auto breakdown = compute_losses(tape, batch, tau, opts, reg);

  const double expected = static_cast<double>(tape.val(breakdown.cor)[0]) + tape.val(breakdown.dis)[0] +
                          0.05 * tape.val(breakdown.disreg)[0] + 0.01 * tape.val(breakdown.splice)[0] +
                          0.1 * tape.val(breakdown.cal)[0] + 0.01 * tape.val(breakdown.nonneg)[0] +
                          0.01 * tape.val(breakdown.tv)[0];
  CHECK(tape.val(breakdown.total)[0] == Catch::Approx(expected).margin(1e-5));
  CHECK(tape.val(breakdown.cal)[0] > 0.0f);     // tau = 1.4 is penalized
  CHECK(tape.val(breakdown.splice)[0] >= 0.0f);
}

TEST_CASE("loss gradients match finite differences") {
  const auto report = run_loss_gradient_suite();
  CHECK(report.cor < 1e-3);
  CHECK(report.dis < 1e-3);
  CHECK(report.total < 1e-3);
  CHECK(report.pass());
}

TEST_CASE("ablation arms drop exactly one main term") {
  auto fx = make_fixture<float>(608, 2);
  RegContext<float> reg;
  reg.nonneg_samples = 8;
  LossOptions<float> cor_only;
  cor_only.include_dis = false;
  cor_only.weights = LossWeights<float>{0, 0, 0, 0, 0};
  LossOptions<float> dis_only;
  dis_only.include_cor = false;
  dis_only.weights = LossWeights<float>{0, 0, 0, 0, 0};

  Tape<float> tape;
  auto batch = bind_fixture(tape, fx);
  auto tau = tape.constant(Tensor::scalar(1.0f));
  auto a = compute_losses(tape, batch, tau, cor_only, reg);
  auto b = compute_losses(tape, batch, tau, dis_only, reg);
  CHECK(tape.val(a.total)[0] == tape.val(a.cor)[0]);
  CHECK(tape.val(b.total)[0] == tape.val(b.dis)[0]);
}
