#include <cmath>

#include <gtest/gtest.h>

#include "sphereat/errors.hpp"
#include "support.hpp"

using namespace sphereat;
using fixtures::head;

namespace {

double entropy(const Tensor& p) {
  double h = 0;
  for (double v : p.storage())
    if (v > 0) h -= v * std::log(v);
  return h / static_cast<double>(p.dim(0));
}

Tensor random_probs(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t = fixtures::uniform_tensor({rows, cols}, rng, -3, 3);
  return softmax_rows(t);
}

}  // namespace

TEST(CeLoss, ClosedFormValues) {
  // ln(1 + e^-2), 40-digit evaluation
  EXPECT_NEAR(ce_loss(Tensor::matrix(1, 2, {2, 0}), {0}), 0.1269280110429724964, 1e-15);
  EXPECT_NEAR(ce_loss(Tensor::matrix(2, 4, {0, 0, 0, 0, 7, 7, 7, 7}), {1, 3}), std::log(4.0), 1e-15);
  EXPECT_NEAR(ce_loss(Tensor::matrix(1, 3, {0, 1000, 0}), {1}), 0.0, 1e-300);
}

TEST(CeLoss, LabelOutOfRangeIsAContractViolation) {
  EXPECT_THROW(ce_loss(Tensor::matrix(1, 2, {1, 2}), {2}), ContractViolation);
  EXPECT_THROW(ce_loss(Tensor::matrix(1, 2, {1, 2}), {-1}), ContractViolation);
  EXPECT_THROW(ce_loss(Tensor::matrix(2, 2, {1, 2, 3, 4}), {0}), ContractViolation);
}

TEST(CeLoss, TapeAndTensorFormsAgree) {
  Rng rng(2);
  Tensor logits = fixtures::uniform_tensor({5, 4}, rng, -2, 2);
  Labels y = fixtures::random_labels(5, 4, rng);
  diff::Tape tape;
  EXPECT_NEAR(ce_loss(tape.constant(logits), y).value().item(), ce_loss(logits, y), 1e-14);
}

TEST(CeBetween, IdenticalDistributionsGiveEntropyAndOneHotGivesCe) {
  Rng rng(5);
  Tensor p = random_probs(3, 4, rng);
  EXPECT_NEAR(ce_between(p, p), entropy(p), 1e-14);
  Tensor logits = fixtures::uniform_tensor({2, 3}, rng, -2, 2);
  Tensor q = softmax_rows(logits);
  EXPECT_NEAR(ce_between(q, one_hot({2, 0}, 3)), ce_loss(logits, {2, 0}), 1e-14);
}

TEST(CeBetween, GibbsInequalityOnRandomPairs) {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    Tensor p = random_probs(1, 5, rng), q = random_probs(1, 5, rng);
    EXPECT_GT(ce_between(q, p) - entropy(p), 0.0);
    EXPECT_NEAR(ce_between(p, p) - entropy(p), 0.0, 1e-14);
  }
}

TEST(CeBetween, NonProbabilityRowsAreRejected) {
  EXPECT_THROW(ce_between(Tensor::matrix(1, 2, {0.5, 0.5}), Tensor::matrix(1, 2, {0.7, 0.7})), ContractViolation);
  EXPECT_THROW(ce_between(Tensor::matrix(1, 2, {0.5, 0.5}), Tensor::matrix(1, 2, {1.5, -0.5})), ContractViolation);
}

TEST(MarginCe, BinaryClosedForm) {
  // ln(1 + e^-27), 40-digit evaluation
  const double v = margin_ce_loss(Tensor::matrix(1, 2, {1, -1}), {0}, head(HeadMode::he, 15.0, 0.2));
  EXPECT_NEAR(v, 1.879528816537316980e-12, 1e-24);
}

TEST(MarginCe, DegenerateMarginMatchesPlainCe) {
  Rng rng(21);
  Tensor scores = fixtures::uniform_tensor({6, 4}, rng, -1, 1);
  Labels y = fixtures::random_labels(6, 4, rng);
  EXPECT_LT(std::abs(margin_ce_loss(scores, y, head(HeadMode::he, 1.0, 0.0)) - ce_loss(scores, y)), 1e-12);
}

TEST(MarginCe, IncreasesWithMargin) {
  Rng rng(22);
  for (int i = 0; i < 20; ++i) {
    Tensor scores = fixtures::uniform_tensor({3, 5}, rng, -1, 1);
    Labels y = fixtures::random_labels(3, 5, rng);
    EXPECT_GT(margin_ce_loss(scores, y, head(HeadMode::he, 15.0, 0.3)),
              margin_ce_loss(scores, y, head(HeadMode::he, 15.0, 0.1)));
  }
}

TEST(MarginCe, WrongHeadModeIsAContractViolation) {
  EXPECT_THROW(margin_ce_loss(Tensor::matrix(1, 2, {1, 0}), {0}, head(HeadMode::standard)), ContractViolation);
}

TEST(PairingNorm, ThreeFourAndZero) {
  Tensor I = Tensor::matrix(2, 2, {1, 0, 0, 1});
  EXPECT_DOUBLE_EQ(pairing_norm(I, Tensor::matrix(1, 2, {3, 4}), Tensor::matrix(1, 2, {0, 0})), 5.0);
  EXPECT_EQ(pairing_norm(I, Tensor::matrix(1, 2, {3, 4}), Tensor::matrix(1, 2, {3, 4})), 0.0);
  EXPECT_THROW(pairing_norm(I, Tensor::matrix(1, 2, {3, 4}), Tensor::matrix(1, 3, {3, 4, 0})), ContractViolation);
}

TEST(PairingNorm, RotationInvariant) {
  Rng rng(31);
  Tensor W = fixtures::uniform_tensor({2, 3}, rng, -1, 1);
  Tensor z1 = fixtures::uniform_tensor({4, 2}, rng, -1, 1), z2 = fixtures::uniform_tensor({4, 2}, rng, -1, 1);
  const double c = std::cos(1.1), s = std::sin(1.1);
  auto rotate_rows = [&](const Tensor& t) {
    Tensor o = t;
    for (std::size_t r = 0; r < t.dim(0); ++r) {
      o.at(r, 0) = c * t.at(r, 0) - s * t.at(r, 1);
      o.at(r, 1) = s * t.at(r, 0) + c * t.at(r, 1);
    }
    return o;
  };
  // W's rows live in feature space: rotate its columns' feature coordinates
  Tensor Wr = W;
  for (std::size_t j = 0; j < 3; ++j) {
    Wr.at(0, j) = c * W.at(0, j) - s * W.at(1, j);
    Wr.at(1, j) = s * W.at(0, j) + c * W.at(1, j);
  }
  EXPECT_NEAR(pairing_norm(Wr, rotate_rows(z1), rotate_rows(z2)), pairing_norm(W, z1, z2), 1e-14);
}

TEST(CwInf, Examples) {
  EXPECT_EQ(cw_inf_objective(Tensor::matrix(1, 2, {5, 1}), {0}), 4.0);
  EXPECT_EQ(cw_inf_objective(Tensor::matrix(1, 2, {1, 5}), {0}), 0.0);
  EXPECT_EQ(cw_inf_objective(Tensor::matrix(1, 3, {2, 2, 0}), {0}), 0.0);
}

class Composites : public ::testing::TestWithParam<HeadMode> {};

TEST_P(Composites, DegenerateCases) {
  const HeadConfig h = head(GetParam());
  Rng rng(41);
  ModelParams p = fixtures::random_mlp(4, {6}, 3, 3, 41);
  const Tensor xc = fixtures::uniform_tensor({5, 4}, rng);
  Tensor xa = xc;
  for (auto& v : xa.storage()) v += rng.uniform(-0.1, 0.1);
  const Labels y = fixtures::random_labels(5, 3, rng);
  auto label_term = [&](const Tensor& x) {
    Tensor s = model_scores(p, h, x);
    return h.hypersphere() ? margin_ce_loss(s, y, h) : ce_loss(s, y);
  };
  const double clean = label_term(xc);

  EXPECT_NEAR(fixtures::training_loss_value(pgdat_objective(h), p, xc, xc, y), clean, 1e-13);
  EXPECT_NEAR(fixtures::training_loss_value(pgdat_objective(h), p, xc, xa, y), label_term(xa), 1e-13);
  EXPECT_NEAR(fixtures::training_loss_value(trades_objective(h, 0.0), p, xc, xa, y), clean, 1e-13);
  EXPECT_NEAR(fixtures::training_loss_value(alp_objective(h, 1.0, 0.0), p, xc, xa, y), clean, 1e-13);
  // pairing term vanishes when the adversarial batch equals the clean one
  EXPECT_NEAR(fixtures::training_loss_value(alp_objective(h, 0.5, 0.5), p, xc, xc, y), clean, 1e-13);
  for (auto& [name, spec] : fixtures::training_rows(h)) {
    const double v = fixtures::training_loss_value(spec, p, xc, xa, y);
    EXPECT_TRUE(std::isfinite(v)) << name;
    EXPECT_GE(v, 0.0) << name;
  }
}

INSTANTIATE_TEST_SUITE_P(AllHeads, Composites, ::testing::ValuesIn(fixtures::all_heads()),
                         [](const auto& info) {
                           std::string s(to_string(info.param));
                           std::erase(s, '-');
                           return s;
                         });

TEST(AdversarialLoss, HeRowIsPlainCeOverCosines) {
  const HeadConfig h = head(HeadMode::he);
  Rng rng(51);
  ModelParams p = fixtures::random_mlp(4, {6}, 3, 3, 51);
  const Tensor x = fixtures::uniform_tensor({5, 4}, rng);
  const Labels y = fixtures::random_labels(5, 3, rng);
  const ObjectiveSpec la = attack_objective_for(pgdat_objective(h));
  EXPECT_EQ(la.kind, ObjectiveKind::ce_vs_label);
  EXPECT_NEAR(adversarial_loss(la, p, x, x, y), ce_loss(model_scores(p, h, x), y), 1e-14);

  ObjectiveSpec adaptive = la;
  adaptive.kind = ObjectiveKind::margin_ce;
  EXPECT_NEAR(adversarial_loss(adaptive, p, x, x, y), margin_ce_loss(model_scores(p, h, x), y, h), 1e-14);
  EXPECT_GT(std::abs(adversarial_loss(adaptive, p, x, x, y) - adversarial_loss(la, p, x, x, y)), 1e-3);
}

TEST(AdversarialLoss, TradesTargetIsTheFrozenCleanPrediction) {
  const HeadConfig h = head(HeadMode::standard);
  Rng rng(52);
  ModelParams p = fixtures::random_mlp(4, {6}, 3, 3, 52);
  const Tensor xc = fixtures::uniform_tensor({5, 4}, rng);
  Tensor xa = xc;
  for (auto& v : xa.storage()) v += 0.05;
  const Labels y = fixtures::random_labels(5, 3, rng);
  const ObjectiveSpec la = attack_objective_for(trades_objective(h));
  EXPECT_EQ(la.kind, ObjectiveKind::ce_vs_prediction);
  const Tensor target = clean_target(la, p, xc);
  EXPECT_NEAR(adversarial_loss(la, p, xa, xc, y), ce_between(softmax_rows(model_scores(p, h, xa)), target), 1e-14);
  EXPECT_NEAR(adversarial_loss(la, p, xc, xc, y), entropy(target), 1e-14);
}

TEST(AdversarialLoss, ConfidentPointGivesSmallPositiveCe) {
  ModelParams p = fixtures::random_mlp(2, {4}, 2, 2, 3);
  const Tensor x = Tensor::matrix(1, 2, {0.3, 0.6});
  const Tensor s = model_scores(p, head(HeadMode::standard), x);
  const int y = s.at(0, 0) >= s.at(0, 1) ? 0 : 1;
  // push the logits far apart by scaling W
  for (auto& v : p.W().storage()) v *= 50.0;
  const double v = adversarial_loss(attack_objective_for(pgdat_objective(head(HeadMode::standard))), p, x, x, {y});
  EXPECT_GT(v, 0.0);
  EXPECT_LT(v, 0.1);
}

TEST(ObjectiveSpec, ParsingAndValidation) {
  EXPECT_EQ(parse_objective_kind("cw-inf"), ObjectiveKind::cw_inf);
  EXPECT_THROW(parse_objective_kind("hinge"), ContractViolation);
  ObjectiveSpec s = alp_objective(head(HeadMode::he), 1.5, 0.5);
  EXPECT_THROW(s.validate(), ContractViolation);
  s = trades_objective(head(HeadMode::he), -1.0);
  EXPECT_THROW(s.validate(), ContractViolation);
}
