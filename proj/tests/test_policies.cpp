#include <gtest/gtest.h>

#include <vector>

#include "searnn/policies.hpp"
#include "testing_util.hpp"

using namespace searnn;
using searnn::testing_util::ModelFixture;

namespace {

// vocab 7 = reserved + content {3,4,5,6}
ModelFixture make_fixture(std::uint64_t seed = 11) { return ModelFixture(7, 3, 4, 8, seed); }

const std::vector<int> kSrc{3, 5, 6, 4};
const std::vector<int> kGt{3, 4, 5, 6};

PolicySpec ref_ref() {
  PolicySpec p;
  p.roll_in = RollIn::kReference;
  p.roll_out = RollOut::kReference;
  return p;
}

}  // namespace

TEST(ReferenceCompletion, CopiesTheGroundTruthSuffix) {
  const std::vector<int> gt{3, 4, 5, 6};
  EXPECT_EQ(reference_completion(gt, 2), (std::vector<int>{5, 6}));
  EXPECT_EQ(reference_completion(gt, 4), (std::vector<int>{}));
  EXPECT_EQ(reference_completion(gt, 0), gt);
  EXPECT_THROW(reference_completion(gt, 5), ContractError);
}

TEST(SuffixCompletion, ExactPrefixGetsTheMatchingSuffix) {
  const std::vector<int> gt{3, 4, 5, 6};
  for (int t = 1; t <= 4; ++t) {
    const std::vector<int> prefix(gt.begin(), gt.begin() + t);
    EXPECT_EQ(suffix_reference_completion(prefix, gt),
              (std::vector<int>(gt.begin() + t, gt.end())))
        << "prefix length " << t;
  }
}

TEST(SuffixCompletion, PicksHighestUnigramOverlap) {
  const std::vector<int> gt{3, 4, 5, 6};
  EXPECT_EQ(suffix_reference_completion(std::vector<int>{3, 4}, gt), (std::vector<int>{5, 6}));
}

TEST(SuffixCompletion, FullPrefixAdmitsEmptySuffix) {
  const std::vector<int> gt{3, 4};
  EXPECT_EQ(suffix_reference_completion(gt, gt), (std::vector<int>{}));
  EXPECT_THROW(suffix_reference_completion(std::vector<int>{}, gt), ContractError);
}

TEST(RollInPolicy, ReferenceRecordsTheGroundTruth) {
  auto f = make_fixture();
  const RollInRecord rec = roll_in(*f.model, kSrc, kGt, ref_ref());
  std::vector<int> expected = kGt;
  expected.push_back(Vocabulary::kEos);  // stop decision gets its own cell
  EXPECT_EQ(rec.prefix, expected);
  EXPECT_EQ(rec.n_cells(), 5);
  EXPECT_EQ(static_cast<int>(rec.states.size()), 5);
  EXPECT_EQ(static_cast<int>(rec.scores.size()), 5);
}

TEST(RollInPolicy, LearnedWithZeroWeightsEmitsLowestToken) {
  auto f = make_fixture();
  f.store.fill_values(0.0);
  PolicySpec p;
  p.roll_in = RollIn::kLearned;
  const RollInRecord rec = roll_in(*f.model, kSrc, kGt, p);
  for (int tok : rec.prefix) EXPECT_EQ(tok, 0);
}

TEST(RollInPolicy, LearnedReplaysGreedyDecoding) {
  auto f = make_fixture(29);
  PolicySpec p;
  p.roll_in = RollIn::kLearned;
  const RollInRecord rec = roll_in(*f.model, kSrc, kGt, p);
  const std::vector<int> greedy = f.model->greedy_decode(kSrc, rec.n_cells());
  ASSERT_LE(greedy.size(), rec.prefix.size());
  for (std::size_t i = 0; i < greedy.size(); ++i) EXPECT_EQ(rec.prefix[i], greedy[i]);
  if (greedy.size() < rec.prefix.size())
    EXPECT_EQ(rec.prefix[greedy.size()], Vocabulary::kEos);
}

TEST(RollOutPolicy, ReferenceEnforcementKeepsAbsoluteAlignment) {
  auto f = make_fixture();
  const RollInRecord rec = roll_in(*f.model, kSrc, kGt, ref_ref());
  // wrong token at the second cell, reference completion for the rest
  const auto out = roll_out(*f.model, rec, 1, 6, ref_ref(), kGt, 0);
  EXPECT_EQ(out, (std::vector<int>{3, 6, 5, 6}));
}

TEST(RollOutPolicy, GroundTruthActionReproducesTheGroundTruth) {
  auto f = make_fixture();
  const RollInRecord rec = roll_in(*f.model, kSrc, kGt, ref_ref());
  const std::vector<int> gt_ext = extended_target(kGt, Vocabulary::kEos, f.cfg.t_max);
  for (int cell = 0; cell < rec.n_cells(); ++cell) {
    const auto out =
        roll_out(*f.model, rec, cell, gt_ext[static_cast<std::size_t>(cell)], ref_ref(), kGt, 0);
    EXPECT_EQ(out, kGt) << "cell " << cell;
    EXPECT_DOUBLE_EQ(hamming_cost(out, kGt), 0.0);
  }
}

TEST(RollOutPolicy, EnforcedStopTruncatesTheOutput) {
  auto f = make_fixture();
  const RollInRecord rec = roll_in(*f.model, kSrc, kGt, ref_ref());
  const auto out = roll_out(*f.model, rec, 2, Vocabulary::kEos, ref_ref(), kGt, 0);
  EXPECT_EQ(out, (std::vector<int>{3, 4}));
}

TEST(RollOutPolicy, LearnedFromTheFirstCellReplaysGreedy) {
  auto f = make_fixture(31);
  PolicySpec p;
  p.roll_in = RollIn::kLearned;
  p.roll_out = RollOut::kLearned;
  const RollInRecord rec = roll_in(*f.model, kSrc, kGt, p);
  const std::vector<int> greedy = f.model->greedy_decode(kSrc, f.cfg.t_max);
  ASSERT_FALSE(greedy.empty());
  const auto out = roll_out(*f.model, rec, 0, greedy[0], p, kGt, 0);
  EXPECT_EQ(out, greedy);
}

TEST(RollOutPolicy, CellOutOfRangeThrows) {
  auto f = make_fixture();
  const RollInRecord rec = roll_in(*f.model, kSrc, kGt, ref_ref());
  EXPECT_THROW(roll_out(*f.model, rec, rec.n_cells(), 3, ref_ref(), kGt, 0), ContractError);
  EXPECT_THROW(roll_out(*f.model, rec, -1, 3, ref_ref(), kGt, 0), ContractError);
}

TEST(RollOutPolicy, MixedDegeneratesToPureAtTheEndpoints) {
  auto f = make_fixture(33);
  PolicySpec learned_in;
  learned_in.roll_in = RollIn::kLearned;
  const RollInRecord rec = roll_in(*f.model, kSrc, kGt, learned_in);

  PolicySpec mixed0 = learned_in, mixed1 = learned_in, pure_ref = learned_in,
             pure_learned = learned_in;
  mixed0.roll_out = RollOut::kMixed;
  mixed0.mix_probability = 0.0;
  mixed1.roll_out = RollOut::kMixed;
  mixed1.mix_probability = 1.0;
  pure_ref.roll_out = RollOut::kReference;
  pure_learned.roll_out = RollOut::kLearned;

  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    EXPECT_EQ(roll_out(*f.model, rec, 1, 5, mixed0, kGt, seed),
              roll_out(*f.model, rec, 1, 5, pure_ref, kGt, seed));
    EXPECT_EQ(roll_out(*f.model, rec, 1, 5, mixed1, kGt, seed),
              roll_out(*f.model, rec, 1, 5, pure_learned, kGt, seed));
  }
}

TEST(RollOutPolicy, MixedVisitsBothBranches) {
  auto f = make_fixture(37);
  PolicySpec p;
  p.roll_in = RollIn::kLearned;
  p.roll_out = RollOut::kMixed;
  p.mix_probability = 0.5;
  const RollInRecord rec = roll_in(*f.model, kSrc, kGt, p);
  PolicySpec pr = p, pl = p;
  pr.roll_out = RollOut::kReference;
  pl.roll_out = RollOut::kLearned;
  int ref_hits = 0, learned_hits = 0;
  for (std::uint64_t seed = 0; seed < 128; ++seed) {
    const auto mixed = roll_out(*f.model, rec, 0, 5, p, kGt, seed);
    if (mixed == roll_out(*f.model, rec, 0, 5, pr, kGt, seed)) ++ref_hits;
    if (mixed == roll_out(*f.model, rec, 0, 5, pl, kGt, seed)) ++learned_hits;
  }
  EXPECT_GT(ref_hits, 0);
  EXPECT_GT(learned_hits, 0);
}

TEST(RollOutPolicy, RepeatCallsAreBitExactAndLeaveTheRecordAlone) {
  auto f = make_fixture(41);
  PolicySpec p;
  p.roll_in = RollIn::kLearned;
  p.roll_out = RollOut::kMixed;
  const RollInRecord rec = roll_in(*f.model, kSrc, kGt, p);
  const std::vector<int> prefix_before = rec.prefix;
  const Tensor state_before = rec.states[2];

  const auto a = roll_out(*f.model, rec, 2, 4, p, kGt, 777);
  const auto b = roll_out(*f.model, rec, 2, 4, p, kGt, 777);
  EXPECT_EQ(a, b);
  EXPECT_EQ(rec.prefix, prefix_before);
  for (int i = 0; i < state_before.numel(); ++i) EXPECT_EQ(rec.states[2][i], state_before[i]);
}

TEST(RollOutPolicy, SuffixPolicyMayRepeatToMaximizeOverlap) {
  auto f = make_fixture();
  PolicySpec p = ref_ref();
  p.reference_kind = ReferenceKind::kSuffixBleu1;
  const RollInRecord rec = roll_in(*f.model, kSrc, kGt, p);
  // Emitting token 4 first: appending the full ground truth beats shorter
  // suffixes on clipped unigram precision (4/5 against 3/4, or 1 with a
  // brevity penalty).
  const auto out = roll_out(*f.model, rec, 0, 4, p, kGt, 0);
  EXPECT_EQ(out, (std::vector<int>{4, 3, 4, 5, 6}));
}

TEST(RollOutPolicy, UniqueCostMinimizerIsTheGroundTruthToken) {
  auto f = make_fixture(43);
  const RollInRecord rec = roll_in(*f.model, kSrc, kGt, ref_ref());
  const std::vector<int> gt_ext = extended_target(kGt, Vocabulary::kEos, f.cfg.t_max);
  for (int cell = 0; cell < rec.n_cells(); ++cell) {
    for (int a = 0; a < f.cfg.vocab_size; ++a) {
      const auto out = roll_out(*f.model, rec, cell, a, ref_ref(), kGt, 0);
      const double cost = hamming_cost(out, kGt);
      if (a == gt_ext[static_cast<std::size_t>(cell)]) {
        EXPECT_DOUBLE_EQ(cost, 0.0) << "cell " << cell;
      } else {
        EXPECT_GT(cost, 0.0) << "cell " << cell << " action " << a;
      }
    }
  }
}
