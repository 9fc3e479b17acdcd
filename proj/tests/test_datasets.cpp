#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "searnn/datasets.hpp"

using namespace searnn;

namespace {

SpellingParams small_spelling(double p) {
  SpellingParams sp;
  sp.vocab_size = 13;  // 10 content tokens
  sp.t_max = 8;
  sp.len_min = 3;
  sp.replace_prob = p;
  sp.n_train = 400;
  sp.n_valid = 50;
  sp.n_test = 50;
  return sp;
}

}  // namespace

TEST(GenSpelling, NoCorruptionMeansSourceEqualsTarget) {
  const auto data = gen_spelling(small_spelling(0.0), 5);
  for (const SeqPair& p : data.split.train) EXPECT_EQ(p.src, p.tgt);
}

TEST(GenSpelling, EmpiricalCorruptionRateMatchesProbability) {
  SpellingParams sp = small_spelling(0.3);
  sp.n_train = 20000;  // well over 1e5 characters
  const auto data = gen_spelling(sp, 7);
  long long corrupted = 0, total = 0;
  for (const SeqPair& p : data.split.train) {
    for (std::size_t i = 0; i < p.tgt.size(); ++i) {
      total += 1;
      if (p.src[i] != p.tgt[i]) corrupted += 1;
    }
  }
  ASSERT_GE(total, 100000);
  EXPECT_NEAR(static_cast<double>(corrupted) / static_cast<double>(total), 0.3, 0.01);
}

TEST(GenSpelling, PairsSatisfyTheirInvariants) {
  const auto data = gen_spelling(small_spelling(0.5), 11);
  int checked = 0;
  for (const auto* split : {&data.split.train, &data.split.valid, &data.split.test}) {
    for (const SeqPair& p : *split) {
      ASSERT_FALSE(p.tgt.empty());
      ASSERT_FALSE(p.src.empty());
      EXPECT_EQ(p.src.size(), p.tgt.size());
      EXPECT_LE(static_cast<int>(p.tgt.size()), 8);
      EXPECT_GE(static_cast<int>(p.tgt.size()), 3);
      for (int tok : p.tgt) {
        EXPECT_GE(tok, Vocabulary::first_content());
        EXPECT_LT(tok, data.vocab.size());
      }
      ++checked;
    }
  }
  EXPECT_EQ(checked, 500);
}

TEST(GenSpelling, CorruptionNeverKeepsTheOriginalToken) {
  SpellingParams sp = small_spelling(0.95);
  sp.n_train = 2000;
  const auto data = gen_spelling(sp, 13);
  long long corrupted = 0, total = 0;
  for (const SeqPair& p : data.split.train)
    for (std::size_t i = 0; i < p.tgt.size(); ++i) {
      total += 1;
      if (p.src[i] != p.tgt[i]) corrupted += 1;
    }
  // every replacement draw lands on a different token, so the rate stays at p
  EXPECT_NEAR(static_cast<double>(corrupted) / static_cast<double>(total), 0.95, 0.01);
}

TEST(GenSpelling, RegenerationIsBitIdentical) {
  const auto a = gen_spelling(small_spelling(0.3), 21);
  const auto b = gen_spelling(small_spelling(0.3), 21);
  const auto c = gen_spelling(small_spelling(0.3), 22);
  ASSERT_EQ(a.split.train.size(), b.split.train.size());
  bool all_equal_c = true;
  for (std::size_t i = 0; i < a.split.train.size(); ++i) {
    EXPECT_EQ(a.split.train[i].src, b.split.train[i].src);
    EXPECT_EQ(a.split.train[i].tgt, b.split.train[i].tgt);
    all_equal_c = all_equal_c && a.split.train[i].src == c.split.train[i].src;
  }
  EXPECT_FALSE(all_equal_c);
}

TEST(GenSpelling, SuppliedCorpusLinesClipToMaxLength) {
  SpellingParams sp = small_spelling(0.0);
  sp.clean_lines = {{3, 4, 5, 6, 7, 8, 9, 10, 11, 12}, {4, 5}};
  sp.n_train = 4;
  const auto data = gen_spelling(sp, 3);
  EXPECT_EQ(static_cast<int>(data.split.train[0].tgt.size()), 8);  // clipped
  EXPECT_EQ(data.split.train[1].tgt, (std::vector<int>{4, 5}));
}

TEST(ApplyRule, ShiftAndReverseAndIdentity) {
  const std::vector<int> symbols{0, 1, 2};
  EXPECT_EQ(apply_rule(TransduceRule::kIdentity, symbols, 3), symbols);
  EXPECT_EQ(apply_rule(TransduceRule::kShiftByOne, symbols, 3), (std::vector<int>{1, 2, 0}));
  EXPECT_EQ(apply_rule(TransduceRule::kReverse, symbols, 3), (std::vector<int>{2, 1, 0}));
}

TEST(GenTransduce, IdentityRuleCopiesTheSource) {
  TransduceParams tp;
  tp.rule = TransduceRule::kIdentity;
  const auto data = gen_transduce(tp, 5);
  for (const SeqPair& p : data.split.train) EXPECT_EQ(p.src, p.tgt);
}

TEST(GenTransduce, ShiftRuleMapsEveryToken) {
  TransduceParams tp;
  tp.n_symbols = 3;
  tp.rule = TransduceRule::kShiftByOne;
  const auto data = gen_transduce(tp, 5);
  for (const SeqPair& p : data.split.train)
    for (std::size_t i = 0; i < p.src.size(); ++i) {
      const int s = p.src[i] - Vocabulary::first_content();
      const int t = p.tgt[i] - Vocabulary::first_content();
      EXPECT_EQ(t, (s + 1) % 3);
    }
}

TEST(GenTransduce, SameSeedSameSplit) {
  TransduceParams tp;
  const auto a = gen_transduce(tp, 9);
  const auto b = gen_transduce(tp, 9);
  for (std::size_t i = 0; i < a.split.train.size(); ++i)
    EXPECT_EQ(a.split.train[i].src, b.split.train[i].src);
}

TEST(LoadTsv, ParsesTokensAroundTheTab) {
  const std::string path = ::testing::TempDir() + "pairs.tsv";
  std::ofstream(path) << "a b c\tb c d\n";
  Vocabulary built;
  const auto pairs = load_tsv(path, nullptr, &built);
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].src,
            (std::vector<int>{built.lookup("a"), built.lookup("b"), built.lookup("c")}));
  EXPECT_EQ(pairs[0].tgt,
            (std::vector<int>{built.lookup("b"), built.lookup("c"), built.lookup("d")}));
}

TEST(LoadTsv, EmptyFileGivesEmptySplit) {
  const std::string path = ::testing::TempDir() + "empty.tsv";
  std::ofstream(path).flush();
  EXPECT_TRUE(load_tsv(path).empty());
}

TEST(LoadTsv, MissingTabNamesTheLine) {
  const std::string path = ::testing::TempDir() + "notab.tsv";
  std::ofstream(path) << "a b c no tab here\n";
  try {
    load_tsv(path);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
  }
}

TEST(LoadTsv, UnknownTokenAgainstFixedVocabularyThrows) {
  const std::string path = ::testing::TempDir() + "oov.tsv";
  std::ofstream(path) << "a b\tzz b\n";
  const Vocabulary vocab = Vocabulary::symbols(3);
  EXPECT_THROW(load_tsv(path, &vocab), VocabularyError);
}

TEST(TsvRoundTrip, SaveThenLoadIsIdentical) {
  const auto data = gen_spelling(small_spelling(0.4), 31);
  const std::string path = ::testing::TempDir() + "roundtrip.tsv";
  save_tsv(path, data.split.train, data.vocab);
  const auto reloaded = load_tsv(path, &data.vocab);
  ASSERT_EQ(reloaded.size(), data.split.train.size());
  for (std::size_t i = 0; i < reloaded.size(); ++i) {
    EXPECT_EQ(reloaded[i].src, data.split.train[i].src);
    EXPECT_EQ(reloaded[i].tgt, data.split.train[i].tgt);
  }
}

TEST(Manifest, RecordsSeedsAndParameters) {
  const auto data = gen_spelling(small_spelling(0.3), 77);
  const std::string path = ::testing::TempDir() + "manifest.txt";
  save_manifest(path, data.split);
  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_NE(text.find("task = spelling"), std::string::npos);
  EXPECT_NE(text.find("seed = 77"), std::string::npos);
  EXPECT_NE(text.find("replace_prob"), std::string::npos);
}
