#include "rve/eval.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace rve;

namespace {

EvalRecord basic_record() {
  EvalRecord r;
  r.query_id = "q0";
  r.gold_entity_name = "Eiffel Tower";
  r.gold_answers = {"1889"};
  r.stage1_entities = {"Louvre", "Eiffel Tower", "Arc de Triomphe"};
  r.stage2_passages = {"the Eiffel Tower was completed in 1889 for the fair"};
  return r;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST(Stage1Hit, GoldAmongRetrieved) {
  EXPECT_TRUE(stage1_hit(basic_record()));
}

TEST(Stage1Hit, GoldAbsent) {
  EvalRecord r = basic_record();
  r.stage1_entities = {"Louvre", "Notre-Dame"};
  EXPECT_FALSE(stage1_hit(r));
}

TEST(Stage1Hit, NormalizationBridgesVariants) {
  EvalRecord r = basic_record();
  r.stage1_entities = {"eiffel  tower"};
  EXPECT_TRUE(stage1_hit(r));
}

TEST(Stage2Hit, AnswerSubstringFound) {
  EXPECT_TRUE(stage2_hit(basic_record()));
}

TEST(Stage2Hit, NoAliasPresent) {
  EvalRecord r = basic_record();
  r.stage2_passages = {"an unrelated passage about bridges"};
  EXPECT_FALSE(stage2_hit(r));
}

TEST(Stage2Hit, AliasVariantCounts) {
  EvalRecord r;
  r.gold_entity_name = "New York City";
  r.gold_answers = {"New York City", "NYC"};
  r.stage2_passages = {"the borough is part of NYC according to the charter"};
  EXPECT_TRUE(stage2_hit(r));
}

TEST(Stage2Hit, MonotoneInPassages) {
  std::mt19937 rng(4);
  EvalRecord r = basic_record();
  EXPECT_TRUE(stage2_hit(r));
  for (int i = 0; i < 20; ++i) {
    r.stage2_passages.push_back("padding passage " + std::to_string(rng() % 100));
    EXPECT_TRUE(stage2_hit(r));
  }
}

TEST(VqaAccuracy, ExactAndCaseFoldedMatches) {
  EvalRecord hit = basic_record();
  hit.prediction = "1889";
  EXPECT_TRUE(prediction_matches(hit));

  EvalRecord folded;
  folded.gold_answers = {"NYC"};
  folded.prediction = "nyc";
  EXPECT_TRUE(prediction_matches(folded));

  EvalRecord miss = basic_record();
  miss.prediction = "1890";
  EXPECT_FALSE(prediction_matches(miss));
}

TEST(VqaAccuracy, HandCountedFraction) {
  std::vector<EvalRecord> records;
  for (int i = 0; i < 10; ++i) {
    EvalRecord r;
    r.gold_answers = {"right"};
    r.prediction = i < 7 ? "right" : "wrong";
    records.push_back(r);
  }
  EXPECT_DOUBLE_EQ(vqa_accuracy(records), 0.7);
}

TEST(VqaAccuracy, MissingPredictionsExcluded) {
  std::vector<EvalRecord> records;
  EvalRecord scored;
  scored.gold_answers = {"a"};
  scored.prediction = "a";
  records.push_back(scored);
  EvalRecord unscored;
  unscored.gold_answers = {"a"};
  records.push_back(unscored);
  EXPECT_DOUBLE_EQ(vqa_accuracy(records), 1.0);

  MetricReport report = evaluate(records);
  EXPECT_EQ(report.vqa.evaluated, 1u);
  EXPECT_EQ(report.vqa_missing_prediction, 1u);
}

TEST(RelaxedAccuracy, FivePercentBoundary) {
  EvalRecord r;
  r.numeric_gold = 100.0;
  r.prediction = "104";
  EXPECT_TRUE(relaxed_hit(r, 0.05));  // 4% off
  r.prediction = "106";
  EXPECT_FALSE(relaxed_hit(r, 0.05));  // 6% off
  r.prediction = "105";
  EXPECT_TRUE(relaxed_hit(r, 0.05));  // boundary is inclusive
}

TEST(RelaxedAccuracy, ZeroGoldRequiresExactZero) {
  EvalRecord r;
  r.numeric_gold = 0.0;
  r.prediction = "0";
  EXPECT_TRUE(relaxed_hit(r, 0.05));
  r.prediction = "0.0001";
  EXPECT_FALSE(relaxed_hit(r, 0.05));
}

TEST(RelaxedAccuracy, NonNumericPredictionIsMiss) {
  EvalRecord r;
  r.numeric_gold = 10.0;
  r.prediction = "about ten";
  EXPECT_FALSE(relaxed_hit(r, 0.05));
  std::vector<EvalRecord> records{r};
  EXPECT_DOUBLE_EQ(relaxed_accuracy(records), 0.0);
}

TEST(PositionHistogram, BucketsByTokensBeforeFirstMention) {
  EvalRecord r;
  r.gold_entity_name = "Eiffel Tower";
  std::string prefix;
  for (int i = 0; i < 12; ++i) prefix += "w" + std::to_string(i) + " ";
  r.stage2_passages = {prefix + "Eiffel Tower appears here"};
  std::vector<EvalRecord> records{r};
  PositionHistogram hist = entity_position_histogram(records, 50);
  ASSERT_EQ(hist.buckets.size(), 1u);
  EXPECT_EQ(hist.buckets[0], 1u);  // 12 tokens before -> bucket [0, 50)
  EXPECT_EQ(hist.mentions, 1u);
  EXPECT_EQ(hist.excluded, 0u);
}

TEST(PositionHistogram, AbsentMentionTalliedSeparately) {
  EvalRecord r;
  r.gold_entity_name = "Eiffel Tower";
  r.stage2_passages = {"no mention at all", "still nothing"};
  std::vector<EvalRecord> records{r};
  PositionHistogram hist = entity_position_histogram(records, 50);
  EXPECT_EQ(hist.mentions, 0u);
  EXPECT_EQ(hist.excluded, 2u);
}

TEST(PositionHistogram, PlantedMentionsLandBelowTwoHundredTokens) {
  // every passage mentions the entity at token 199: all mass below 200
  std::vector<EvalRecord> records;
  for (int i = 0; i < 20; ++i) {
    EvalRecord r;
    r.gold_entity_name = "target entity";
    std::string passage;
    for (int t = 0; t < 199; ++t) passage += "tok ";
    passage += "target entity and some trailing text";
    r.stage2_passages = {passage};
    records.push_back(r);
  }
  PositionHistogram hist = entity_position_histogram(records, 50);
  EXPECT_EQ(hist.mentions, 20u);
  ASSERT_EQ(hist.buckets.size(), 4u);  // bucket 3 covers [150, 200)
  EXPECT_EQ(hist.buckets[3], 20u);
  std::uint64_t below_200 = hist.buckets[0] + hist.buckets[1] + hist.buckets[2] + hist.buckets[3];
  EXPECT_EQ(below_200, 20u);
}

TEST(PositionHistogram, TotalsBalance) {
  std::vector<EvalRecord> records;
  std::size_t passages = 0;
  for (int i = 0; i < 10; ++i) {
    EvalRecord r;
    r.gold_entity_name = "thing";
    for (int p = 0; p <= i % 3; ++p) {
      r.stage2_passages.push_back(p % 2 == 0 ? "a thing appears" : "nothing here");
      ++passages;
    }
    records.push_back(r);
  }
  PositionHistogram hist = entity_position_histogram(records, 50);
  EXPECT_EQ(hist.mentions + hist.excluded, passages);
}

TEST(PositionHistogram, MentionMatchingIsPunctuationTolerant) {
  EvalRecord r;
  r.gold_entity_name = "Eiffel Tower";
  r.stage2_passages = {"visit the Eiffel Tower, in Paris"};
  std::vector<EvalRecord> records{r};
  EXPECT_EQ(entity_position_histogram(records, 50).mentions, 1u);
}

TEST(AvgPool, IdenticalVectorsPoolToThemselves) {
  EmbeddingVector v{1.5f, -2.0f};
  std::vector<EmbeddingVector> grid{v, v, v, v};
  auto pooled = avg_pool_baseline(grid);
  ASSERT_EQ(pooled.size(), 1u);
  EXPECT_EQ(pooled[0], v);
}

TEST(AvgPool, HandComputedMean) {
  std::vector<EmbeddingVector> grid{
      EmbeddingVector{0.0f, 0.0f},
      EmbeddingVector{2.0f, 0.0f},
      EmbeddingVector{0.0f, 2.0f},
      EmbeddingVector{2.0f, 2.0f},
  };
  auto pooled = avg_pool_baseline(grid);
  ASSERT_EQ(pooled.size(), 1u);
  EXPECT_FLOAT_EQ(pooled[0].values[0], 1.0f);
  EXPECT_FLOAT_EQ(pooled[0].values[1], 1.0f);
}

TEST(AvgPool, DefaultScaleTokenCount) {
  std::vector<EmbeddingVector> grid(576, EmbeddingVector{1.0f});
  auto pooled = avg_pool_baseline(grid);
  EXPECT_EQ(pooled.size(), 144u);  // matches the refinement default m
}

TEST(AvgPool, NonSquareCountThrows) {
  std::vector<EmbeddingVector> grid(10, EmbeddingVector{1.0f});
  EXPECT_THROW(avg_pool_baseline(grid), ShapeError);
}

TEST(Evaluate, RatesWithinBoundsAndOrderInvariant) {
  std::mt19937 rng(6);
  std::vector<EvalRecord> records;
  for (int i = 0; i < 30; ++i) {
    EvalRecord r;
    r.gold_entity_name = "entity" + std::to_string(i % 5);
    r.gold_answers = {"ans" + std::to_string(i % 4)};
    if (i % 3 != 0) r.stage1_entities = {"entity" + std::to_string(rng() % 6)};
    if (i % 4 != 0) r.stage2_passages = {"passage mentioning ans" + std::to_string(rng() % 5)};
    if (i % 2 == 0) r.prediction = "ans" + std::to_string(rng() % 5);
    if (i % 5 == 0) {
      r.numeric_gold = 100.0;
      r.prediction = std::to_string(90 + static_cast<int>(rng() % 20));
    }
    records.push_back(r);
  }
  MetricReport report = evaluate(records);
  for (auto rate : {report.stage1_precision(), report.stage2_precision(), report.vqa_accuracy(),
                    report.relaxed_accuracy()}) {
    if (rate) {
      EXPECT_GE(*rate, 0.0);
      EXPECT_LE(*rate, 1.0);
    }
  }
  EXPECT_LE(report.stage1.hits, report.stage1.evaluated);

  std::vector<EvalRecord> shuffled = records;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  MetricReport again = evaluate(shuffled);
  EXPECT_EQ(report.stage1.hits, again.stage1.hits);
  EXPECT_EQ(report.stage2.hits, again.stage2.hits);
  EXPECT_EQ(report.vqa.hits, again.vqa.hits);
  EXPECT_EQ(report.relaxed.hits, again.relaxed.hits);
  EXPECT_EQ(report.position_histogram.mentions, again.position_histogram.mentions);
}

TEST(EvalRecordsIo, JsonlRoundTripAndErrors) {
  auto path = temp_path("rve_test_eval.jsonl");
  {
    std::ofstream out(path);
    EvalRecord r = basic_record();
    r.numeric_gold = 42.0;
    r.prediction = "1889";
    out << eval_record_to_json(r).dump() << "\n";
    out << "{broken\n";
    out << eval_record_to_json(basic_record()).dump() << "\n";
  }

  // strict mode: first malformed line throws with its line number
  try {
    load_eval_records(path);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }

  // lenient mode: malformed lines are collected, the rest load
  std::vector<std::string> errors;
  std::vector<EvalRecord> records = load_eval_records(path, &errors);
  EXPECT_EQ(records.size(), 2u);
  ASSERT_EQ(errors.size(), 1u);
  EXPECT_NE(errors[0].find("line 2"), std::string::npos);
  EXPECT_EQ(records[0].query_id, "q0");
  ASSERT_TRUE(records[0].numeric_gold.has_value());
  EXPECT_DOUBLE_EQ(*records[0].numeric_gold, 42.0);
  std::filesystem::remove(path);
}

TEST(ReportOutput, JsonAndCsvShapes) {
  std::vector<EvalRecord> records{basic_record()};
  MetricReport report = evaluate(records);
  nlohmann::json j = report_to_json(report);
  EXPECT_DOUBLE_EQ(j["stage1_precision"].get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(j["stage2_precision"].get<double>(), 1.0);
  EXPECT_TRUE(j["vqa_accuracy"].is_null());

  std::ostringstream csv;
  write_histogram_csv(csv, report.position_histogram);
  EXPECT_EQ(csv.str(), "bucket_start,bucket_end,count\n0,50,1\n");

  std::ostringstream table;
  write_report_table(table, report);
  EXPECT_NE(table.str().find("stage-1 precision"), std::string::npos);
}
