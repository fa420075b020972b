#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "kdop/data.hpp"

using namespace kdop;
using namespace kdop::data;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / (std::string("kdop_data_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string write(const std::string& name, const std::string& body) const {
    std::ofstream(path_ / name) << body;
    return (path_ / name).string();
  }

 private:
  fs::path path_;
};

RawCohort raw_with(const std::vector<RawObservation>& obs, std::vector<std::string> ids,
                   std::vector<std::string> vars) {
  RawCohort raw;
  raw.patient_ids = std::move(ids);
  raw.variables = std::move(vars);
  for (const auto& id : raw.patient_ids) raw.observations[id];
  for (const auto& o : obs) raw.observations[o.patient_id].push_back(o);
  return raw;
}

PatientSeries column(std::vector<double> values) {
  PatientSeries s{"p", Mat(values.size(), 1), std::vector<bool>(values.size())};
  for (std::size_t t = 0; t < values.size(); ++t) {
    s.mask[t] = !std::isnan(values[t]);
    s.matrix(t, 0) = values[t];
  }
  return s;
}

// Observed-cell fraction from a direct set of (patient, window, variable).
double brute_completeness(const RawCohort& raw, double window_minutes) {
  std::set<std::tuple<std::string, long, std::string>> seen;
  for (const auto& [id, list] : raw.observations)
    for (const auto& o : list)
      if (o.timestamp < 86400.0) seen.insert({id, static_cast<long>(o.timestamp / (window_minutes * 60.0)), o.variable});
  const double cells = static_cast<double>(raw.patient_ids.size() * raw.variables.size()) * (1440.0 / window_minutes);
  return static_cast<double>(seen.size()) / cells;
}

}  // namespace

TEST(LoadCohort, FullViews) {
  TempDir dir;
  const auto dyn = dir.write("d.csv", "patient_id,timestamp_s,variable,value\na,0,hr,80\nb,60,hr,90\nc,0,sbp,120\n");
  const auto st = dir.write("s.csv", "patient_id,age,bmi\na,50,22\nb,60,30\nc,70,25\n");
  const auto lab = dir.write("l.csv", "patient_id,outcome,interval_days,label\na,mortality,5,0\nb,mortality,5,1\nc,mortality,5,0\n");
  const auto raw = load_cohort(dyn, st, lab);
  EXPECT_EQ(raw.patient_ids, (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(raw.variables, (std::vector<std::string>{"hr", "sbp"}));
  EXPECT_EQ(raw.static_names, (std::vector<std::string>{"age", "bmi"}));
  EXPECT_EQ(raw.dropped, 0u);
  EXPECT_EQ(raw.labels.at({"mortality", 5}).at("b"), 1);
}

TEST(LoadCohort, DropsPatientMissingAView) {
  TempDir dir;
  const auto dyn = dir.write("d.csv", "patient_id,timestamp_s,variable,value\na,0,hr,80\nb,0,hr,81\nc,0,hr,82\nd,0,hr,83\n");
  const auto st = dir.write("s.csv", "patient_id,age\na,1\nb,2\nc,3\n");
  const auto lab = dir.write(
      "l.csv", "patient_id,outcome,interval_days,label\na,m,5,0\nb,m,5,0\nc,m,5,1\nd,m,5,0\n");
  const auto raw = load_cohort(dyn, st, lab);
  EXPECT_EQ(raw.patient_ids.size(), 3u);
  EXPECT_EQ(raw.dropped, 1u);
}

TEST(LoadCohort, NonNumericValueNamesLine) {
  TempDir dir;
  const auto dyn = dir.write("d.csv", "patient_id,timestamp_s,variable,value\na,0,hr,80\na,60,hr,high\n");
  const auto st = dir.write("s.csv", "patient_id,age\na,1\n");
  const auto lab = dir.write("l.csv", "patient_id,outcome,interval_days,label\na,m,5,0\n");
  try {
    load_cohort(dyn, st, lab);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("d.csv:3:"), std::string::npos) << e.what();
  }
}

TEST(LoadCohort, NoOverlapIsDataError) {
  TempDir dir;
  const auto dyn = dir.write("d.csv", "patient_id,timestamp_s,variable,value\na,0,hr,80\n");
  const auto st = dir.write("s.csv", "patient_id,age\nb,1\n");
  const auto lab = dir.write("l.csv", "patient_id,outcome,interval_days,label\na,m,5,0\n");
  EXPECT_THROW(load_cohort(dyn, st, lab), DataError);
}

TEST(LoadCohort, WrongHeaderIsParseError) {
  TempDir dir;
  const auto dyn = dir.write("d.csv", "id,time,variable,value\n");
  const auto st = dir.write("s.csv", "patient_id,age\n");
  const auto lab = dir.write("l.csv", "patient_id,outcome,interval_days,label\n");
  EXPECT_THROW(load_cohort(dyn, st, lab), ParseError);
}

TEST(WindowLength, CompleteHalfHourlyDataPicksSmallest) {
  std::vector<RawObservation> obs;
  for (int k = 0; k < 48; ++k) obs.push_back({"a", k * 1800.0 + 60.0, "hr", 80.0});
  const auto raw = raw_with(obs, {"a"}, {"hr"});
  const std::vector<double> candidates{30, 60, 120};
  EXPECT_EQ(select_window_length(raw, candidates, 0.9), 30.0);
}

TEST(WindowLength, MatchesBruteForceScanWithDropout) {
  Rng rng(12);
  std::vector<RawObservation> obs;
  std::vector<std::string> ids;
  for (int p = 0; p < 20; ++p) {
    const std::string id = "p" + std::to_string(p);
    ids.push_back(id);
    for (int h = 0; h < 24; ++h)
      if (rng.uniform() >= 0.5) obs.push_back({id, h * 3600.0 + 900.0, "hr", 70.0});
  }
  const auto raw = raw_with(obs, ids, {"hr"});
  const std::vector<double> candidates{30, 60, 120};
  double expected = 0.0;
  for (double w : candidates)
    if (brute_completeness(raw, w) >= 0.7) {
      expected = w;
      break;
    }
  ASSERT_GT(expected, 0.0);
  EXPECT_EQ(select_window_length(raw, candidates, 0.7), expected);
  for (double w : candidates) EXPECT_NEAR(completeness(raw, w), brute_completeness(raw, w), 1e-15);
}

TEST(WindowLength, FallsBackToMostComplete) {
  const auto raw = raw_with({{"a", 10.0, "hr", 1.0}}, {"a"}, {"hr"});
  const std::vector<double> candidates{30, 60, 120};
  EXPECT_EQ(select_window_length(raw, candidates, 1.0), 120.0);
  EXPECT_THROW(select_window_length(raw, std::vector<double>{}, 0.5), DomainError);
}

TEST(Aggregate, MeanOfTwoReadings) {
  const auto raw = raw_with({{"a", 100.0, "hr", 80.0}, {"a", 200.0, "hr", 100.0}}, {"a"}, {"hr"});
  const auto s = aggregate(raw, 60.0);
  EXPECT_EQ(s[0].matrix(0, 0), 90.0);
  EXPECT_TRUE(s[0].mask[0]);
  EXPECT_FALSE(s[0].mask[1]);
}

TEST(Aggregate, StepCounts) {
  const auto raw = raw_with({}, {"a"}, {"hr"});
  EXPECT_EQ(aggregate(raw, 120.0)[0].matrix.rows, 12u);
  EXPECT_EQ(aggregate(raw, 30.0)[0].matrix.rows, 48u);
  EXPECT_THROW(aggregate(raw, 7.0), DomainError);
}

TEST(Aggregate, MaxAndLastAggregators) {
  const auto raw = raw_with({{"a", 10.0, "hr", 3.0}, {"a", 30.0, "hr", 9.0}, {"a", 20.0, "hr", 6.0},
                             {"a", 10.0, "rr", 3.0}, {"a", 30.0, "rr", 9.0}, {"a", 20.0, "rr", 6.0}},
                            {"a"}, {"hr", "rr"});
  const auto s = aggregate(raw, 60.0, {{"hr", "max"}, {"rr", "last"}});
  EXPECT_EQ(s[0].matrix(0, 0), 9.0);
  EXPECT_EQ(s[0].matrix(0, 1), 9.0);
  const auto m = aggregate(raw, 60.0, {{"hr", "min"}});
  EXPECT_EQ(m[0].matrix(0, 0), 3.0);
}

TEST(Aggregate, UnknownVariableOrAggregatorIsConfigError) {
  const auto raw = raw_with({}, {"a"}, {"hr"});
  EXPECT_THROW(aggregate(raw, 60.0, {{"spo2", "mean"}}), ConfigError);
  EXPECT_THROW(aggregate(raw, 60.0, {{"hr", "median"}}), ConfigError);
}

TEST(Aggregate, PermutationInvariantWithinWindow) {
  std::vector<RawObservation> obs;
  Rng rng(3);
  for (int k = 0; k < 30; ++k) obs.push_back({"a", rng.uniform(0.0, 7200.0), "hr", rng.uniform(50.0, 150.0)});
  for (const char* agg : {"mean", "min", "max"}) {
    auto shuffled = obs;
    rng.shuffle(shuffled);
    const auto a = aggregate(raw_with(obs, {"a"}, {"hr"}), 60.0, {{"hr", agg}});
    const auto b = aggregate(raw_with(shuffled, {"a"}, {"hr"}), 60.0, {{"hr", agg}});
    for (std::size_t t = 0; t < 2; ++t) EXPECT_NEAR(a[0].matrix(t, 0), b[0].matrix(t, 0), 1e-12) << agg;
  }
}

TEST(Impute, InteriorGapIsInterpolated) {
  const auto s = impute(column({1, kMissing, 3}));
  EXPECT_EQ(s.matrix.data, (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(s.mask, (std::vector<bool>{true, false, true}));
}

TEST(Impute, EdgesExtend) { EXPECT_EQ(impute(column({kMissing, 5, kMissing})).matrix.data, (std::vector<double>{5, 5, 5})); }

TEST(Impute, FullyObservedIsUnchanged) {
  const auto s = column({4, 2, 7});
  EXPECT_EQ(impute(s), s);
}

TEST(Impute, UnobservedFeatureUsesTrainingMedian) {
  const std::vector<PatientSeries> train{column({1, 2, 3}), column({10, kMissing, 30})};
  const auto med = training_medians(train);
  EXPECT_EQ(med[0], 3.0);  // observed {1, 2, 3, 10, 30}
  const auto s = impute(column({kMissing, kMissing, kMissing}), med);
  EXPECT_EQ(s.matrix.data, (std::vector<double>{3, 3, 3}));
}

TEST(Impute, NeverObservedAnywhereNamesFeature) {
  const std::vector<double> med{kMissing};
  const std::vector<std::string> names{"lactate"};
  try {
    impute(column({kMissing, kMissing}), med, names);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("lactate"), std::string::npos);
  }
}

TEST(Impute, Idempotent) {
  const auto once = impute(column({kMissing, 2, kMissing, kMissing, 8, kMissing}));
  EXPECT_EQ(impute(once), once);
}

TEST(Scaler, MapsTrainingRangeAndClamps) {
  const Mat rows{{10}, {20}};
  const std::vector<std::string> owners{"a", "b"};
  const auto p = fit_scaler(rows, owners);
  EXPECT_EQ(scale_value(p, 0, 15), 0.5);
  EXPECT_EQ(scale_value(p, 0, 25), 1.0);
  EXPECT_EQ(scale_value(p, 0, 0), 0.0);
  EXPECT_EQ(p.provenance, owners);
}

TEST(Scaler, ConstantFeatureMapsToZero) {
  const std::vector<std::string> owners{"a", "b"};
  const auto p = fit_scaler(Mat{{7}, {7}}, owners);
  EXPECT_EQ(scale_value(p, 0, 7), 0.0);
}

TEST(Scaler, RefitOnWiderRangeChangesParameters) {
  const std::vector<std::string> train_ids{"a", "b"}, all_ids{"a", "b", "t"};
  const auto train_only = fit_scaler(Mat{{10}, {20}}, train_ids);
  const auto with_test = fit_scaler(Mat{{10}, {20}, {25}}, all_ids);
  EXPECT_NE(train_only, with_test);
  EXPECT_EQ(with_test.provenance, all_ids);
}

TEST(Scaler, ApplyChecksColumns) {
  const std::vector<std::string> owners{"a"};
  const auto p = fit_scaler(Mat{{1, 2}}, owners);
  EXPECT_THROW(apply_scaler(p, Mat(1, 3)), DimensionError);
}

TEST(Kfold, ExactDivisibility) {
  std::vector<int> y(30, 0);
  std::vector<std::string> ids;
  for (int i = 0; i < 30; ++i) ids.push_back("p" + std::to_string(i));
  for (int i = 0; i < 6; ++i) y[static_cast<std::size_t>(i * 5)] = 1;
  Rng rng(1);
  const auto folds = stratified_group_kfold(y, ids, 3, rng);
  std::vector<int> pos(3, 0), size(3, 0);
  for (std::size_t i = 0; i < 30; ++i) {
    pos[folds.fold_of.at(ids[i])] += y[i];
    ++size[folds.fold_of.at(ids[i])];
  }
  EXPECT_EQ(pos, (std::vector<int>{2, 2, 2}));
  EXPECT_EQ(size, (std::vector<int>{10, 10, 10}));
}

TEST(Kfold, RandomCohortsArePartitionsWithBalancedPositives) {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + rng.below(4);
    const std::size_t n = 3 * k + rng.below(60);
    std::vector<int> y(n, 0);
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("id" + std::to_string(rng.next_u64() % 1000000) + "_" + std::to_string(i));
    std::size_t positives = k + rng.below(n - 2 * k);
    for (std::size_t i = 0; i < positives; ++i) y[i] = 1;
    rng.shuffle(y);
    const auto folds = stratified_group_kfold(y, ids, k, rng);
    ASSERT_EQ(folds.fold_of.size(), n);
    std::vector<double> pos(k, 0);
    std::set<std::string> seen;
    for (std::size_t f = 0; f < k; ++f)
      for (const auto& id : folds.members(f)) ASSERT_TRUE(seen.insert(id).second) << "patient in two folds";
    for (std::size_t i = 0; i < n; ++i) pos[folds.fold_of.at(ids[i])] += y[i];
    const double ideal = static_cast<double>(positives) / static_cast<double>(k);
    for (double c : pos) ASSERT_LE(std::abs(c - ideal), 1.0);
  }
}

TEST(Kfold, UnevenPositivesStayWithinOne) {
  std::vector<int> y(31, 0);
  std::vector<std::string> ids;
  for (int i = 0; i < 31; ++i) ids.push_back("p" + std::to_string(i));
  for (int i = 0; i < 7; ++i) y[static_cast<std::size_t>(i)] = 1;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto folds = stratified_group_kfold(y, ids, 3, rng);
    std::vector<int> pos(3, 0);
    for (std::size_t i = 0; i < 31; ++i) pos[folds.fold_of.at(ids[i])] += y[i];
    for (int c : pos) EXPECT_TRUE(c == 2 || c == 3);
  }
}

TEST(Kfold, Errors) {
  const std::vector<std::string> ids{"a", "b", "c", "d"};
  Rng rng(0);
  EXPECT_THROW(stratified_group_kfold(std::vector<int>{1, 0, 0, 0}, ids, 2, rng), DataError);
  EXPECT_THROW(stratified_group_kfold(std::vector<int>{1, 1, 0, 0}, ids, 1, rng), ConfigError);
  const std::vector<std::string> dup{"a", "a", "c", "d"};
  EXPECT_THROW(stratified_group_kfold(std::vector<int>{1, 1, 0, 0}, dup, 2, rng), DataError);
}

TEST(NegativeSubset, SelectsLabelZero) {
  EXPECT_EQ(extract_negative_subset(std::vector<int>{0, 1, 0}), (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(extract_negative_subset(std::vector<int>{0, 0}), (std::vector<std::size_t>{0, 1}));
  EXPECT_THROW(extract_negative_subset(std::vector<int>{1, 1}), TrainingError);
}
