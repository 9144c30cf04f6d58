#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "oracle.hpp"
#include "slopekit/csv_io.hpp"
#include "slopekit/datagen.hpp"
#include "slopekit/lmm.hpp"
#include "slopekit/two_stage.hpp"

using namespace slopekit;
using oracle::dataset;
using oracle::subject;

namespace {

LongitudinalDataset read(const std::string& text) {
  std::istringstream is(text);
  return read_dataset_csv(is);
}

int error_line(const std::string& text) {
  try {
    read(text);
  } catch (const SchemaError& e) {
    return e.line();
  }
  return -1;
}

}  // namespace

TEST(FormatDouble, SeventeenDigits) {
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
  EXPECT_EQ(format_double(2.0), "2");
  EXPECT_EQ(format_double(-5.13), "-5.1299999999999999");
  EXPECT_EQ(format_double(1e-20), "9.9999999999999995e-21");
  EXPECT_EQ(format_double(std::numeric_limits<double>::quiet_NaN()), "nan");
  EXPECT_EQ(format_double(-std::numeric_limits<double>::infinity()), "-inf");
}

TEST(DatasetCsv, RoundTripIsBitExact) {
  ScenarioConfig cfg;
  cfg.spacing = Spacing::Irregular;
  cfg.mcar_rate = 0.3;
  auto ds = generate_dataset(cfg, 7);
  std::erase_if(ds.subjects, [](const SubjectRecord& s) { return s.n_obs() == 0; });
  std::ostringstream os;
  write_dataset_csv(os, ds);
  const auto back = read(os.str());
  EXPECT_EQ(back.provenance, Provenance::Ingested);
  ASSERT_EQ(back.subjects.size(), ds.subjects.size());
  for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
    EXPECT_EQ(back.subjects[i].subject_id, ds.subjects[i].subject_id);
    EXPECT_EQ(back.subjects[i].metabolite, ds.subjects[i].metabolite);
    EXPECT_EQ(back.subjects[i].times, ds.subjects[i].times);
    EXPECT_EQ(back.subjects[i].responses, ds.subjects[i].responses);
  }
  std::ostringstream again;
  write_dataset_csv(again, back);
  EXPECT_EQ(again.str(), os.str());
}

TEST(DatasetCsv, EmptySubjectsHaveNoRows) {
  const auto ds = dataset({subject(1, 14, {}, {}), subject(2, 15, {0, 2}, {1, 2})});
  std::ostringstream os;
  write_dataset_csv(os, ds);
  EXPECT_EQ(os.str(), "subject_id,time_years,response,predictor\n2,0,1,15\n2,2,2,15\n");
}

TEST(DatasetCsv, GroupsAndSortsRows) {
  const auto ds = read(
      "subject_id,time_years,response,predictor\n"
      "5,4,30,14.5\n"
      "2,0,10,13\n"
      "5,0,50,14.5\r\n"
      "2,2,12,13\n"
      "\n");
  ASSERT_EQ(ds.subjects.size(), 2u);
  EXPECT_EQ(ds.subjects[0].subject_id, 5);
  EXPECT_EQ(ds.subjects[0].times, (std::vector<double>{0, 4}));
  EXPECT_EQ(ds.subjects[0].responses, (std::vector<double>{50, 30}));
  EXPECT_EQ(ds.subjects[1].subject_id, 2);
}

TEST(DatasetCsv, SchemaErrorsNameTheLine) {
  const std::string h = "subject_id,time_years,response,predictor\n";
  EXPECT_EQ(error_line(""), 1);
  EXPECT_EQ(error_line("id,t,y,m\n1,0,1,1\n"), 1);
  EXPECT_EQ(error_line(h + "1,0,1,1\n1,2,3\n"), 3);
  EXPECT_EQ(error_line(h + "1,0,1,1\nx,2,3,1\n"), 3);
  EXPECT_EQ(error_line(h + "1,0,abc,1\n"), 2);
  EXPECT_EQ(error_line(h + "1,0,nan,1\n"), 2);
  EXPECT_EQ(error_line(h + "1,0,1,14\n1,2,2,14\n1,2,3,14\n"), 4);  // duplicated (id, time)
  EXPECT_EQ(error_line(h + "1,0,1,14\n1,2,2,15\n"), 3);            // predictor changes
  try {
    read(h + "1,0,1,14\n1,2,2,14\n1,2,3,14\n");
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(MetricsCsv, HeaderAndRow) {
  MetricsRow row;
  row.scenario_id = "sigma_m=2/irregular/mcar=0.5";
  row.spacing = Spacing::Irregular;
  row.mcar_rate = 0.5;
  row.param_name = "sigma_m";
  row.param_value = 2.0;
  row.summary.method = Method::BlupCorrected;
  row.summary.bias = row.summary.rel_bias_pct = row.summary.sd = row.summary.se =
      row.summary.root_mse = std::numeric_limits<double>::quiet_NaN();
  row.summary.n_reps_failed = 10;
  MetricsRow table;
  table.scenario_id = "baseline/regular/mcar=0";
  table.param_name = "none";
  table.summary.bias = 0.25;
  table.summary.n_reps_used = 3;
  std::ostringstream os;
  const std::vector<MetricsRow> rows{row, table};
  write_metrics_csv(os, rows);
  EXPECT_EQ(os.str(),
            std::string(kMetricsHeader) + "\n" +
                "sigma_m=2/irregular/mcar=0.5,irregular,0.5,sigma_m,2,BLUP-corrected,nan,nan,nan,nan,nan,0,10\n"
                "baseline/regular/mcar=0,regular,0,none,,LMM,0.25,0,0,0,0,3,0\n");
}

TEST(SlopesCsv, Layout) {
  SlopeSet s;
  s.method = Method::Ols;
  s.entries = {{3, 2.5, true}, {4, std::numeric_limits<double>::quiet_NaN(), false}};
  std::ostringstream os;
  write_slopes_csv(os, s);
  EXPECT_EQ(os.str(), "subject_id,method,slope,eligible\n3,OLS,2.5,true\n4,OLS,nan,false\n");
}

TEST(FixedEffectsCsv, Layout) {
  LmmFit fit;
  fit.design = Design::SlopeOnly;
  fit.fixed_effects = Eigen::Vector2d(1.5, -2);
  fit.fixed_se = Eigen::Vector2d(0.25, 0.125);
  std::ostringstream os;
  write_fixed_effects_csv(os, fit);
  EXPECT_EQ(os.str(), "term,estimate,se\n(Intercept),1.5,0.25\nt,-2,0.125\n");
}
