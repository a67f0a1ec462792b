#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace cit;
using fixtures::load_text;

namespace {

Schema mixed_schema() {
  Schema s;
  s.columns = {{"age", CovariateKind::continuous()},
               {"site", CovariateKind::categorical({"north", "south", "east"})},
               {"grade", CovariateKind::ordinal({"low", "mid", "high"})}};
  return s;
}

}  // namespace

TEST(LoadCsv, FourRowFile) {
  const auto d = load_text("age,site,grade,A,Y\n1.5,north,low,1,2\n2,south,mid,0,3\n-1,east,high,1,4\n0,north,mid,0,5\n",
                           mixed_schema());
  EXPECT_EQ(d.n(), 4u);
  EXPECT_EQ(d.x(0, 0), 1.5);
  EXPECT_EQ(d.x(1, 2), 2.0);  // east
  EXPECT_EQ(d.x(2, 1), 1.0);  // mid
  EXPECT_EQ(d.a(2), 1.0);
  EXPECT_EQ(d.y(3), 5.0);
}

TEST(LoadCsv, DropRowsRemovesMissingOutcome) {
  std::istringstream in("age,site,grade,A,Y\n1,north,low,1,2\n2,south,mid,0,\n3,east,high,1,4\n");
  const auto r = load_csv(in, mixed_schema(), MissingPolicy::drop_rows);
  EXPECT_EQ(r.data.n(), 2u);
  EXPECT_EQ(r.dropped_rows, 1u);
}

TEST(LoadCsv, NaTokenCountsAsMissing) {
  std::istringstream in("age,site,grade,A,Y\nNA,north,low,1,2\n2,south,mid,0,1\n");
  const auto r = load_csv(in, mixed_schema(), MissingPolicy::drop_rows);
  EXPECT_EQ(r.data.n(), 1u);
}

TEST(LoadCsv, RejectPolicyFailsOnMissingCell) {
  EXPECT_THROW(load_text("age,site,grade,A,Y\n1,north,,1,2\n", mixed_schema()), DataError);
}

TEST(LoadCsv, InvalidTreatment) {
  try {
    load_text("age,site,grade,A,Y\n1,north,low,2,2\n", mixed_schema());
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("invalid treatment"), std::string::npos);
  }
}

TEST(LoadCsv, UnknownLevelAndBadNumber) {
  EXPECT_THROW(load_text("age,site,grade,A,Y\n1,west,low,1,2\n", mixed_schema()), DataError);
  EXPECT_THROW(load_text("age,site,grade,A,Y\n1x,north,low,1,2\n", mixed_schema()), DataError);
  EXPECT_THROW(load_text("age,site,grade,A,Y\n1,north,low,1,inf\n", mixed_schema()), DataError);
}

TEST(LoadCsv, HeaderMustContainSchemaColumns) {
  EXPECT_THROW(load_text("age,grade,A,Y\n1,low,1,2\n", mixed_schema()), DataError);
}

TEST(LoadCsv, QuotedFieldsAndCrlf) {
  Schema s;
  s.columns = {{"label", CovariateKind::categorical({"a,b", "say \"hi\""})}};
  const auto d = load_text("label,A,Y\r\n\"a,b\",1,1\r\n\"say \"\"hi\"\"\",0,2\r\n", s);
  ASSERT_EQ(d.n(), 2u);
  EXPECT_EQ(d.x(0, 0), 0.0);
  EXPECT_EQ(d.x(0, 1), 1.0);
}

TEST(LoadCsv, ExtraColumnsAndReorderingAreAccepted) {
  const auto d = load_text("Y,id,grade,A,site,age\n2,7,high,1,south,3\n", mixed_schema());
  EXPECT_EQ(d.x(0, 0), 3.0);
  EXPECT_EQ(d.x(1, 0), 1.0);
  EXPECT_EQ(d.x(2, 0), 2.0);
}

TEST(LoadCsv, RoundTripIsIdentical) {
  std::mt19937_64 eng(5);
  std::normal_distribution<double> z;
  std::vector<std::vector<double>> x(3, std::vector<double>(50));
  std::vector<double> a(50), y(50);
  for (int i = 0; i < 50; ++i) {
    x[0][i] = z(eng) * 1e3;
    x[1][i] = i % 3;
    x[2][i] = (i * 7) % 3;
    a[i] = i % 2;
    y[i] = z(eng) / 7;
  }
  const Dataset d(mixed_schema(), x, a, y);
  std::ostringstream out;
  write_csv(out, d);
  const auto back = load_text(out.str(), mixed_schema());
  EXPECT_TRUE(back == d);
}

TEST(Schema, RejectsDuplicatesAndEmptyLevels) {
  Schema s;
  s.columns = {{"x", CovariateKind::continuous()}, {"x", CovariateKind::continuous()}};
  EXPECT_THROW(s.validate(), ConfigError);
  s.columns = {{"x", CovariateKind::categorical({})}};
  EXPECT_THROW(s.validate(), ConfigError);
  s.columns = {{"x", CovariateKind::categorical({"a", "a"})}};
  EXPECT_THROW(s.validate(), ConfigError);
  s.columns = {{"A", CovariateKind::continuous()}};
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(SubgroupCount, Examples) {
  EXPECT_EQ(subgroup_count(SubgroupMask(5, true)), 5u);
  EXPECT_EQ(subgroup_count(SubgroupMask(5, false)), 0u);
  SubgroupMask m(4);
  m.set(0, true);
  m.set(2, true);
  EXPECT_EQ(subgroup_count(m), 2u);
}

TEST(SubgroupCount, ComplementAddsToN) {
  std::mt19937_64 eng(11);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 1 + eng() % 64;
    SubgroupMask m(n);
    for (std::size_t i = 0; i < n; ++i) m.set(i, eng() & 1);
    EXPECT_EQ(subgroup_count(m) + subgroup_count(m.complement()), n);
  }
}
