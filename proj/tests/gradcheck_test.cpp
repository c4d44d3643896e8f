// Central finite-difference checks (h = 1e-5, 64-bit) for every
// differentiable op and the composite losses, 20 random cases each.

#include <gtest/gtest.h>

#include "grad_cases.hpp"

namespace ssal {
namespace {

using namespace ssal::testing::grad_cases;

class GradCheck : public ::testing::TestWithParam<Family> {};

TEST_P(GradCheck, CentralDifferences) {
  const Family& f = GetParam();
  for (int c = 0; c < kCases; ++c) {
    const auto r = f.run(c);
    EXPECT_GT(r.checked, 0u) << "case " << c;
    EXPECT_LT(r.max_rel_error, kTol) << "case " << c;
  }
}

INSTANTIATE_TEST_SUITE_P(Ops, GradCheck, ::testing::ValuesIn(families()),
                         [](const ::testing::TestParamInfo<Family>& info) { return info.param.name; });

}  // namespace
}  // namespace ssal
