#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fbi/tensor.hpp"

namespace fbi {
namespace {

TEST(Shape, CountsElements) {
  EXPECT_EQ((Shape{2, 3, 4}).size(), 24u);
  EXPECT_EQ((Shape{7}).size(), 7u);
  EXPECT_EQ(Shape().size(), 0u);
  EXPECT_EQ((Shape{1, 2, 3, 4}).to_string(), "[1,2,3,4]");
}

TEST(Shape, RejectsBadRankAndZeroExtent) {
  EXPECT_THROW(Shape(std::vector<std::size_t>{}), ShapeError);
  EXPECT_THROW((Shape{1, 1, 1, 1, 1}), ShapeError);
  EXPECT_THROW((Shape{3, 0, 2}), ShapeError);
  const std::size_t huge = std::numeric_limits<std::size_t>::max() / 2;
  EXPECT_THROW((Shape{huge, huge}), ShapeError);
}

TEST(Tensor, ConstructorsValidateLengthAndFiniteness) {
  EXPECT_THROW(Tensor(Shape{2}, {1.0f}), ShapeError);
  EXPECT_THROW(Tensor(Shape{2}, {1.0f, std::numeric_limits<float>::quiet_NaN()}), Error);
  EXPECT_THROW(Tensor(Shape{1}, {std::numeric_limits<float>::infinity()}), Error);
  const Tensor t(Shape{2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(t.at(1, 0), 3.0f);
  EXPECT_EQ(Tensor(Shape{3}).count_nonzero(), 0u);
}

TEST(Tensor, ChannelFirstIndexing) {
  Tensor t(Shape{2, 3, 4});
  t.at(1, 2, 3) = 5.0f;
  EXPECT_EQ(t[23], 5.0f);
  Tensor w(Shape{2, 2, 2, 2});
  w.at(1, 0, 1, 0) = 1.0f;
  EXPECT_EQ(w[10], 1.0f);
}

TEST(Tensor, ReshapeKeepsValues) {
  const Tensor t(Shape{4}, {1, 2, 3, 4});
  const Tensor r = t.reshaped(Shape{1, 2, 2});
  EXPECT_EQ(r.at(0, 1, 0), 3.0f);
  EXPECT_THROW(t.reshaped(Shape{3}), ShapeError);
}

TEST(Geometry, OutputExtent) {
  EXPECT_EQ(output_extent(224, 3, 1, 1), 224u);
  EXPECT_EQ(output_extent(224, 2, 2, 0), 112u);
  EXPECT_THROW(output_extent(5, 2, 2, 0), ShapeError);
  EXPECT_THROW(output_extent(2, 3, 1, 0), ShapeError);
  EXPECT_EQ(conv_output_shape(Shape{3, 8, 8}, 5, {{3, 3}, {1, 1}, {1, 1}}), (Shape{5, 8, 8}));
}

}  // namespace
}  // namespace fbi
