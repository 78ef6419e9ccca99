#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <memory>

#include "meshlearn/diffops.hpp"
#include "meshlearn/rng.hpp"

using namespace meshlearn;

namespace {

std::shared_ptr<const Mesh> share(Mesh m) { return std::make_shared<const Mesh>(std::move(m)); }

Field sample(const Mesh& m, auto&& f) {
  Field u(m.vertex_count());
  for (Index v = 0; v < m.vertex_count(); ++v) u[v] = f(m.position(v));
  return u;
}

// Unit cube split into the six Kuhn tetrahedra.
Mesh kuhn_cube() {
  std::vector<double> coords;
  for (int v = 0; v < 8; ++v) coords.insert(coords.end(), {double(v & 1), double((v >> 1) & 1), double((v >> 2) & 1)});
  std::vector<Index> tets;
  const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  for (const auto& p : perms) {
    const int a = 1 << p[0], ab = a | (1 << p[1]);
    tets.insert(tets.end(), {0, a, ab, 7});
  }
  return Mesh(3, coords, tets);
}

Mesh jittered_square(Rng& rng) {
  const Mesh base = build_regular_tri_2d({0, 1, 0, 1}, 0.25);
  std::vector<double> coords = base.coords();
  const auto boundary = base.on_bounding_box();
  for (Index v = 0; v < base.vertex_count(); ++v)
    if (!boundary[static_cast<std::size_t>(v)]) {
      coords[static_cast<std::size_t>(2 * v)] += rng.uniform(-0.05, 0.05);
      coords[static_cast<std::size_t>(2 * v + 1)] += rng.uniform(-0.05, 0.05);
    }
  return Mesh(2, coords, base.elements());
}

}  // namespace

TEST(GradientOperator, UnitTriangleHasIdentityJacobian) {
  const GradientOperator op(share(Mesh(2, {0, 0, 1, 0, 0, 1}, {0, 1, 2})));
  const auto inv = op.inverse_jacobian(0);
  EXPECT_DOUBLE_EQ(inv[0], 1);
  EXPECT_DOUBLE_EQ(inv[1], 0);
  EXPECT_DOUBLE_EQ(inv[2], 0);
  EXPECT_DOUBLE_EQ(inv[3], 1);
}

TEST(GradientOperator, SegmentInverseIsReciprocalLength) {
  const GradientOperator op(share(Mesh(1, {0, 0.5}, {0, 1})));
  EXPECT_DOUBLE_EQ(op.inverse_jacobian(0)[0], 2.0);
}

TEST(GradientOperator, ReferenceTetrahedronHasIdentityJacobian) {
  const GradientOperator op(share(Mesh(3, {0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1}, {0, 1, 2, 3})));
  const auto inv = op.inverse_jacobian(0);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(inv[static_cast<std::size_t>(3 * r + c)], r == c ? 1.0 : 0.0);
}

TEST(GradientOperator, SliverIsRejectedByName) {
  // area 2.5e-7 passes the raw measure check; det / diam^2 = 5e-13 does not
  auto mesh = share(Mesh(2, {0, 0, 1, 0, 0, 1, 1000, 0, 500, 5e-10}, {0, 1, 2, 0, 3, 4}));
  try {
    GradientOperator op(mesh);
    FAIL() << "expected DegenerateMesh";
  } catch (const DegenerateMesh& e) {
    EXPECT_EQ(e.element(), 1u);
    EXPECT_NE(std::string(e.what()).find("element 1"), std::string::npos);
  }
}

TEST(ElementGradient, ConstantFieldHasZeroGradient) {
  const GradientOperator op(share(build_regular_tri_2d({}, 0.25)));
  const Matrix g = element_gradient(op, Field::Constant(op.node_count(), 7.0));
  EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ElementGradient, LinearFieldOnSkewTriangle) {
  const GradientOperator op(share(Mesh(2, {0, 0, 1, 0.5, 0.2, 1}, {0, 1, 2})));
  const Field u = sample(op.mesh(), [](auto p) { return 3 * p[0] - 2 * p[1] + 1; });
  const Matrix g = element_gradient(op, u);
  EXPECT_NEAR(g(0, 0), 3.0, 1e-14);
  EXPECT_NEAR(g(0, 1), -2.0, 1e-14);
}

TEST(ElementGradient, XOnReferenceTetrahedron) {
  const GradientOperator op(share(Mesh(3, {0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1}, {0, 1, 2, 3})));
  const Matrix g = element_gradient(op, sample(op.mesh(), [](auto p) { return p[0]; }));
  EXPECT_DOUBLE_EQ(g(0, 0), 1);
  EXPECT_DOUBLE_EQ(g(0, 1), 0);
  EXPECT_DOUBLE_EQ(g(0, 2), 0);
}

TEST(ElementGradient, LengthMismatchThrows) {
  const GradientOperator op(share(build_regular_1d(0, 1, 0.25)));
  EXPECT_THROW(element_gradient(op, Field::Zero(3)), InvalidArgument);
  EXPECT_THROW(node_gradient(op, Field::Zero(6)), InvalidArgument);
}

TEST(NodeGradient, AveragesTwoIncidentElements) {
  // vertex 0 of the unit square belongs to both triangles
  const GradientOperator op(share(build_regular_tri_2d({0, 1, 0, 1}, 1.0)));
  Matrix per_element(2, 2);
  per_element << 1, 0, 3, 2;
  const Matrix node = op.averaging() * per_element;
  EXPECT_DOUBLE_EQ(node(0, 0), 2);
  EXPECT_DOUBLE_EQ(node(0, 1), 1);
}

TEST(NodeGradient, CentralDifferenceIn1d) {
  const GradientOperator op(share(build_regular_1d(-1, 1, 0.05)));
  Rng rng(3);
  Field u(op.node_count());
  for (Index i = 0; i < u.size(); ++i) u[i] = rng.uniform(-1, 1);
  const Matrix g = node_gradient(op, u);
  for (Index i = 1; i + 1 < u.size(); ++i) EXPECT_NEAR(g(i, 0), (u[i + 1] - u[i - 1]) / 0.1, 1e-12);
}

TEST(NodeGradient, LinearFieldIsExactAtEveryNode) {
  Rng rng(5);
  const GradientOperator op(share(jittered_square(rng)));
  const Matrix g = node_gradient(op, sample(op.mesh(), [](auto p) { return 0.7 * p[0] - 1.3 * p[1] + 2; }));
  for (Index v = 0; v < op.node_count(); ++v) {
    EXPECT_NEAR(g(v, 0), 0.7, 1e-12);
    EXPECT_NEAR(g(v, 1), -1.3, 1e-12);
  }
}

TEST(NodeGradient, AssembledMatrixMatchesElementRoute) {
  Rng rng(9);
  const GradientOperator op(share(jittered_square(rng)));
  Field u(op.node_count());
  for (Index i = 0; i < u.size(); ++i) u[i] = rng.uniform(-2, 2);
  const Matrix g = node_gradient(op, u);
  for (int d = 0; d < 2; ++d) {
    const Field via_matrix = op.node_gradient_matrix(d) * u;
    EXPECT_LT((via_matrix - g.col(d)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SecondDerivative, LinearFieldVanishes) {
  const GradientOperator op(share(build_regular_tri_2d({}, 0.1)));
  const Field u = sample(op.mesh(), [](auto p) { return 2 * p[0] + 5 * p[1]; });
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) EXPECT_LT(second_derivative(op, u, a, b).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(SecondDerivative, QuadraticIn1d) {
  const GradientOperator op(share(build_regular_1d(-1, 1, 0.01)));  // 201 nodes
  const Field d2 = second_derivative(op, sample(op.mesh(), [](auto p) { return p[0] * p[0]; }), 0, 0);
  for (Index i = 3; i + 3 < d2.size(); ++i) EXPECT_NEAR(d2[i], 2.0, 1e-6);
}

TEST(SecondDerivative, MixedDerivativeOfXy) {
  const GradientOperator op(share(build_regular_tri_2d({}, 0.05)));
  const Field d2 = second_derivative(op, sample(op.mesh(), [](auto p) { return p[0] * p[1]; }), 0, 1);
  for (Index j = 3; j <= 37; ++j)
    for (Index i = 3; i <= 37; ++i) EXPECT_NEAR(d2[j * 41 + i], 1.0, 0.1);
}

TEST(SecondDerivative, AxisOutOfRangeThrows) {
  const GradientOperator op(share(build_regular_1d(0, 1, 0.5)));
  EXPECT_THROW(second_derivative(op, Field::Zero(3), 1, 0), InvalidArgument);
}

TEST(SecondDerivative, MatrixRouteMatchesComposition) {
  const GradientOperator op(share(build_regular_tri_2d({}, 0.1)));
  const Field u = sample(op.mesh(), [](auto p) { return std::sin(2 * p[0]) * std::cos(p[1]); });
  EXPECT_LT((laplacian_matrix(op) * u - laplacian(op, u)).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((second_derivative_matrix(op, 1, 0) * u - second_derivative(op, u, 1, 0)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(NaiveFd, LinearFieldOn1dMesh) {
  const Mesh m = build_regular_1d(-1, 1, 0.1);
  const Matrix g = naive_fd_gradient(m, sample(m, [](auto p) { return 4 * p[0] - 1; }));
  for (Index v = 0; v < m.vertex_count(); ++v) EXPECT_NEAR(g(v, 0), 4.0, 1e-12);
}

TEST(NaiveFd, SingleSegment) {
  const Mesh m(1, {0, 2}, {0, 1});
  Field u(2);
  u << 0, 1;
  const Matrix g = naive_fd_gradient(m, u);
  EXPECT_DOUBLE_EQ(g(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(g(1, 0), 0.5);
}

TEST(NaiveFd, RegularTriangulationHitsAxisAlignment) {
  const Mesh m = build_regular_tri_2d({}, 0.05);
  EXPECT_THROW(naive_fd_gradient(m, Field::Zero(m.vertex_count())), AxisAlignedDegeneracy);
}

// Properties ---------------------------------------------------------------

TEST(DiffopsProperties, AveragingRowsSumToOneOnIncidence) {
  const GradientOperator op(share(build_regular_tri_2d({}, 0.1)));
  const SparseMatrix& a = op.averaging();
  for (Index r = 0; r < a.rows(); ++r) {
    double sum = 0;
    std::vector<Index> cols;
    for (SparseMatrix::InnerIterator it(a, r); it; ++it) {
      sum += it.value();
      cols.push_back(it.col());
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    std::vector<Index> incident;
    for (Index e = 0; e < op.element_count(); ++e)
      for (Index v : op.mesh().element(e))
        if (v == r) incident.push_back(e);
    EXPECT_EQ(cols, incident);
  }
}

TEST(DiffopsProperties, NodeGradientIsLinear) {
  Rng rng(11);
  const GradientOperator op(share(jittered_square(rng)));
  Field u(op.node_count()), v(op.node_count());
  for (Index i = 0; i < u.size(); ++i) u[i] = rng.uniform(-1, 1), v[i] = rng.uniform(-1, 1);
  const double a = 1.7, b = -0.4;
  const Matrix lhs = node_gradient(op, a * u + b * v);
  const Matrix rhs = a * node_gradient(op, u) + b * node_gradient(op, v);
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(DiffopsProperties, RigidMotionCovarianceIn2dAnd3d) {
  Rng rng(13);
  // 2D: rotate a jittered mesh and a linear field together
  {
    const Mesh m = jittered_square(rng);
    const double th = 0.83, c = std::cos(th), s = std::sin(th);
    std::vector<double> rotated = m.coords();
    for (Index v = 0; v < m.vertex_count(); ++v) {
      const double x = m.position(v)[0], y = m.position(v)[1];
      rotated[static_cast<std::size_t>(2 * v)] = c * x - s * y + 0.3;
      rotated[static_cast<std::size_t>(2 * v + 1)] = s * x + c * y - 1.1;
    }
    const GradientOperator op(share(Mesh(m))), op_r(share(Mesh(2, rotated, m.elements())));
    const Field u = sample(m, [](auto p) { return 1.5 * p[0] + 0.25 * p[1] + 3; });
    const Matrix g = node_gradient(op, u), g_r = node_gradient(op_r, u);  // same nodal values
    for (Index v = 0; v < m.vertex_count(); ++v) {
      const Eigen::Vector2d expect(c * g(v, 0) - s * g(v, 1), s * g(v, 0) + c * g(v, 1));
      const Eigen::Vector2d got(g_r(v, 0), g_r(v, 1));
      EXPECT_LT((got - expect).norm() / expect.norm(), 1e-10);
    }
  }
  // 3D
  {
    const Mesh m = kuhn_cube();
    const Eigen::Matrix3d rot = Eigen::AngleAxisd(0.6, Eigen::Vector3d(1, 2, -0.5).normalized()).toRotationMatrix();
    std::vector<double> rotated(m.coords().size());
    for (Index v = 0; v < m.vertex_count(); ++v) {
      const Eigen::Vector3d p(m.position(v)[0], m.position(v)[1], m.position(v)[2]);
      const Eigen::Vector3d q = rot * p;
      for (int d = 0; d < 3; ++d) rotated[static_cast<std::size_t>(3 * v + d)] = q[d];
    }
    const GradientOperator op(share(Mesh(m))), op_r(share(Mesh(3, rotated, m.elements())));
    const Field u = sample(m, [](auto p) { return -0.5 * p[0] + 2 * p[1] + 0.75 * p[2]; });
    const Matrix g = node_gradient(op, u), g_r = node_gradient(op_r, u);
    for (Index v = 0; v < m.vertex_count(); ++v) {
      const Eigen::Vector3d expect = rot * Eigen::Vector3d(g(v, 0), g(v, 1), g(v, 2));
      const Eigen::Vector3d got(g_r(v, 0), g_r(v, 1), g_r(v, 2));
      EXPECT_LT((got - expect).norm() / expect.norm(), 1e-10);
    }
  }
}

TEST(StiffnessLaplacian, CompactStencilIn1d) {
  auto mesh = share(build_regular_1d(-1, 1, 0.1));
  const GradientOperator op(mesh);
  const SparseMatrix l = stiffness_laplacian_matrix(op);
  const double h2 = 0.01;
  EXPECT_NEAR(l.coeff(5, 4), 1 / h2, 1e-9);
  EXPECT_NEAR(l.coeff(5, 5), -2 / h2, 1e-9);
  EXPECT_NEAR(l.coeff(5, 6), 1 / h2, 1e-9);
  EXPECT_EQ(l.coeff(5, 7), 0.0);
  // natural boundary row: half-cell mass, one neighbour
  EXPECT_NEAR(l.coeff(0, 0), -2 / h2, 1e-9);
  EXPECT_NEAR(l.coeff(0, 1), 2 / h2, 1e-9);
}

TEST(StiffnessLaplacian, ExactOnQuadraticsInTheInterior) {
  auto mesh = share(build_regular_tri_2d({}, 0.1));
  const GradientOperator op(mesh);
  const Field u = sample(*mesh, [](auto p) { return 3 * p[0] * p[0] - p[1] * p[1] + 0.5 * p[0] + 2; });
  const Field lu = stiffness_laplacian_matrix(op) * u;
  const auto boundary = mesh->on_bounding_box();
  for (Index v = 0; v < mesh->vertex_count(); ++v)
    if (!boundary[static_cast<std::size_t>(v)]) {
      EXPECT_NEAR(lu[v], 4.0, 1e-9) << v;
    }
}

TEST(StiffnessLaplacian, RowsSumToZero) {
  Rng rng(8);
  for (const auto& mesh : {share(build_regular_1d(0, 1, 0.05)), share(build_regular_tri_2d({}, 0.1)), share(jittered_square(rng))}) {
    const SparseMatrix l = stiffness_laplacian_matrix(GradientOperator(mesh));
    for (Index i = 0; i < l.outerSize(); ++i) {
      double row = 0, scale = 0;
      for (SparseMatrix::InnerIterator it(l, i); it; ++it) row += it.value(), scale += std::abs(it.value());
      EXPECT_NEAR(row, 0.0, 1e-12 * scale);
    }
  }
}

TEST(StiffnessLaplacian, MonotoneOnRegularMeshes) {
  // no obtuse angles, so every off-diagonal is >= 0
  for (const auto& mesh : {share(build_regular_1d(0, 1, 0.05)), share(build_regular_tri_2d({}, 0.1))}) {
    const SparseMatrix l = stiffness_laplacian_matrix(GradientOperator(mesh));
    for (Index i = 0; i < l.outerSize(); ++i)
      for (SparseMatrix::InnerIterator it(l, i); it; ++it) {
        if (it.col() != i) {
          EXPECT_GE(it.value(), 0.0) << i << "," << it.col();
        }
      }
  }
}

namespace {

// One random well-shaped simplex in `dim` dimensions.
Mesh random_simplex(Rng& rng, int dim) {
  for (;;) {
    std::vector<double> coords;
    for (int k = 0; k <= dim; ++k)
      for (int c = 0; c < dim; ++c) coords.push_back(rng.uniform(-1, 1));
    std::vector<Index> el(static_cast<std::size_t>(dim + 1));
    for (int k = 0; k <= dim; ++k) el[static_cast<std::size_t>(k)] = k;
    try {
      Mesh m(dim, coords, el);
      GradientOperator op(share(m));
      return m;
    } catch (const DegenerateMesh&) {
    }
  }
}

}  // namespace

TEST(DiffopsProperties, LinearFieldsExactOnRandomElements) {
  Rng rng(2024);
  for (int dim = 1; dim <= 3; ++dim) {
    for (int trial = 0; trial < 1000; ++trial) {
      const Mesh m = random_simplex(rng, dim);
      const GradientOperator op(share(m));
      double a[3];
      for (int c = 0; c < dim; ++c) a[c] = rng.uniform(-5, 5);
      const double b = rng.uniform(-5, 5);
      const Field u = sample(m, [&](auto p) {
        double s = b;
        for (int c = 0; c < dim; ++c) s += a[c] * p[static_cast<std::size_t>(c)];
        return s;
      });
      const Matrix g = element_gradient(op, u);
      double norm = 0, err = 0;
      for (int c = 0; c < dim; ++c) {
        norm += a[c] * a[c];
        err += (g(0, c) - a[c]) * (g(0, c) - a[c]);
      }
      ASSERT_LT(std::sqrt(err / norm), 1e-10) << "dim " << dim << " trial " << trial;
    }
  }
}
