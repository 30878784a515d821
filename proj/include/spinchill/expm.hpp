#pragma once

#include <Eigen/Dense>

#include <cmath>

namespace spinchill {

/// Matrix exponential by scaling and squaring around a fixed degree-13 Pade
/// approximant (Higham 2005 coefficients and threshold). Works for any
/// square double-precision Eigen matrix type.
template <typename Derived>
typename Derived::PlainObject expm(const Eigen::MatrixBase<Derived>& a)
{
    using Matrix = typename Derived::PlainObject;

    static constexpr double b[] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                                   1187353796428800.0,  129060195264000.0,   10559470521600.0,
                                   670442572800.0,      33522128640.0,       1323241920.0,
                                   40840800.0,          960960.0,            16380.0,
                                   182.0,               1.0};
    constexpr double theta13 = 5.371920351148152;

    const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
    int squarings = 0;
    if (norm1 > theta13)
        squarings = static_cast<int>(std::ceil(std::log2(norm1 / theta13)));

    const Matrix x = a / std::ldexp(1.0, squarings);
    const Matrix ident = Matrix::Identity(a.rows(), a.cols());
    const Matrix x2 = x * x;
    const Matrix x4 = x2 * x2;
    const Matrix x6 = x4 * x2;

    const Matrix u_inner = b[13] * x6 + b[11] * x4 + b[9] * x2;
    const Matrix u = x * (x6 * u_inner + b[7] * x6 + b[5] * x4 + b[3] * x2 + b[1] * ident);
    const Matrix v_inner = b[12] * x6 + b[10] * x4 + b[8] * x2;
    const Matrix v = x6 * v_inner + b[6] * x6 + b[4] * x4 + b[2] * x2 + b[0] * ident;

    Matrix result = (v - u).partialPivLu().solve(v + u);
    for (int i = 0; i < squarings; ++i)
        result = result * result;
    return result;
}

}  // namespace spinchill
