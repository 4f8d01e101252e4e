//! Limiting spectra in the proportional regime.
//!
//! With `p / n -> gamma` the two half-batch Gram matrices scaled by `alpha / 2` are
//! asymptotically free MP(`2 gamma`, `alpha / 2`) elements, and `alpha Z(alpha / 2)` is the
//! polynomial `w1 + w2 - (w1 w2 + w2 w1) / 2` in them. Its law is computed through a
//! 4×4 linear pencil and operator-valued subordination.

pub mod density;
pub mod linearization;
pub mod mp;
pub mod quadrature;
pub mod subordination;

pub use density::{spectral_density, free_sum_density, GridSpec, SpectralDensity};
pub use linearization::{build_linearization, Linearization};
pub use mp::{mp_stieltjes, MarchenkoPastur, C64};
pub use quadrature::{gauss_legendre, QuadratureMeasure};
pub use subordination::{
    operator_cauchy, polynomial_cauchy, polynomial_cauchy_aux, subordination_fixed_point, CMat, FixedPoint, FreePencil,
    OperatorCauchyState, Which,
};
