//! Certified construction of maximally-degenerate blow-up towers for the
//! critical polyharmonic equation (-Delta)^m u = K u^p on R^n \ {0},
//! p = (n + 2m)/(n - 2m), n >= 2m + 4.
//!
//! The crate builds a prescribed-curvature solution that blows up along a
//! tower of shrinking bubbles accumulating at the origin, then verifies every
//! inequality the construction relies on and emits a machine-readable report.
//! All amplitudes are carried in the log domain: the deepest tower scales are
//! far below f64 range.

pub mod assembly;
pub mod correction;
pub mod dims;
pub mod error;
pub mod num;
pub mod params;
pub mod pipeline;
pub mod point;
pub mod radial;

pub use dims::Dimensions;
pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod testutil {
    //! Shared fixtures: the flagship construction is expensive enough that
    //! test modules build it once and borrow it.

    use crate::assembly::fields::FieldAssembly;
    use crate::correction::kappa::Surgery;
    use crate::correction::picard::{solve_correction, CorrectionSolve, PicardSettings};
    use crate::correction::supersol::SuperSolution;
    use crate::dims::Dimensions;
    use crate::params::background::{normalize_background, BackgroundK, NormalizedK};
    use crate::params::family::{build_family, BubbleFamily};
    use crate::params::gauge::GaugePhi;
    use crate::params::geometry::Geometry;
    use crate::pipeline::probes::{build_probes, ProbeSet};
    use std::sync::OnceLock;

    /// The flagship run with every stage completed at test-sized sampling.
    pub struct Flagship {
        pub family: BubbleFamily,
        pub background: NormalizedK,
        pub supersol: SuperSolution,
        pub probes: ProbeSet,
        pub solve: CorrectionSolve,
    }

    impl Flagship {
        pub fn surgery(&self) -> Surgery<'_> {
            Surgery::new(&self.family, &self.background)
        }

        pub fn assembly(&self) -> FieldAssembly<'_> {
            FieldAssembly {
                family: &self.family,
                surgery: self.surgery(),
                supersol: &self.supersol,
                field: &self.solve.field,
            }
        }
    }

    /// The default run: n = 8, m = 2, constant background, 18 bubbles.
    pub fn flagship() -> &'static Flagship {
        static CELL: OnceLock<Flagship> = OnceLock::new();
        CELL.get_or_init(|| {
            let dim = Dimensions::new(8, 2).unwrap();
            let bg = normalize_background(&BackgroundK::Const, 0.5, 8).unwrap();
            let geom = Geometry::new(dim, 0.5, bg.delta, bg.inf(), bg.sup()).unwrap();
            let family = build_family(dim, &geom, &GaugePhi::Power { q: 4.0 }, 18).unwrap();
            let probes = build_probes(&family, 1200, 0);
            let supersol = SuperSolution::build(&family).unwrap();
            let settings =
                PicardSettings { mc_samples: 4096, seed: 0, tol: 1e-4, max_iter: 40 };
            let surgery = Surgery::new(&family, &bg);
            let solve =
                solve_correction(&family, &surgery, &supersol, &probes.points, 160, &settings)
                    .unwrap();
            Flagship { family, background: bg, supersol, probes, solve }
        })
    }
}
