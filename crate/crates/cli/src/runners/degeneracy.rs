//! Rotation demo: Gaussian innovations leave the likelihood unchanged under
//! a rotation of the latent space, Laplace innovations do not.

use ivdfm::prior::{demo_rotation, distance_to_signed_permutation, gaussian_degeneracy_demo, laplace_rotation_demo};

use super::{f, Report};
use crate::config::ExperimentConfig;
use crate::data::Table;
use crate::error::Result;

pub const LAPLACE_MIN_DIFF: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct RotationRow {
    pub seed: u64,
    /// Frobenius distance of the rotation to the nearest signed permutation.
    pub offdiag: f64,
    pub gaussian_diff: f64,
    pub laplace_diff: f64,
}

#[derive(Clone, Debug)]
pub struct DegeneracyOutcome {
    pub rows: Vec<RotationRow>,
    pub min_offdiag: f64,
}

/// Rotations use seeds `seeds[0], seeds[0] + 1, ...`.
pub fn run_degeneracy(cfg: &ExperimentConfig) -> Result<DegeneracyOutcome> {
    let base = cfg.seeds[0];
    let mut rows = Vec::with_capacity(cfg.degeneracy.rotations);
    for i in 0..cfg.degeneracy.rotations as u64 {
        let seed = base + i;
        rows.push(RotationRow {
            seed,
            offdiag: distance_to_signed_permutation(&demo_rotation(seed)),
            gaussian_diff: gaussian_degeneracy_demo(seed)?.abs_diff(),
            laplace_diff: laplace_rotation_demo(seed)?.abs_diff(),
        });
    }
    Ok(DegeneracyOutcome {
        rows,
        min_offdiag: cfg.degeneracy.min_offdiag,
    })
}

impl DegeneracyOutcome {
    pub fn max_gaussian_diff(&self) -> f64 {
        self.rows.iter().map(|r| r.gaussian_diff).fold(0.0, f64::max)
    }

    /// `(separated, eligible)`: rotations away from signed permutations and
    /// how many of them move the Laplace likelihood by more than
    /// [`LAPLACE_MIN_DIFF`].
    pub fn laplace_separated(&self) -> (usize, usize) {
        let eligible: Vec<&RotationRow> = self.rows.iter().filter(|r| r.offdiag > self.min_offdiag).collect();
        let sep = eligible.iter().filter(|r| r.laplace_diff > LAPLACE_MIN_DIFF).count();
        (sep, eligible.len())
    }

    pub fn report(&self) -> Report {
        let mut t = Table::new(["seed", "offdiag", "gaussian_abs_diff", "laplace_abs_diff"]);
        for r in &self.rows {
            t.push(vec![
                r.seed.to_string(),
                f(r.offdiag),
                f(r.gaussian_diff),
                f(r.laplace_diff),
            ]);
        }
        let (sep, eligible) = self.laplace_separated();
        let mut s = Table::new([
            "rotations",
            "gaussian_max_abs_diff",
            "laplace_separated",
            "laplace_eligible",
        ]);
        s.push(vec![
            self.rows.len().to_string(),
            f(self.max_gaussian_diff()),
            sep.to_string(),
            eligible.to_string(),
        ]);
        Report {
            tables: vec![
                ("degeneracy_rotations.csv".into(), t),
                ("degeneracy_summary.csv".into(), s),
            ],
            ..Report::default()
        }
    }
}
