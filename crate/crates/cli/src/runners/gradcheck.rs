//! Finite-difference check of the full ELBO gradient over random model
//! configurations.

use ivdfm::diffcore::{GradCheck, Tensor};
use ivdfm::features::{context_matrix, ContextKind};
use ivdfm::prior::Family;
use ivdfm::vimodel::{ModelConfig, VIModel, Window};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{f, mix_seed, Report};
use crate::config::{ExperimentConfig, GradcheckConfig};
use crate::data::Table;
use crate::error::Result;

pub const TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckRow {
    pub index: usize,
    pub r: usize,
    pub n: usize,
    pub t: usize,
    pub p: usize,
    pub family: Family,
    pub mixture: bool,
    pub max_rel_error: f64,
    pub coords: usize,
}

#[derive(Clone, Debug)]
pub struct GradcheckOutcome {
    pub rows: Vec<GradcheckRow>,
}

/// Random small model and data window for configuration `index`.
pub fn random_case(gc: &GradcheckConfig, seed: u64, index: usize) -> Result<(VIModel, Window, ChaCha8Rng)> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, index as u64]));
    let r = rng.random_range(1..=gc.max_r);
    let n = rng.random_range(r..=gc.max_n);
    let t = rng.random_range(2..=gc.max_t);
    let p = rng.random_range(1..=3);
    let family = match rng.random_range(0..3) {
        0 => Family::Laplace,
        1 => Family::Gaussian,
        _ => Family::StudentT {
            nu: rng.random_range(3.0..8.0),
        },
    };
    let mut cfg = ModelConfig {
        r,
        p,
        encoder_hidden: rng.random_range(4..=12),
        encoder_layers: rng.random_range(1..=2),
        decoder_hidden: rng.random_range(4..=12),
        dropout: if rng.random_bool(0.5) { 0.08 } else { 0.0 },
        beta_kl: rng.random_range(0.5..2.0),
        ..ModelConfig::default()
    };
    cfg.prior.family = family;
    cfg.prior.mixture = rng.random_bool(0.5);
    cfg.prior.regimes = rng.random_range(1..=7);
    cfg.prior.embed_dim = rng.random_range(2..=8);
    cfg.prior.regime_hidden = rng.random_range(4..=12);
    cfg.prior.prior_hidden = rng.random_range(4..=12);
    let model = VIModel::new(cfg, n, rng.random())?;
    let y = Tensor::matrix(t, n, (0..t * n).map(|_| StandardNormal.sample(&mut rng)).collect());
    let w = Window {
        y,
        u: context_matrix(ContextKind::Timestep, 0, t, t as f64),
    };
    Ok((model, w, rng))
}

pub fn run_gradcheck(cfg: &ExperimentConfig) -> Result<GradcheckOutcome> {
    let gc = &cfg.gradcheck;
    let seed = cfg.seeds[0];
    let mut rows = Vec::with_capacity(gc.configs);
    for index in 0..gc.configs {
        let (model, w, mut rng) = random_case(gc, seed, index)?;
        let noise = model.sample_noise(w.y.rows(), &mut rng);
        let opts = GradCheck {
            eps: gc.eps,
            max_coords: gc.max_coords,
            seed: mix_seed(&[seed, index as u64, 1]),
        };
        let rep = model.elbo_gradcheck(&w, &noise, &opts)?;
        rows.push(GradcheckRow {
            index,
            r: model.config.r,
            n: model.n,
            t: w.y.rows(),
            p: model.config.p,
            family: model.config.prior.family,
            mixture: model.config.prior.mixture,
            max_rel_error: rep.max_rel_error,
            coords: rep.coords_checked,
        });
    }
    Ok(GradcheckOutcome { rows })
}

impl GradcheckOutcome {
    pub fn max_rel_error(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn report(&self) -> Report {
        let mut t = Table::new([
            "index",
            "r",
            "n",
            "t",
            "p",
            "family",
            "mixture",
            "max_rel_error",
            "coords",
            "pass",
        ]);
        for r in &self.rows {
            let family = match r.family {
                Family::Laplace => "laplace".to_string(),
                Family::Gaussian => "gaussian".to_string(),
                Family::StudentT { nu } => format!("student_t({nu:.3})"),
            };
            t.push(vec![
                r.index.to_string(),
                r.r.to_string(),
                r.n.to_string(),
                r.t.to_string(),
                r.p.to_string(),
                family,
                r.mixture.to_string(),
                f(r.max_rel_error),
                r.coords.to_string(),
                (r.max_rel_error < TOLERANCE).to_string(),
            ]);
        }
        Report {
            tables: vec![("gradcheck.csv".into(), t)],
            ..Report::default()
        }
    }
}
