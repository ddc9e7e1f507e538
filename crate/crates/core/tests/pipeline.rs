use ivdfm::diffcore::Tensor;
use ivdfm::features::{context_matrix, ContextKind};
use ivdfm::intervene::{model_irf, BaselineShock, LatentSystem};
use ivdfm::linalg::standardize_columns;
use ivdfm::metrics::QUANTILE_LEVELS;
use ivdfm::synthdata::gen_dynamic_dgp;
use ivdfm::vimodel::{ModelConfig, TrainConfig, VIModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn trained() -> (VIModel, Tensor, Tensor, Vec<f64>) {
    let data = gen_dynamic_dgp(200, 20, 5, 1, 0).unwrap();
    let y = Tensor::from_dmatrix(&standardize_columns(&data.y.to_dmatrix()));
    let u = context_matrix(ContextKind::Timestep, 0, 200, 200.0);
    let cfg = ModelConfig {
        encoder_hidden: 32,
        decoder_hidden: 32,
        ..ModelConfig::default()
    };
    let mut model = VIModel::new(cfg, 20, 0).unwrap();
    let report = model
        .train(
            &y,
            &u,
            &TrainConfig {
                epochs: 40,
                ..TrainConfig::default()
            },
        )
        .unwrap();
    (model, y, u, report.losses)
}

#[test]
fn train_infer_forecast_intervene() {
    let (model, y, u, losses) = trained();
    // loss is the negative ELBO
    assert!(losses.last().unwrap() < losses.first().unwrap(), "{losses:?}");

    let inf = model.infer(&y, &u).unwrap();
    assert_eq!(inf.factors.dims(), (200, 5));
    let recon = model.decode(&inf.factors).unwrap();
    let mse = recon
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / 4000.0;
    assert!(mse < 0.5, "reconstruction mse {mse}");

    let u_future = context_matrix(ContextKind::Timestep, 200, 12, 200.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = model
        .predict_quantiles(&y, &u, &u_future, 200, &QUANTILE_LEVELS, &mut rng)
        .unwrap();
    for h in 0..12 {
        for j in 0..20 {
            assert!(q[0].get(h, j) <= q[1].get(h, j) && q[1].get(h, j) <= q[2].get(h, j));
        }
    }

    // shocking to the baseline value itself changes nothing
    let m = model.prior_mean(&u, 50).unwrap()[2];
    let zero = model_irf(&model, &y, &u, 50, 2, m, 10, BaselineShock::PriorMean).unwrap();
    assert!(zero.data().iter().all(|v| *v == 0.0));
    let a = model_irf(&model, &y, &u, 50, 2, 1.0, 10, BaselineShock::PriorMean).unwrap();
    let b = model_irf(&model, &y, &u, 50, 2, 2.0, 10, BaselineShock::PriorMean).unwrap();
    assert!(a.data().iter().any(|v| v.abs() > 1e-6));
    assert_eq!(a.dims(), (11, 20));
    // the decoder is nonlinear, so only the impact direction is checked
    let dot: f64 = a.row(0).iter().zip(b.row(0)).map(|(x, y)| x * y).sum();
    assert!(dot > 0.0);
}
