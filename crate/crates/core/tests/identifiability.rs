use ivdfm::diffcore::Tensor;
use ivdfm::features::{context_matrix, ContextKind};
use ivdfm::linalg::standardize_columns;
use ivdfm::metrics::mcc;
use ivdfm::synthdata::gen_dynamic_dgp;
use ivdfm::vimodel::{ModelConfig, TrainConfig, VIModel};

fn factors(y: &Tensor, u: &Tensor, seed: u64) -> Tensor {
    let mut model = VIModel::new(ModelConfig::default(), y.cols(), seed).unwrap();
    let tc = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    model.train(y, u, &tc).unwrap();
    model.infer(y, u).unwrap().factors
}

/// Two training runs on the same dynamic-suite data agree at least as well
/// with the time context as with a constant one.
#[test]
fn conditioning_does_not_hurt_cross_run_agreement() {
    let (mut cond, mut flat) = (0.0, 0.0);
    let seeds = 0..5u64;
    for s in seeds.clone() {
        let data = gen_dynamic_dgp(200, 20, 5, 1, s).unwrap();
        let y = Tensor::from_dmatrix(&standardize_columns(&data.y.to_dmatrix()));
        for (kind, acc) in [(ContextKind::Timestep, &mut cond), (ContextKind::Constant, &mut flat)] {
            let u = context_matrix(kind, 0, 200, 200.0);
            let a = factors(&y, &u, 100 + s);
            let b = factors(&y, &u, 200 + s);
            *acc += mcc(&a, &b).unwrap().mcc;
        }
    }
    let n = seeds.count() as f64;
    let (cond, flat) = (cond / n, flat / n);
    assert!(
        cond >= flat,
        "cross-run MCC: conditioned {cond:.4}, constant context {flat:.4}"
    );
}
