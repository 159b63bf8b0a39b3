//! End-to-end runs through the public API.

use causal_bart::bart::{fit, BartConfig};
use causal_bart::bcf::{bcf_fit, BcfConfig};
use causal_bart::data::Dataset;
use causal_bart::dgp::{gen_synthetic, EffectForm, ResponseForm, SyntheticScenario};
use causal_bart::eval::{aggregate, score_replication};
use causal_bart::kfold::{kfold_causal_bart, AblationConfig, KfcbConfig};
use causal_bart::learners::{bart_f0_f1, dr_learner, ps_bart, s_learner, x_learner, EstimatorConfig};
use causal_bart::{Dataset32, EffectReport, GroundTruth, Result};

type Estimator = fn(&causal_bart::Dataset, &EstimatorConfig, u64) -> Result<EffectReport>;

fn scenario(n: usize) -> (causal_bart::Dataset, GroundTruth) {
    gen_synthetic(&SyntheticScenario::new(ResponseForm::Linear, EffectForm::Homogeneous, n), 3).unwrap()
}

#[test]
fn every_learner_brackets_a_constant_effect() {
    let (ds, truth) = scenario(200);
    let cfg = EstimatorConfig::quick();
    let learners: [(&str, Estimator); 5] = [
        ("s-learner", s_learner),
        ("bart-f0f1", bart_f0_f1),
        ("ps-bart", ps_bart),
        ("dr-learner", dr_learner),
        ("x-learner", x_learner),
    ];
    for (name, f) in learners {
        let r = f(&ds, &cfg, 1).unwrap();
        assert_eq!(r.cate.len(), 200, "{name}");
        assert!((r.ate.mean - 3.0).abs() < 1.5, "{name}: ate {}", r.ate.mean);
        let row = score_replication(&r, &truth, "hl", 0).unwrap();
        assert!(row.is_ok() && row.cate_rmse.is_finite(), "{name}");
    }
}

#[test]
fn kfcb_and_bcf_run_on_the_same_draw() {
    let (ds, truth) = scenario(150);
    let kc = KfcbConfig::from_base(EstimatorConfig::quick());
    let kfcb = kfold_causal_bart(&ds, &kc, AblationConfig::FULL, 5).unwrap();
    let bcf = bcf_fit(&ds, &BcfConfig::quick(), 5).unwrap();
    let rows =
        vec![score_replication(&kfcb, &truth, "hl", 0).unwrap(), score_replication(&bcf, &truth, "hl", 0).unwrap()];
    let table = aggregate(&rows);
    assert_eq!(table.rows.len(), 2);
    assert_eq!(table.rows[0].estimator, "kfold-causal-bart");
    assert_eq!(table.rows[1].estimator, "bcf");
    assert!(kfcb.ate.lower <= kfcb.ate.upper);
}

#[test]
fn identical_seeds_reproduce_reports() {
    let (ds, _) = scenario(120);
    let cfg = EstimatorConfig::quick();
    assert_eq!(ps_bart(&ds, &cfg, 9).unwrap().cate, ps_bart(&ds, &cfg, 9).unwrap().cate);
    assert_ne!(ps_bart(&ds, &cfg, 9).unwrap().cate, ps_bart(&ds, &cfg, 10).unwrap().cate);
}

#[test]
fn single_precision_pipeline() {
    let (ds, _): (Dataset32, _) =
        gen_synthetic(&SyntheticScenario::new(ResponseForm::Linear, EffectForm::Homogeneous, 150), 3).unwrap();
    let r = bart_f0_f1(&ds, &EstimatorConfig::quick(), 2).unwrap();
    assert!(r.ate.mean.is_finite() && (r.ate.mean - 3.0).abs() < 1.5);
}

#[test]
fn dataset_csv_round_trip_feeds_the_sampler() {
    let (ds, _) = scenario(60);
    let mut buf = Vec::new();
    ds.write_csv(&mut buf).unwrap();
    let back: Dataset<f64> = Dataset::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.y(), ds.y());
    assert_eq!(back.z(), ds.z());
    let post = fit(back.x(), back.y(), &BartConfig::quick(), 1).unwrap();
    assert_eq!(post.predict_mean(back.x()).unwrap().len(), 60);
}
