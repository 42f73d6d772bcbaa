mod common;

use common::*;
use proptest::prelude::*;
use proxyformer::metrics::*;

const TOL: f64 = 1e-9;

fn arb_cloud(max: usize) -> impl Strategy<Value = Vec<P>> {
    prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 1..=max)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

proptest! {
    #[test]
    fn metrics_match_oracles(a in arb_cloud(64), b in arb_cloud(64), t in 0.01f64..0.5, alpha in 1.0f64..1000.0) {
        let (ca, cb) = (cloud(&a), cloud(&b));
        prop_assert!(close(chamfer_l1(&ca, &cb).unwrap(), oracle_cd_l1(&a, &b)));
        prop_assert!(close(chamfer_l2(&ca, &cb).unwrap(), oracle_cd_l2(&a, &b)));
        prop_assert!(close(dcd(&ca, &cb, alpha).unwrap(), oracle_dcd(&a, &b, alpha)));
        prop_assert!(close(fscore(&ca, &cb, t).unwrap(), oracle_fscore(&a, &b, t)));
        prop_assert!(close(fidelity(&ca, &cb).unwrap(), oracle_fidelity(&a, &b)));
    }

    #[test]
    fn symmetric_metrics(a in arb_cloud(48), b in arb_cloud(48)) {
        let (ca, cb) = (cloud(&a), cloud(&b));
        prop_assert!(close(chamfer_l1(&ca, &cb).unwrap(), chamfer_l1(&cb, &ca).unwrap()));
        prop_assert!(close(chamfer_l2(&ca, &cb).unwrap(), chamfer_l2(&cb, &ca).unwrap()));
        prop_assert!(close(dcd(&ca, &cb, 1000.0).unwrap(), dcd(&cb, &ca, 1000.0).unwrap()));
    }

    #[test]
    fn permutation_invariance(a in arb_cloud(48), b in arb_cloud(48), seed in 0u64..1000) {
        let (pa, _) = shuffled(&a, seed);
        let (pb, _) = shuffled(&b, seed + 1);
        let (ca, cb, cpa, cpb) = (cloud(&a), cloud(&b), cloud(&pa), cloud(&pb));
        prop_assert!(close(chamfer_l1(&ca, &cb).unwrap(), chamfer_l1(&cpa, &cpb).unwrap()));
        prop_assert!(close(chamfer_l2(&ca, &cb).unwrap(), chamfer_l2(&cpa, &cpb).unwrap()));
        prop_assert!(close(dcd(&ca, &cb, 50.0).unwrap(), dcd(&cpa, &cpb, 50.0).unwrap()));
        prop_assert!(close(fscore(&ca, &cb, 0.2).unwrap(), fscore(&cpa, &cpb, 0.2).unwrap()));
        prop_assert!(close(fidelity(&ca, &cb).unwrap(), fidelity(&cpa, &cpb).unwrap()));
        prop_assert!(close(mmd(&ca, std::slice::from_ref(&cb)).unwrap(), mmd(&cpa, std::slice::from_ref(&cpb)).unwrap()));
    }

    #[test]
    fn dcd_is_bounded(a in arb_cloud(32), b in arb_cloud(32), alpha in 0.0f64..2000.0) {
        let d = dcd(&cloud(&a), &cloud(&b), alpha).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn dcd_self_is_zero(a in arb_cloud(48)) {
        let mut a = a;
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        a.dedup();
        let c = cloud(&a);
        prop_assert_eq!(dcd(&c, &c, 1000.0).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_zero_iff_same_set(a in arb_cloud(24), extra in prop::array::uniform3(-1.0f64..1.0), seed in 0u64..100) {
        // same set: a permutation plus a duplicate
        let (mut b, _) = shuffled(&a, seed);
        b.push(a[0]);
        prop_assert_eq!(chamfer_l1(&cloud(&a), &cloud(&b)).unwrap(), 0.0);
        prop_assume!(!a.contains(&extra));
        b.push(extra);
        prop_assert!(chamfer_l1(&cloud(&a), &cloud(&b)).unwrap() > 0.0);
    }

    #[test]
    fn fscore_monotone_in_threshold(a in arb_cloud(32), b in arb_cloud(32), t in 0.0f64..1.0, dt in 0.0f64..1.0) {
        let (ca, cb) = (cloud(&a), cloud(&b));
        prop_assert!(fscore(&ca, &cb, t).unwrap() <= fscore(&ca, &cb, t + dt).unwrap());
    }
}

#[test]
fn duplicate_dcd_hand_value() {
    let a = cloud(&[[0.1, 0.2, 0.3], [0.1, 0.2, 0.3]]);
    let b = cloud(&[[0.1, 0.2, 0.3]]);
    assert_eq!(dcd(&a, &b, 1000.0).unwrap(), 0.25);
    assert_eq!(DEFAULT_DCD_TEMPERATURE, 1000.0);
}

#[test]
fn two_point_hand_values() {
    // one point each, distance 0.5 along x
    let a = cloud(&[[0.0, 0.0, 0.0]]);
    let b = cloud(&[[0.5, 0.0, 0.0]]);
    assert_eq!(chamfer_l1(&a, &b).unwrap(), 0.5);
    assert_eq!(chamfer_l2(&a, &b).unwrap(), 0.5);
    assert_eq!(fidelity(&a, &b).unwrap(), 0.5);
    assert_eq!(fscore(&a, &b, 0.5).unwrap(), 0.0);
    assert_eq!(fscore(&a, &b, 0.51).unwrap(), 1.0);
    let expected = 1.0 - (-2.0f64).exp();
    assert!((dcd(&a, &b, 4.0).unwrap() - expected).abs() < 1e-15);
}

#[test]
fn mmd_picks_best_candidate() {
    let out = cloud(&[[0.0, 0.0, 0.0]]);
    let far = cloud(&[[1.0, 0.0, 0.0]]);
    let near = cloud(&[[0.1, 0.0, 0.0]]);
    let m = mmd(&out, &[far, near]).unwrap();
    assert!((m - 0.02).abs() < 1e-15);
    assert!(mmd(&out, &[]).is_err());
}

#[test]
fn report_identity_and_serialization() {
    let mut r = rng(2);
    let a = cloud(&random_points(&mut r, 40));
    let rep = MetricReport::evaluate(&a, &a, Some(&a), None, &MetricOptions::default()).unwrap();
    assert_eq!((rep.cd_l1, rep.cd_l2, rep.dcd, rep.fscore), (0.0, 0.0, 0.0, 1.0));
    assert_eq!(rep.fidelity, Some(0.0));
    assert_eq!(rep.mmd, None);

    let b = cloud(&random_points(&mut r, 40));
    let rep = MetricReport::evaluate(&a, &b, None, Some(std::slice::from_ref(&b)), &MetricOptions::default()).unwrap();
    let json = serde_json::to_value(rep).unwrap();
    assert!((json["cd_l2_x1000"].as_f64().unwrap() - 1000.0 * rep.cd_l2).abs() < 1e-9);
    let back: MetricReport = serde_json::from_value(json).unwrap();
    assert!((back.cd_l2 - rep.cd_l2).abs() < 1e-15);
}

#[test]
fn report_mean() {
    let r = |x: f64, f: Option<f64>| MetricReport { cd_l1: x, cd_l2: x, dcd: x, fscore: x, fidelity: f, mmd: None };
    let m = MetricReport::mean(&[r(1.0, Some(2.0)), r(3.0, None)]).unwrap();
    assert_eq!(m.cd_l1, 2.0);
    assert_eq!(m.fidelity, Some(2.0));
    assert_eq!(m.mmd, None);
    assert!(MetricReport::mean(&[]).is_none());
}

#[test]
fn empty_inputs_rejected() {
    let e = proxyformer::geometry::PointCloud::<f64>::empty();
    let a = cloud(&[[0.0; 3]]);
    assert!(chamfer_l1(&e, &a).is_err());
    assert!(chamfer_l2(&a, &e).is_err());
    assert!(dcd(&e, &a, 1.0).is_err());
    assert!(fscore(&a, &e, 0.1).is_err());
    assert!(fidelity(&e, &a).is_err());
}

#[test]
fn f32_tracks_f64() {
    let mut r = rng(9);
    let a = cloud(&random_points(&mut r, 64));
    let b = cloud(&random_points(&mut r, 64));
    let d64 = chamfer_l1(&a, &b).unwrap();
    let d32 = chamfer_l1(&a.cast::<f32>(), &b.cast::<f32>()).unwrap() as f64;
    assert!((d64 - d32).abs() < 1e-5);
}
