mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use proxyformer::metrics::{chamfer_l1, chamfer_l2};
use proxyformer::nn::gradcheck::{check_gradients, randomize_store, OP_TOLERANCE};
use proxyformer::nn::*;
use rand::Rng;

fn random_tensor(r: &mut impl Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

proptest! {
    #[test]
    fn matmul_matches_nalgebra(m in 1usize..9, k in 1usize..9, n in 1usize..9, seed in 0u64..1000) {
        let mut r = rng(seed);
        let a = random_tensor(&mut r, m, k);
        let b = random_tensor(&mut r, k, n);
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
        let c = g.matmul(va, vb).unwrap();
        let expected = DMatrix::from_row_slice(m, k, a.data()) * DMatrix::from_row_slice(k, n, b.data());
        for i in 0..m {
            for j in 0..n {
                prop_assert!((g.value(c).get(i, j) - expected[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn differentiable_chamfer_equals_metric(a in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 1..40),
                                           b in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 1..40)) {
        let mut g = Graph::new();
        let ta = g.constant(Tensor::matrix(a.len(), 3, a.concat()).unwrap());
        let tb = g.constant(Tensor::matrix(b.len(), 3, b.concat()).unwrap());
        let l1 = g.chamfer(ta, tb, CdVariant::L1).unwrap();
        let l2 = g.chamfer(ta, tb, CdVariant::L2).unwrap();
        prop_assert_eq!(g.value(l1).item(), chamfer_l1(&cloud(&a), &cloud(&b)).unwrap());
        prop_assert_eq!(g.value(l2).item(), chamfer_l2(&cloud(&a), &cloud(&b)).unwrap());
    }

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, cols in 1usize..6, seed in 0u64..1000) {
        let mut r = rng(seed);
        let mut g = Graph::new();
        let x = g.constant(random_tensor(&mut r, rows, cols).cast::<f64>());
        let x = g.scale(x, 20.0);
        let s = g.softmax(x, 1).unwrap();
        for i in 0..rows {
            let row = g.value(s).row(i);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn softmax_hand_value() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(1, 2, vec![0.0, 3.0f64.ln()]).unwrap());
    let s = g.softmax(x, 1).unwrap();
    let v = g.value(s).data();
    assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] - 0.75).abs() < 1e-15);
}

#[test]
fn layer_norm_matches_definition() {
    let mut r = rng(3);
    let x = random_tensor(&mut r, 4, 6);
    let gain = Tensor::new(vec![6], (0..6).map(|i| 0.5 + i as f64 * 0.1).collect()).unwrap();
    let bias = Tensor::new(vec![6], (0..6).map(|i| i as f64 * -0.2).collect()).unwrap();
    let mut g = Graph::new();
    let (vx, vg, vb) = (g.constant(x.clone()), g.constant(gain.clone()), g.constant(bias.clone()));
    let y = g.layer_norm(vx, vg, vb, 1e-5).unwrap();
    for i in 0..4 {
        let row = x.row(i);
        let mu = row.iter().sum::<f64>() / 6.0;
        let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 6.0;
        for j in 0..6 {
            let expected = (row[j] - mu) / (var + 1e-5).sqrt() * gain.data()[j] + bias.data()[j];
            assert!((g.value(y).get(i, j) - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn dropout_is_deterministic() {
    let x = Tensor::full(vec![50, 40], 1.0f64);
    let run = |seed, step| {
        let mut g = Graph::training(seed, step);
        let v = g.constant(x.clone());
        let y = g.dropout(v, 0.3).unwrap();
        g.value(y).data().to_vec()
    };
    let a = run(7, 2);
    assert_eq!(a, run(7, 2));
    assert_ne!(a, run(7, 3));
    assert_ne!(a, run(8, 2));
    let dropped = a.iter().filter(|&&v| v == 0.0).count() as f64 / a.len() as f64;
    assert!((dropped - 0.3).abs() < 0.05, "drop rate {dropped}");
    // kept entries are rescaled by 1 / (1 - p)
    assert!(a.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-15));

    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let y = g.dropout(v, 0.3).unwrap();
    assert_eq!(g.value(y).data(), x.data());
    assert!(g.dropout(v, 1.0).is_err());
}

#[test]
fn adamw_matches_hand_update() {
    let mut store = ParameterStore::<f64>::new(0);
    let id = store.add("w", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap()).unwrap();
    let opt = AdamW::new(0.1, 0.01);
    let grads = [[0.5, -1.0], [0.2, 0.3]];
    let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
    let mut theta = [1.0f64, -2.0];
    for (t, gr) in grads.iter().enumerate() {
        store.get_mut(id).grad.copy_from_slice(gr);
        opt.step(&mut store);
        let t = t as i32 + 1;
        for i in 0..2 {
            m[i] = 0.9 * m[i] + 0.1 * gr[i];
            v[i] = 0.999 * v[i] + 0.001 * gr[i] * gr[i];
            let mh = m[i] / (1.0 - 0.9f64.powi(t));
            let vh = v[i] / (1.0 - 0.999f64.powi(t));
            theta[i] = theta[i] * (1.0 - 0.1 * 0.01) - 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        let got = store.get(id).value.data();
        assert!((got[0] - theta[0]).abs() < 1e-15 && (got[1] - theta[1]).abs() < 1e-15);
    }
    assert_eq!(store.step_count(), 2);
    assert_eq!((DEFAULT_LR, DEFAULT_WEIGHT_DECAY), (5e-4, 5e-4));
}

fn small_store() -> ParameterStore<f64> {
    let mut store = ParameterStore::new(11);
    Linear::new(&mut store, "a", 3, 5).unwrap();
    LayerNorm::new(&mut store, "b", 5).unwrap();
    MultiHeadAttention::new(&mut store, "c", 8, 2, true).unwrap();
    randomize_store(&mut store, 5, 0.7);
    store
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let bytes = small_store().to_pxf1();
    let back = ParameterStore::<f64>::from_pxf1(&bytes).unwrap();
    assert_eq!(back.to_pxf1(), bytes);
    assert_eq!(&bytes[..4], CHECKPOINT_MAGIC);
    let f32_store = ParameterStore::<f32>::from_pxf1(&bytes).unwrap();
    assert_eq!(f32_store.to_pxf1(), bytes);
}

#[test]
fn checkpoint_corruption_detected() {
    let bytes = small_store().to_pxf1();
    let mut bad = bytes.clone();
    bad[10] ^= 1;
    assert!(ParameterStore::<f64>::from_pxf1(&bad).is_err());
    assert!(ParameterStore::<f64>::from_pxf1(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes;
    bad[0] = b'Q';
    assert!(ParameterStore::<f64>::from_pxf1(&bad).is_err());
}

#[test]
fn composite_block_gradients() {
    // an attention block stacked on a vector attention layer
    let mut store = ParameterStore::<f64>::new(2);
    let va = VectorAttention::new(&mut store, "va", 4).unwrap();
    let mha = MultiHeadAttention::new(&mut store, "mha", 4, 2, false).unwrap();
    let ffn = FeedForward::new(&mut store, "ffn", 4, 8, 0.0).unwrap();
    randomize_store(&mut store, 9, 0.5);
    let mut r = rng(21);
    let coords = random_points(&mut r, 7);
    let x = random_tensor(&mut r, 7, 4);
    let values: Vec<Tensor<f64>> = std::iter::once(x).chain(store.iter().map(|p| p.value.clone())).collect();
    let report = check_gradients("stacked", &values, false, OP_TOLERANCE, |g, vars| {
        let p = Bound::from_vars(vars[1..].to_vec());
        let h = va.forward(g, &p, vars[0], &coords, 3)?;
        let h = mha.forward(g, &p, h, vars[0])?;
        let h = ffn.forward(g, &p, h)?;
        let h = g.mul(h, h)?;
        Ok(g.sum(h))
    })
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn shape_errors_are_reported() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(vec![2, 3]));
    let b = g.constant(Tensor::zeros(vec![2, 3]));
    assert!(g.matmul(a, b).is_err());
    assert!(g.concat(&[a, b], 2).is_err());
    assert!(g.group_sum(a, 4).is_err());
    assert!(g.backward(a).is_err());
    assert!(MultiHeadAttention::new(&mut ParameterStore::<f64>::new(0), "m", 6, 4, false).is_err());
}
