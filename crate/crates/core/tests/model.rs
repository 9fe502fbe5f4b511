mod common;

use common::*;
use hetloss_core::model::backward;
use hetloss_core::seed;
use hetloss_core::{
    finite_difference_check, partition_batch, predict_proba, Activation, CenterStore, Dataset, FdOptions,
    LossWeights, Matrix, ModelParams, ModelShape, ParamGroup, Sample,
};
use rand_distr::{Distribution, StandardNormal};

fn shape(input: usize, hidden: &[usize], feature: usize, classes: usize) -> ModelShape {
    ModelShape {
        input_dim: input,
        hidden: hidden.to_vec(),
        feature_dim: feature,
        n_classes: classes,
        activation: Activation::Tanh,
    }
}

#[test]
fn forward_matches_direct_arithmetic() {
    let params = ModelParams::init(&shape(3, &[4], 2, 3), 9);
    let mut r = rng(10);
    let x = random_matrix(&mut r, 5, 3, 1.0);
    let out = params.forward(&x).unwrap();

    let (l0, l1, head) = (&params.layers[0], &params.layers[1], &params.head);
    for i in 0..5 {
        let h: Vec<f64> = (0..4)
            .map(|o| {
                let z: f64 = (0..3).map(|k| l0.weight[(o, k)] * x[(i, k)]).sum::<f64>() + l0.bias[o];
                z.tanh()
            })
            .collect();
        let f: Vec<f64> = (0..2)
            .map(|o| (0..4).map(|k| l1.weight[(o, k)] * h[k]).sum::<f64>() + l1.bias[o])
            .collect();
        for c in 0..3 {
            let logit: f64 = (0..2).map(|k| head.weight[(c, k)] * f[k]).sum::<f64>() + head.bias[c];
            assert!((out.logits[(i, c)] - logit).abs() < 1e-12);
        }
        for k in 0..2 {
            assert!((out.features[(i, k)] - f[k]).abs() < 1e-12);
        }
        let sum: f64 = out.probabilities.row(i).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}

fn tiny_dataset(r: &mut seed::Rng, m: usize, d: usize, subject_class: &[usize]) -> Dataset {
    let samples = (0..m)
        .map(|i| {
            let s = i % subject_class.len();
            Sample::new((0..d).map(|_| normal(r)).collect(), s, subject_class[s])
        })
        .collect();
    Dataset::new(d, 2, subject_class.to_vec(), samples)
}

fn flat_groups(params: &ModelParams, grads: &ModelParams, centers: &CenterStore, cg: &CenterStore) -> Vec<ParamGroup> {
    let mut groups: Vec<ParamGroup> = params
        .blocks()
        .into_iter()
        .zip(grads.blocks())
        .map(|((name, _, _, v), (_, _, _, g))| ParamGroup::new(name, v.to_vec(), g.to_vec()))
        .collect();
    groups.push(ParamGroup::new(
        "class_centers",
        centers.class_centers.as_slice().to_vec(),
        cg.class_centers.as_slice().to_vec(),
    ));
    groups.push(ParamGroup::new(
        "subject_centers",
        centers.subject_centers.as_slice().to_vec(),
        cg.subject_centers.as_slice().to_vec(),
    ));
    groups
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let mut r = rng(11);
    let subject_class = [0, 1, 0, 1, 0];
    let ds = tiny_dataset(&mut r, 12, 4, &subject_class);
    let idx: Vec<usize> = (0..12).collect();
    let batch = partition_batch(&ds, &idx).unwrap();
    let inputs = ds.feature_matrix(&idx).unwrap();
    let sh = shape(4, &[5, 3], 3, 2);
    let params = ModelParams::init(&sh, 12);
    let centers = CenterStore::init(2, 5, 3, 13);
    let w = LossWeights::DEFAULT;
    let b = backward(&params, &centers, &inputs, &batch, &subject_class, &w).unwrap();
    let mut groups = flat_groups(&params, &b.model, &centers, &b.centers);
    let n_model = params.num_params();
    let report = finite_difference_check(
        |g| {
            let mut p = ModelParams::zeros(&sh);
            let flat: Vec<f64> = g[..g.len() - 2].iter().flat_map(|x| x.values.clone()).collect();
            assert_eq!(flat.len(), n_model);
            p.assign_flat(&flat).unwrap();
            let c = CenterStore {
                class_centers: Matrix::from_vec(2, 3, g[g.len() - 2].values.clone()).unwrap(),
                subject_centers: Matrix::from_vec(5, 3, g[g.len() - 1].values.clone()).unwrap(),
            };
            backward(&p, &c, &inputs, &batch, &subject_class, &w).unwrap().loss.total
        },
        &mut groups,
        &FdOptions::default(),
    );
    assert!(report.passed(), "{report:?}");
    assert_eq!(report.groups.len(), 3 * 2 + 2 + 2);
}

#[test]
fn saturated_correct_sample_has_vanishing_gradient() {
    let sh = ModelShape {
        input_dim: 1,
        hidden: vec![],
        feature_dim: 1,
        n_classes: 2,
        activation: Activation::Identity,
    };
    let mut params = ModelParams::zeros(&sh);
    params.layers[0].weight[(0, 0)] = 1.0;
    params.head.weight = Matrix::from_rows(&[[50.0], [-50.0]]).unwrap();
    let ds = Dataset::new(1, 2, vec![0, 1], vec![Sample::new(vec![1.0], 0, 0)]);
    let batch = partition_batch(&ds, &[0]).unwrap();
    let inputs = ds.feature_matrix(&[0]).unwrap();
    let centers = CenterStore::zeros(2, 2, 1);
    let b = backward(&params, &centers, &inputs, &batch, ds.subject_class(), &LossWeights::CE_ONLY).unwrap();
    // softmax gap is e^-100
    assert!(b.loss.total < 1e-40);
    for (_, _, _, g) in b.model.blocks() {
        assert!(g.iter().all(|v| v.abs() < 1e-40), "{g:?}");
    }
}

#[test]
fn single_view_and_zero_jitter_are_plain_forward() {
    let params = ModelParams::init(&shape(3, &[4], 2, 2), 14);
    let x = random_matrix(&mut rng(15), 6, 3, 1.0);
    let plain = params.forward(&x).unwrap().probabilities;
    assert_eq!(predict_proba(&params, &x, 1, 0.5, 7).unwrap(), plain);
    assert_eq!(predict_proba(&params, &x, 8, 0.0, 7).unwrap(), plain);
}

#[test]
fn multi_view_matches_explicit_loop() {
    let params = ModelParams::init(&shape(3, &[4], 2, 3), 16);
    let x = random_matrix(&mut rng(17), 6, 3, 1.0);
    let (views, jitter, s) = (5, 0.3, 99);
    let got = predict_proba(&params, &x, views, jitter, s).unwrap();

    let mut r = seed::rng(s);
    let mut acc = vec![vec![0.0; 3]; 6];
    for _ in 0..views {
        let mut v = x.clone();
        for i in 0..6 {
            for k in 0..3 {
                let z: f64 = StandardNormal.sample(&mut r);
                v[(i, k)] += jitter * z;
            }
        }
        let p = params.forward(&v).unwrap().probabilities;
        for i in 0..6 {
            for c in 0..3 {
                acc[i][c] += p[(i, c)];
            }
        }
    }
    for i in 0..6 {
        for c in 0..3 {
            assert!((got[(i, c)] - acc[i][c] / views as f64).abs() < 1e-12);
        }
        assert!((got.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert_eq!(got, predict_proba(&params, &x, views, jitter, s).unwrap());
}

#[test]
fn flat_round_trip() {
    let params = ModelParams::init(&shape(4, &[3, 3], 2, 2), 18);
    let mut copy = ModelParams::zeros(&params.shape());
    copy.assign_flat(&params.to_flat()).unwrap();
    assert_eq!(copy, params);
    assert!(copy.assign_flat(&[0.0]).is_err());
}
