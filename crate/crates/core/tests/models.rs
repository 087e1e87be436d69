//! Oracles for the autodiff engine and the three network families.

use flnids::autodiff::{Graph, NodeId};
use flnids::data::{one_hot, synth_dataset, SynthConfig};
use flnids::nn::{ce_loss_graph, gan_train, AnomalyAutoencoder, GanPair, GanTrainConfig, GanTrainer, MlpClassifier};
use flnids::rng::{stream, uniform};
use flnids::Tensor;
use proptest::prelude::*;

fn central_difference(x: &Tensor, h: f64, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = stream(11, &[]);
    let z0 = Tensor::matrix(1, 4, (0..4).map(|_| uniform(&mut rng, -2.0, 2.0)).collect()).unwrap();
    let y = one_hot(&[2], 4);
    let loss = |z: &Tensor| {
        let mut g = Graph::new();
        let zn = g.leaf(z.clone());
        let yn = g.constant(y.clone());
        let l = ce_loss_graph(&mut g, zn, yn).unwrap();
        g.value(l).item()
    };
    let mut g = Graph::new();
    let zn = g.leaf(z0.clone());
    let yn = g.constant(y.clone());
    let l = ce_loss_graph(&mut g, zn, yn).unwrap();
    let analytic = g.gradients(l, &[zn]).unwrap().remove(0);
    let numeric = central_difference(&z0, 1e-5, loss);
    assert!(max_rel(analytic.data(), &numeric) <= 1e-4);
}

/// `||dW(x) - g0||^2` for a linear layer with squared-error loss, as a
/// function of `x`; needs the recorded first-order gradient.
fn linear_matching(g: &mut Graph, w: &Tensor, t: &Tensor, g0: &Tensor, x: NodeId) -> NodeId {
    let wn = g.leaf(w.clone());
    let b = g.constant(Tensor::zeros(&[w.rows()]));
    let z = g.linear(x, wn, b).unwrap();
    let tn = g.constant(t.clone());
    let d = g.sub(z, tn).unwrap();
    let l = g.sq_norm(d).unwrap();
    let dw = g.grad(l, &[wn], true).unwrap()[0];
    let g0 = g.constant(g0.clone());
    let gap = g.sub(dw, g0).unwrap();
    g.sq_norm(gap).unwrap()
}

#[test]
fn second_order_matching_gradient_on_a_linear_layer() {
    let mut rng = stream(12, &[]);
    let w = Tensor::matrix(3, 4, (0..12).map(|_| uniform(&mut rng, -1.0, 1.0)).collect()).unwrap();
    let t = Tensor::matrix(1, 3, vec![0.3, -0.2, 0.5]).unwrap();
    let g0 = Tensor::matrix(3, 4, (0..12).map(|_| uniform(&mut rng, -1.0, 1.0)).collect()).unwrap();
    let x0 = Tensor::matrix(1, 4, (0..4).map(|_| uniform(&mut rng, 0.0, 1.0)).collect()).unwrap();

    let mut g = Graph::new();
    let xn = g.leaf(x0.clone());
    let obj = linear_matching(&mut g, &w, &t, &g0, xn);
    let analytic = g.gradients(obj, &[xn]).unwrap().remove(0);
    let numeric = central_difference(&x0, 1e-6, |x| {
        let mut g = Graph::new();
        let xn = g.leaf(x.clone());
        let o = linear_matching(&mut g, &w, &t, &g0, xn);
        g.value(o).item()
    });
    assert!(max_rel(analytic.data(), &numeric) <= 1e-4);
}

proptest! {
    /// Mean squared norm of a sum against the squared sum of root mean
    /// squared norms, over sampled batches.
    #[test]
    fn expected_squared_norm_of_a_sum_is_bounded(
        rows in prop::collection::vec(
            (prop::collection::vec(-10.0f64..10.0, 5), prop::collection::vec(-10.0f64..10.0, 5)),
            1..20,
        )
    ) {
        let n = rows.len() as f64;
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let lhs = rows.iter().map(|(a, b)| {
            let s: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
            sq(&s)
        }).sum::<f64>() / n;
        let ea = rows.iter().map(|(a, _)| sq(a)).sum::<f64>() / n;
        let eb = rows.iter().map(|(_, b)| sq(b)).sum::<f64>() / n;
        let rhs = (ea.sqrt() + eb.sqrt()).powi(2);
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12);
    }
}

#[test]
fn trained_classifier_generalizes_on_held_out_synth() {
    let d = synth_dataset(&SynthConfig {
        rows: 1000,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let (train, test) = d.split(0.7, &mut stream(5, &[1]));
    let mut m = MlpClassifier::new(d.dim(), d.n_classes(), &mut stream(5, &[2])).unwrap();
    m.fit(&train.x, &train.y, 10, 32, 1e-2, &mut stream(5, &[3])).unwrap();
    let acc = m.accuracy(&test.x, &test.y).unwrap();
    assert!(acc > 0.9, "held-out accuracy {acc}");
}

#[test]
fn autoencoder_flags_injected_outliers() {
    let d = synth_dataset(&SynthConfig {
        rows: 1200,
        seed: 6,
        ..Default::default()
    })
    .unwrap();
    let benign_idx: Vec<usize> = d
        .labels()
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == d.benign_class)
        .map(|(i, _)| i)
        .collect();
    let benign = d.x.select_rows(&benign_idx);
    let mut rng = stream(6, &[1]);
    let mut ae = AnomalyAutoencoder::new(d.dim(), &mut rng).unwrap();
    ae.train(&benign, 60, 32, 1e-2, &mut rng).unwrap();
    ae.calibrate_threshold(&benign, 0.99).unwrap();

    let injected = Tensor::matrix(
        200,
        d.dim(),
        (0..200 * d.dim()).map(|_| uniform(&mut rng, 0.0, 1.0)).collect(),
    )
    .unwrap();
    let flagged = ae
        .anomaly_score(&injected)
        .unwrap()
        .iter()
        .filter(|&&s| s > ae.threshold)
        .count();
    assert!(flagged >= 180, "{flagged} of 200 injected rows above threshold");
}

#[test]
fn generator_converges_towards_a_point_mass() {
    let dim = 4;
    let c = [0.2, 0.8, 0.5, 0.1];
    let benign = Tensor::matrix(64, dim, c.iter().copied().cycle().take(64 * dim).collect()).unwrap();
    let mut rng = stream(7, &[]);
    let gan = GanPair::new(dim, &mut rng).unwrap();
    let noise = gan.noise(64, &mut rng);
    let mut trainer = GanTrainer::new(
        gan,
        GanTrainConfig {
            epochs: 60,
            batch: 16,
            lr: 5e-3,
        },
    );
    let mean_distance = |gan: &GanPair| {
        let x = gan.generate_from(&noise).unwrap();
        (0..x.rows())
            .map(|i| {
                x.row(i)
                    .iter()
                    .zip(&c)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum::<f64>()
            / x.rows() as f64
    };
    let mut curve = vec![mean_distance(&trainer.gan)];
    for _ in 0..60 {
        trainer.epoch(&benign, &mut rng).unwrap();
        curve.push(mean_distance(&trainer.gan));
    }
    let smooth: Vec<f64> = curve.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    let rises = smooth.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(
        rises == 0,
        "smoothed distance rose {rises} times; start {:.3} end {:.3}",
        smooth[0],
        smooth[smooth.len() - 1]
    );
}

#[test]
fn generator_on_noise_is_no_better_than_random_inputs() {
    let d = synth_dataset(&SynthConfig {
        rows: 1000,
        seed: 8,
        ..Default::default()
    })
    .unwrap();
    let benign_idx: Vec<usize> = d
        .labels()
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == d.benign_class)
        .map(|(i, _)| i)
        .collect();
    let mut rng = stream(8, &[1]);
    let mut ae = AnomalyAutoencoder::new(d.dim(), &mut rng).unwrap();
    let benign = d.x.select_rows(&benign_idx);
    ae.train(&benign, 40, 32, 1e-2, &mut rng).unwrap();
    ae.calibrate_threshold(&benign, 0.99).unwrap();

    let noise_rows = Tensor::matrix(
        100,
        d.dim(),
        (0..100 * d.dim()).map(|_| uniform(&mut rng, 0.0, 1.0)).collect(),
    )
    .unwrap();
    let gan = GanPair::new(d.dim(), &mut rng).unwrap();
    let (gan, _) = gan_train(
        gan,
        &noise_rows,
        GanTrainConfig {
            epochs: 50,
            ..Default::default()
        },
        None,
        &mut rng,
    )
    .unwrap();
    let accepted = |x: &Tensor| ae.accepts(x).unwrap().iter().filter(|&&a| a).count() as f64 / x.rows() as f64;
    let er_gan = accepted(&gan.generate(100, &mut rng).unwrap());
    let random = Tensor::matrix(
        100,
        d.dim(),
        (0..100 * d.dim()).map(|_| uniform(&mut rng, 0.0, 1.0)).collect(),
    )
    .unwrap();
    let er_random = accepted(&random);
    assert!(
        (er_gan - er_random).abs() <= 0.1,
        "GAN ER {er_gan} vs random {er_random}"
    );
}
