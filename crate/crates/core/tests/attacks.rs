//! Reconstruction oracles: exhaustive search and batch assignment.

use flnids::attack::{invert, invert_batch, InversionConfig, LeakedUpdate};
use flnids::data::{one_hot, synth_dataset, FeatureSchema, SynthConfig};
use flnids::nn::MlpClassifier;
use flnids::rng::stream;
use flnids::Tensor;
use pathfinding::prelude::{kuhn_munkres_min, Matrix};
use rand::Rng;

fn continuous_schema(dim: usize) -> FeatureSchema {
    flnids::data::synth::synth_schema(dim, 0, 2)
}

/// Squared gradient distance of `(x, y)` to the leaked gradient.
fn matching_loss(model: &MlpClassifier, x: &[f64], y: &Tensor, leaked: &LeakedUpdate) -> f64 {
    let xt = Tensor::matrix(1, x.len(), x.to_vec()).unwrap();
    let g = model.gradient(&xt, y).unwrap();
    g.distance(&leaked.gradient).unwrap().powi(2)
}

#[test]
fn inversion_lands_near_the_grid_minimizer() {
    let mut rng = stream(21, &[]);
    let schema = continuous_schema(2);
    for trial in 0..10 {
        let model = MlpClassifier::new(2, 2, &mut rng).unwrap();
        let truth = [
            rng.random_range(10..90) as f64 / 100.0,
            rng.random_range(10..90) as f64 / 100.0,
        ];
        let label = trial % 2;
        let y = one_hot(&[label], 2);
        let leaked = LeakedUpdate {
            gradient: model
                .gradient(&Tensor::matrix(1, 2, truth.to_vec()).unwrap(), &y)
                .unwrap(),
            batch_hint: 1,
        };
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for i in 0..=100 {
            for j in 0..=100 {
                let p = [i as f64 / 100.0, j as f64 / 100.0];
                let l = matching_loss(&model, &p, &y, &leaked);
                if l < best.0 {
                    best = (l, p);
                }
            }
        }
        let r = invert(
            &leaked,
            &model,
            &InversionConfig::default(),
            &schema,
            &mut stream(21, &[trial as u64]),
        )
        .unwrap();
        let err =
            r.x.row(0)
                .iter()
                .zip(&best.1)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
        assert!(
            err <= 0.05,
            "trial {trial}: recovered {:?}, grid minimizer {:?} (loss {:.2e}), objective {:.2e}",
            r.x.row(0),
            best.1,
            best.0,
            r.objective
        );
    }
}

/// Mean L2 distance under the best one-to-one matching of recovered rows
/// to true rows.
fn matched_distance(recovered: &Tensor, truth: &Tensor) -> f64 {
    let n = truth.rows();
    const SCALE: f64 = 1e9;
    let weights = Matrix::from_fn(n, n, |(i, j)| {
        let d: f64 = recovered
            .row(i)
            .iter()
            .zip(truth.row(j))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        (d * SCALE).round() as i64
    });
    let (total, _) = kuhn_munkres_min(&weights);
    total as f64 / SCALE / n as f64
}

#[test]
fn larger_batches_reconstruct_worse() {
    let d = synth_dataset(&SynthConfig {
        rows: 400,
        dim: 6,
        n_classes: 3,
        seed: 22,
        ..Default::default()
    })
    .unwrap();
    let cfg = InversionConfig::default();
    let mut wins = 0;
    let seeds = 3;
    for seed in 0..seeds {
        let model = MlpClassifier::new(d.dim(), d.n_classes(), &mut stream(22, &[seed, 1])).unwrap();
        let score = |b: usize| {
            let rows: Vec<usize> = (0..b).map(|i| (i * 37 + seed as usize * 11) % d.rows()).collect();
            let batch = d.subset(&rows);
            let leaked = LeakedUpdate {
                gradient: model.gradient(&batch.x, &batch.y).unwrap(),
                batch_hint: b,
            };
            let r = invert_batch(
                &leaked,
                b,
                &model,
                &cfg,
                &d.schema,
                &mut stream(22, &[seed, 2, b as u64]),
            )
            .unwrap();
            matched_distance(&r.x, &batch.x)
        };
        let (five, ten) = (score(5), score(10));
        println!("seed {seed}: batch 5 {five:.4}, batch 10 {ten:.4}");
        if five < ten {
            wins += 1;
        }
    }
    assert_eq!(wins, seeds, "batch 5 beat batch 10 on {wins} of {seeds} seeds");
}

#[test]
fn assignment_oracle_finds_the_permutation() {
    let t = Tensor::matrix(3, 2, vec![0.0, 0.0, 1.0, 1.0, 0.5, 0.0]).unwrap();
    let shuffled = t.select_rows(&[2, 0, 1]);
    assert_eq!(matched_distance(&shuffled, &t), 0.0);
}
