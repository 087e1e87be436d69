//! Data, federated training and FedDef harnesses across module boundaries.

use std::collections::BTreeSet;

use flnids::data::{canonicalize, kdd99_like, partition, synth_dataset, PartitionMode, SynthConfig};
use flnids::defense::{feddef_transform, DefenseKind, FedDefConfig};
use flnids::fl::{sample_batch, tags, train, FlConfig, LocalOptimizer};
use flnids::nn::MlpClassifier;
use flnids::rng::{stream, uniform};
use flnids::Tensor;

#[test]
fn canonicalize_is_idempotent() {
    let d = kdd99_like(200, 3).unwrap();
    let mut rng = stream(3, &[1]);
    for _ in 0..1000 {
        let row: Vec<f64> = (0..d.dim()).map(|_| uniform(&mut rng, -0.5, 1.5)).collect();
        let once = canonicalize(&row, &d.schema);
        assert_eq!(canonicalize(&once, &d.schema), once);
    }
}

#[test]
fn linear_probe_separates_two_class_synth() {
    let d = synth_dataset(&SynthConfig {
        dim: 8,
        n_classes: 2,
        rows: 1000,
        separation: 3.0,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let (train_set, test) = d.split(0.7, &mut stream(4, &[1]));
    // Plain logistic regression by full-batch gradient descent.
    let labels = train_set.labels();
    let (mut w, mut b) = (vec![0.0; d.dim()], 0.0);
    for _ in 0..500 {
        let (mut gw, mut gb) = (vec![0.0; d.dim()], 0.0);
        for (i, &l) in labels.iter().enumerate() {
            let x = train_set.x.row(i);
            let z: f64 = x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
            let err = 1.0 / (1.0 + (-z).exp()) - l as f64;
            gw.iter_mut().zip(x).for_each(|(g, v)| *g += err * v);
            gb += err;
        }
        let n = labels.len() as f64;
        w.iter_mut().zip(&gw).for_each(|(p, g)| *p -= 1.0 * g / n);
        b -= 1.0 * gb / n;
    }
    let tl = test.labels();
    let correct = (0..test.rows())
        .filter(|&i| {
            let z: f64 = test.x.row(i).iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
            usize::from(z > 0.0) == tl[i]
        })
        .count();
    let acc = correct as f64 / test.rows() as f64;
    assert!(acc > 0.95, "probe accuracy {acc}");
}

#[test]
fn non_iid_plan_shares_every_benign_row() {
    let d = kdd99_like(3000, 5).unwrap();
    let plan = partition(
        &d,
        10,
        PartitionMode::NonIid { attack_types: Some(3) },
        &mut stream(5, &[1]),
    )
    .unwrap();
    let labels = d.labels();
    let benign: BTreeSet<usize> = (0..d.rows()).filter(|&i| labels[i] == d.benign_class).collect();
    let mut union = BTreeSet::new();
    let mut sizes = Vec::new();
    for rows in &plan.clients {
        let mine: Vec<usize> = rows.iter().copied().filter(|i| benign.contains(i)).collect();
        sizes.push(mine.len());
        union.extend(mine);
    }
    assert_eq!(union, benign);
    let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
    assert!(hi - lo <= 1, "benign shares {sizes:?}");
    for (c, types) in plan.attack_types.iter().enumerate() {
        assert_eq!(types.len(), 3);
        for &i in &plan.clients[c] {
            assert!(labels[i] == d.benign_class || types.contains(&labels[i]));
        }
    }
}

#[test]
fn single_client_fedavg_is_centralized_sgd() {
    let d = synth_dataset(&SynthConfig {
        rows: 300,
        seed: 6,
        ..Default::default()
    })
    .unwrap();
    let (shard, test) = d.split(0.8, &mut stream(6, &[1]));
    let init = MlpClassifier::new(d.dim(), d.n_classes(), &mut stream(6, &[2])).unwrap();
    let cfg = FlConfig {
        clients: 1,
        sampled: 1,
        local_steps: 1,
        rounds: 25,
        local_bs: 16,
        lr: 0.05,
        optimizer: LocalOptimizer::Sgd,
        seed: 9,
        ..Default::default()
    };
    let fl = train(&cfg, &init, std::slice::from_ref(&shard), &test, &DefenseKind::None).unwrap();

    let mut central = init.clone();
    for r in 0..cfg.rounds {
        let mut rng = stream(cfg.seed, &[tags::CLIENT, r as u64, 0]);
        let idx = sample_batch(shard.rows(), cfg.local_bs, &mut rng);
        let g = central
            .gradient(&shard.x.select_rows(&idx), &shard.y.select_rows(&idx))
            .unwrap();
        central.net.params.sgd_step(&g, cfg.lr).unwrap();
    }
    assert_eq!(fl.model, central, "bit-exact");
}

#[test]
fn dropping_the_gradient_constraint_hurts_training() {
    let d = synth_dataset(&SynthConfig {
        rows: 1000,
        seed: 7,
        ..Default::default()
    })
    .unwrap();
    let (train_set, test) = d.split(0.7, &mut stream(7, &[1]));
    let plan = partition(&train_set, 5, PartitionMode::Iid, &mut stream(7, &[2])).unwrap();
    let shards = plan.shards(&train_set);
    let init = MlpClassifier::new(d.dim(), d.n_classes(), &mut stream(7, &[3])).unwrap();
    let cfg = FlConfig {
        clients: 5,
        sampled: 5,
        rounds: 30,
        local_bs: 32,
        lr: 0.015,
        seed: 7,
        ..Default::default()
    };
    let acc = |epsilon: f64| {
        let defense = DefenseKind::Feddef(FedDefConfig {
            epsilon,
            ..Default::default()
        });
        let out = train(&cfg, &init, &shards, &test, &defense).unwrap();
        out.model.accuracy(&train_set.x, &train_set.y).unwrap()
    };
    let (tight, loose) = (acc(0.0), acc(f64::MAX));
    assert!(
        loose < tight,
        "training accuracy with no constraint {loose} vs epsilon 0 {tight}"
    );
}

#[test]
fn feddef_moves_inputs_and_hides_labels() {
    let d = kdd99_like(500, 8).unwrap();
    let model = MlpClassifier::new(d.dim(), d.n_classes(), &mut stream(8, &[1])).unwrap();
    let cfg = FedDefConfig {
        alpha: 1.0,
        epsilon: 0.0,
        ..Default::default()
    };
    let mut rng = stream(8, &[2]);
    let (mut far, mut hidden) = (0, 0);
    for t in 0..100 {
        let row = d.subset(&[(t * 5) % d.rows()]);
        let out = feddef_transform(&model, &row.x, &row.y, &cfg, &mut rng).unwrap();
        if out.input_distance >= 0.9 * cfg.delta {
            far += 1;
        }
        let gt = row.labels()[0];
        let yp = out.y.row(0);
        let min_at = (0..yp.len()).min_by(|&a, &b| yp[a].total_cmp(&yp[b])).unwrap();
        if min_at == gt {
            hidden += 1;
        }
    }
    assert!(far >= 90, "{far} of 100 moved at least 0.9 delta");
    assert!(hidden >= 90, "{hidden} of 100 put the true label at the minimum");
}

#[test]
fn pseudo_gradient_is_what_the_model_sees() {
    let d = synth_dataset(&SynthConfig {
        rows: 50,
        seed: 9,
        ..Default::default()
    })
    .unwrap();
    let model = MlpClassifier::new(d.dim(), d.n_classes(), &mut stream(9, &[1])).unwrap();
    let batch = d.subset(&[0, 1, 2, 3]);
    let out = feddef_transform(
        &model,
        &batch.x,
        &batch.y,
        &FedDefConfig::default(),
        &mut stream(9, &[2]),
    )
    .unwrap();
    let direct = model.gradient(&out.x, &out.y).unwrap();
    assert_eq!(direct, out.gradient);
    assert_eq!(out.x.shape(), batch.x.shape());
    let _: &Tensor = &out.y;
}
