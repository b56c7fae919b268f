use super::*;
use crate::numerics::softmax;

fn small_shape() -> ModelShape {
    ModelShape {
        input_width: 6,
        fc_width: 5,
        hidden: 4,
    }
}

fn random_seq(rng: &mut Rng, t: usize, width: usize) -> Matrix {
    Matrix::from_vec(t, width, (0..t * width).map(|_| rng.standard_normal()).collect()).unwrap()
}

/// Biases drawn too, so ReLU and gate saturation patterns vary.
fn random_model(arch: Architecture, rng: &mut Rng) -> ModelParams {
    let mut p = ModelParams::init(arch, small_shape(), rng);
    for t in p.tensors_mut() {
        if !t.is_weight {
            for v in t.values.iter_mut() {
                *v = rng.uniform_range(-0.5, 0.5);
            }
        }
    }
    p
}

fn random_weights(rng: &mut Rng) -> ClassWeights {
    ClassWeights {
        domain: (0..NUM_DOMAINS).map(|_| rng.uniform_range(0.5, 2.0)).collect(),
        relation: (0..NUM_RELATIONS).map(|_| rng.uniform_range(0.5, 2.0)).collect(),
    }
}

fn loss_at(p: &ModelParams, seq: &Matrix, mask: Option<&[f64]>, labels: Labels, w: &ClassWeights, l2: f64) -> f64 {
    let dropout = match mask {
        Some(m) => Dropout::Mask(m),
        None => Dropout::Off,
    };
    let trace = p.forward(seq, dropout).unwrap();
    p.joint_loss(&trace.outputs, labels, w, l2).unwrap()
}

/// Central differences over every parameter, independent of `backward`.
fn numeric_gradient(p: &ModelParams, seq: &Matrix, mask: Option<&[f64]>, labels: Labels, w: &ClassWeights, l2: f64) -> Vec<f64> {
    let eps = 1e-5;
    let base = p.to_flat();
    let mut probe = p.clone();
    let mut flat = base.clone();
    (0..base.len())
        .map(|k| {
            flat[k] = base[k] + eps;
            probe.load_flat(&flat).unwrap();
            let up = loss_at(&probe, seq, mask, labels, w, l2);
            flat[k] = base[k] - eps;
            probe.load_flat(&flat).unwrap();
            let down = loss_at(&probe, seq, mask, labels, w, l2);
            flat[k] = base[k];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = Rng::new(42);
    for arch in Architecture::ALL {
        for trial in 0..6 {
            let p = random_model(arch, &mut rng);
            let t = 1 + trial % 5;
            let seq = random_seq(&mut rng, t, 6);
            let labels = Labels {
                domain: rng.below(NUM_DOMAINS),
                relation: rng.below(NUM_RELATIONS),
            };
            let w = random_weights(&mut rng);
            let l2 = 1e-3;
            let mask: Option<Vec<f64>> = (trial % 2 == 1)
                .then(|| (0..4).map(|_| if rng.uniform() < 0.3 { 0.0 } else { 1.0 / 0.7 }).collect());
            let dropout = match &mask {
                Some(m) => Dropout::Mask(m),
                None => Dropout::Off,
            };
            let trace = p.forward(&seq, dropout).unwrap();
            let analytic = p.backward(&seq, labels, &w, l2, &trace).unwrap().to_flat();
            let numeric = numeric_gradient(&p, &seq, mask.as_deref(), labels, &w, l2);
            let err = max_relative_error(&analytic, &numeric);
            assert!(err < 1e-4, "{arch} trial {trial}: relative error {err}");
        }
    }
}

#[test]
fn head_outputs_are_distributions() {
    let mut rng = Rng::new(3);
    for arch in Architecture::ALL {
        let p = random_model(arch, &mut rng);
        let out = p.predict(&random_seq(&mut rng, 3, 6)).unwrap();
        assert_eq!(out.domain.is_some(), arch.has_domain_head());
        assert_eq!(out.relation.is_some(), arch.has_relation_head());
        for probs in out.domain.iter().chain(out.relation.iter()) {
            assert!(probs.iter().all(|v| *v >= 0.0));
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
    let st_dom = random_model(Architecture::SingleDomain, &mut rng);
    let out = st_dom.predict(&random_seq(&mut rng, 2, 6)).unwrap();
    assert_eq!(out.domain.unwrap().len(), 5);
}

#[test]
fn eval_mode_is_deterministic() {
    let mut rng = Rng::new(4);
    let p = random_model(Architecture::MultiTopDown, &mut rng);
    let seq = random_seq(&mut rng, 5, 6);
    let a = p.predict(&seq).unwrap();
    let b = p.predict(&seq).unwrap();
    let bits = |o: &HeadOutputs| o.relation.as_ref().unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn top_down_coupling_adds_domain_column() {
    let mut rng = Rng::new(5);
    let mut p = random_model(Architecture::MultiTopDown, &mut rng);
    let d = Domain::from_index(3).unwrap().index();
    let head = p.domain_head.as_mut().unwrap();
    head.weight = Matrix::zeros(NUM_DOMAINS, 4);
    head.bias = vec![0.0; NUM_DOMAINS];
    head.bias[d] = 2000.0;
    let seq = random_seq(&mut rng, 3, 6);
    let trace = p.forward(&seq, Dropout::Off).unwrap();
    assert_eq!(trace.outputs.domain.as_ref().unwrap()[d], 1.0);

    let r = p.relation_head.as_ref().unwrap();
    let h = &trace.dropped;
    let mut logits = r.bias.clone();
    for j in 0..NUM_RELATIONS {
        for k in 0..4 {
            logits[j] += r.weight.get(j, k) * h[k];
        }
        logits[j] += r.weight.get(j, 4 + d);
    }
    let want = softmax(&logits).unwrap();
    for (a, b) in trace.outputs.relation.as_ref().unwrap().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

use crate::taxonomy::Domain;

#[test]
fn zeroed_coupling_matches_independent_heads() {
    let mut rng = Rng::new(6);
    let ind = random_model(Architecture::MultiIndependent, &mut rng);
    let mut td = ModelParams::zeros(Architecture::MultiTopDown, small_shape());
    td.input_fc = ind.input_fc.clone();
    td.lstm = ind.lstm.clone();
    td.domain_head = ind.domain_head.clone();
    let src = ind.relation_head.as_ref().unwrap();
    let dst = td.relation_head.as_mut().unwrap();
    for j in 0..NUM_RELATIONS {
        for k in 0..4 {
            dst.weight.set(j, k, src.weight.get(j, k));
        }
    }
    dst.bias = src.bias.clone();
    for _ in 0..5 {
        let seq = random_seq(&mut rng, 4, 6);
        let a = ind.predict(&seq).unwrap().relation.unwrap();
        let b = td.predict(&seq).unwrap().relation.unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn relation_loss_reaches_domain_head_only_top_down() {
    let mut rng = Rng::new(7);
    let relation_only = ClassWeights {
        domain: vec![0.0; NUM_DOMAINS],
        relation: vec![1.0; NUM_RELATIONS],
    };
    for arch in [Architecture::MultiIndependent, Architecture::MultiTopDown] {
        let p = random_model(arch, &mut rng);
        let seq = random_seq(&mut rng, 3, 6);
        let labels = Labels { domain: 1, relation: 4 };
        let trace = p.forward(&seq, Dropout::Off).unwrap();
        let g = p.backward(&seq, labels, &relation_only, 0.0, &trace).unwrap();
        let head = g.domain_head.unwrap();
        let norm: f64 = head.weight.as_slice().iter().chain(&head.bias).map(|v| v.abs()).sum();
        match arch {
            Architecture::MultiIndependent => assert_eq!(norm, 0.0),
            _ => assert!(norm > 1e-8, "MT-TD domain head gradient {norm}"),
        }
    }
}

#[test]
fn perfect_heads_have_flat_bias_gradient() {
    let mut rng = Rng::new(8);
    let mut p = random_model(Architecture::MultiIndependent, &mut rng);
    let labels = Labels { domain: 2, relation: 4 };
    for (head, label) in [(p.domain_head.as_mut().unwrap(), 2), (p.relation_head.as_mut().unwrap(), 4)] {
        head.weight = Matrix::zeros(head.weight.rows(), head.weight.cols());
        head.bias.iter_mut().for_each(|b| *b = 0.0);
        head.bias[label] = 100.0;
    }
    let seq = random_seq(&mut rng, 2, 6);
    let trace = p.forward(&seq, Dropout::Off).unwrap();
    let loss = p.joint_loss(&trace.outputs, labels, &ClassWeights::uniform(), 0.0).unwrap();
    assert!(loss < 1e-10);
    let g = p.backward(&seq, labels, &ClassWeights::uniform(), 0.0, &trace).unwrap();
    for head in [g.domain_head.unwrap(), g.relation_head.unwrap()] {
        assert!(head.bias.iter().all(|v| v.abs() < 1e-10));
    }
}

#[test]
fn joint_loss_is_sum_of_heads_plus_penalty() {
    let mut rng = Rng::new(9);
    let p = random_model(Architecture::MultiTopDown, &mut rng);
    let seq = random_seq(&mut rng, 3, 6);
    let out = p.predict(&seq).unwrap();
    let w = random_weights(&mut rng);
    let labels = Labels { domain: 0, relation: 7 };
    let dom = weighted_cross_entropy(out.domain.as_ref().unwrap(), 0, &w.domain).unwrap();
    let rel = weighted_cross_entropy(out.relation.as_ref().unwrap(), 7, &w.relation).unwrap();
    assert!((p.joint_loss(&out, labels, &w, 0.0).unwrap() - (dom + rel)).abs() < 1e-12);

    let mut one = ModelParams::zeros(
        Architecture::SingleRelation,
        ModelShape {
            input_width: 1,
            fc_width: 1,
            hidden: 1,
        },
    );
    one.input_fc.weight.set(0, 0, 2.0);
    // every other weight is zero, so the penalty sees only [[2]]
    assert!((one.l2_penalty(1e-3) - 0.002).abs() < 1e-15);
}

#[test]
fn dropout_preserves_mean() {
    let mut rng = Rng::new(10);
    let p = random_model(Architecture::SingleRelation, &mut rng);
    let seq = random_seq(&mut rng, 4, 6);
    let clean = p.forward(&seq, Dropout::Off).unwrap().dropped;
    let mut mean = vec![0.0; clean.len()];
    let draws = 10_000;
    for _ in 0..draws {
        let trace = p.forward(&seq, Dropout::Sample { rate: 0.3, rng: &mut rng }).unwrap();
        mean.iter_mut().zip(&trace.dropped).for_each(|(m, v)| *m += v / draws as f64);
    }
    for (m, c) in mean.iter().zip(&clean) {
        assert!((m - c).abs() <= 0.03 * c.abs(), "{m} vs {c}");
    }
}

#[test]
fn shape_errors() {
    let mut rng = Rng::new(11);
    let p = random_model(Architecture::MultiIndependent, &mut rng);
    assert!(p.forward(&random_seq(&mut rng, 2, 5), Dropout::Off).is_err());
    assert!(p.forward(&Matrix::zeros(0, 6), Dropout::Off).is_err());
    assert!(p.forward(&random_seq(&mut rng, 2, 6), Dropout::Mask(&[1.0])).is_err());
    let seq = random_seq(&mut rng, 3, 6);
    let trace = p.forward(&seq, Dropout::Off).unwrap();
    let shorter = random_seq(&mut rng, 2, 6);
    let labels = Labels { domain: 0, relation: 0 };
    assert!(p.backward(&shorter, labels, &ClassWeights::uniform(), 0.0, &trace).is_err());
    assert!(p.validate().is_ok());
    let mut broken = p.clone();
    broken.domain_head = None;
    assert!(broken.validate().is_err());
}

#[test]
fn architecture_tags_parse() {
    for a in Architecture::ALL {
        assert_eq!(a.tag().parse::<Architecture>().unwrap(), a);
    }
    assert_eq!("mt-td".parse::<Architecture>().unwrap(), Architecture::MultiTopDown);
    assert!("MT".parse::<Architecture>().is_err());
}
