//! Oracles shared by the integration test targets.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use percept_age::architecture::{build, forward_on_tape, Inputs, ModelParams, ModelVariant, NetworkSpec, Scale};
use percept_age::dataset::{
    encode_attributes, AnnotationRecord, Category, Gender, Happiness, Makeup, ObserverApparent, Race, Split,
};
use percept_age::evaluation::{
    age_histogram, error_by_age_window, mae, observer_eval, stratify, AgeLabel, Attribute, PredictionRow, PredictionSet,
    DEFAULT_WINDOW,
};
use percept_age::tensor::{Padding, Tape, Tensor, Var};
use percept_age::training::{compute_loss, Targets, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale, since the
/// central difference cannot resolve them relatively.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self) -> bool {
        self.max_rel_err < FD_TOLERANCE && self.checked > 0
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            max_rel_err: self.max_rel_err.max(other.max_rel_err),
            checked: self.checked + other.checked,
        }
    }
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences for every element of every input.
pub fn grad_check<F>(inputs: &[Tensor], f: F) -> GradCheck
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |values: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item().expect("scalar output")
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();

    let mut result = GradCheck {
        max_rel_err: 0.0,
        checked: 0,
    };
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            result.max_rel_err = result.max_rel_err.max(rel_err(analytic.data()[j], numeric));
            result.checked += 1;
        }
    }
    result
}

/// Reduces any tensor to a scalar through fixed random weights, so every
/// output element contributes a distinct amount to the gradient.
pub fn project(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let flat = tape.flatten(x).unwrap();
    let n = tape.value(flat).numel();
    let w = uniform(&mut rng(seed ^ 0x9e37), &[n, 1], -1.0, 1.0);
    let w = tape.constant(w);
    let y = tape.dense(flat, w, None).unwrap();
    tape.sum(y).unwrap()
}

pub const GRAD_OPS: [&str; 7] = ["dense", "conv2d", "maxpool2", "relu", "sigmoid", "concat", "mse"];

/// Gradient check of one primitive on the random instance drawn from `seed`.
pub fn op_grad_check(op: &str, seed: u64) -> GradCheck {
    let mut r = rng(seed);
    match op {
        "dense" => {
            let inputs = [
                uniform(&mut r, &[13], -1.0, 1.0),
                uniform(&mut r, &[13, 10], -1.0, 1.0),
                uniform(&mut r, &[10], -1.0, 1.0),
            ];
            grad_check(&inputs, |t, v| {
                let y = t.dense(v[0], v[1], Some(v[2])).unwrap();
                project(t, y, seed)
            })
        }
        "conv2d" => {
            let stride = 1 + (seed % 2) as usize;
            let padding = if seed % 4 < 2 { Padding::Same } else { Padding::Valid };
            let inputs = [
                uniform(&mut r, &[5, 5, 2], -1.0, 1.0),
                uniform(&mut r, &[3, 3, 2, 3], -1.0, 1.0),
                uniform(&mut r, &[3], -1.0, 1.0),
            ];
            grad_check(&inputs, |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), stride, padding).unwrap();
                project(t, y, seed)
            })
        }
        "maxpool2" => {
            // Distinct values at least 0.009 apart keep every window's
            // maximum well clear of a tie under the finite-difference step.
            let mut values: Vec<f64> = (0..8 * 8 * 3).map(|i| i as f64 * 0.01).collect();
            values.shuffle(&mut r);
            for v in &mut values {
                *v += r.random_range(0.0..0.001);
            }
            let inputs = [Tensor::new(vec![8, 8, 3], values).unwrap()];
            grad_check(&inputs, |t, v| {
                let y = t.maxpool2(v[0]).unwrap();
                project(t, y, seed)
            })
        }
        "relu" => {
            let n = 16;
            let values = (0..n)
                .map(|_| {
                    let m = r.random_range(0.01..1.0);
                    if r.random_bool(0.5) {
                        m
                    } else {
                        -m
                    }
                })
                .collect();
            let inputs = [Tensor::new(vec![n], values).unwrap()];
            grad_check(&inputs, |t, v| {
                let y = t.relu(v[0]).unwrap();
                project(t, y, seed)
            })
        }
        "sigmoid" => {
            let inputs = [uniform(&mut r, &[16], -4.0, 4.0)];
            grad_check(&inputs, |t, v| {
                let y = t.sigmoid(v[0]).unwrap();
                project(t, y, seed)
            })
        }
        "concat" => {
            let inputs = [uniform(&mut r, &[5], -1.0, 1.0), uniform(&mut r, &[7], -1.0, 1.0)];
            grad_check(&inputs, |t, v| {
                let y = t.concat(&[v[0], v[1]]).unwrap();
                project(t, y, seed)
            })
        }
        "mse" => {
            let inputs = [uniform(&mut r, &[6], -1.0, 1.0), uniform(&mut r, &[6], -1.0, 1.0)];
            grad_check(&inputs, |t, v| t.mse(v[0], v[1]).unwrap())
        }
        other => panic!("no gradient check for `{other}`"),
    }
}

/// Random desk-scale sample for `variant`.
pub fn random_sample(variant: ModelVariant, rng: &mut impl Rng) -> (Tensor, Option<Tensor>, Targets) {
    let image = uniform(rng, &Scale::Desk.image_shape(), 0.0, 1.0);
    let record = random_record(rng, 0);
    let observer = variant
        .uses_observer()
        .then(|| percept_age::dataset::ObserverGender::ALL[rng.random_range(0..2)]);
    let attrs = variant.attribute_len().map(|_| encode_attributes(&record, observer).to_tensor());
    let targets = Targets {
        apparent: rng.random_range(0.05..0.95),
        real: rng.random_range(0.05..0.95),
    };
    (image, attrs, targets)
}

fn network_loss(
    spec: &NetworkSpec,
    params: &ModelParams,
    image: &Tensor,
    attrs: Option<&Tensor>,
    targets: Targets,
    config: &TrainConfig,
    trainable: &BTreeSet<String>,
) -> (Tape, Var, BTreeMap<String, Var>) {
    let mut tape = Tape::new();
    let out = forward_on_tape(&mut tape, spec, params, Inputs::new(image, attrs), trainable).unwrap();
    let loss = compute_loss(&mut tape, &out, targets, config).unwrap();
    (tape, loss, out.params)
}

/// Gradient check of the full training loss of a randomly initialised
/// desk network. Every parameter tensor contributes `per_tensor` randomly
/// chosen elements.
pub fn network_grad_check(variant: ModelVariant, seed: u64, per_tensor: usize) -> GradCheck {
    let mut r = rng(seed);
    let (spec, params) = build(variant, Scale::Desk, seed);
    let config = TrainConfig::for_variant(variant);
    let (image, attrs, targets) = random_sample(variant, &mut r);
    let names: BTreeSet<String> = params.names().map(str::to_owned).collect();

    let (tape, loss, vars) = network_loss(&spec, &params, &image, attrs.as_ref(), targets, &config, &names);
    let grads = tape.backward(loss).unwrap();
    let eval = |p: &ModelParams| {
        let (tape, loss, _) = network_loss(&spec, p, &image, attrs.as_ref(), targets, &config, &BTreeSet::new());
        tape.value(loss).item().unwrap()
    };

    let mut result = GradCheck {
        max_rel_err: 0.0,
        checked: 0,
    };
    for name in &names {
        let analytic = grads.get(vars[name]).expect("trainable parameter has a gradient").clone();
        for _ in 0..per_tensor {
            let j = r.random_range(0..analytic.numel());
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data_mut()[j] += FD_STEP;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            result.max_rel_err = result.max_rel_err.max(rel_err(analytic.data()[j], numeric));
            result.checked += 1;
        }
    }
    result
}

/// Direct cross-correlation over `h×w×c` input and `kh×kw×c×o` kernel.
pub fn naive_conv(input: &Tensor, kernel: &Tensor, bias: &[f64], stride: usize, padding: Padding) -> Tensor {
    let [h, w, c] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let [kh, kw, _, o] = [kernel.shape()[0], kernel.shape()[1], kernel.shape()[2], kernel.shape()[3]];
    let (oh, ow, top, left) = match padding {
        Padding::Valid => ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0),
        Padding::Same => {
            let oh = h.div_ceil(stride);
            let ow = w.div_ceil(stride);
            let ph = ((oh - 1) * stride + kh).saturating_sub(h);
            let pw = ((ow - 1) * stride + kw).saturating_sub(w);
            (oh, ow, ph / 2, pw / 2)
        }
    };
    let x = |i: isize, j: isize, ch: usize| -> f64 {
        if i < 0 || j < 0 || i >= h as isize || j >= w as isize {
            0.0
        } else {
            input.data()[(i as usize * w + j as usize) * c + ch]
        }
    };
    let mut out = vec![0.0; oh * ow * o];
    for oi in 0..oh {
        for oj in 0..ow {
            for oc in 0..o {
                let mut acc = bias[oc];
                for a in 0..kh {
                    for b in 0..kw {
                        for ch in 0..c {
                            let i = (oi * stride + a) as isize - top as isize;
                            let j = (oj * stride + b) as isize - left as isize;
                            acc += x(i, j, ch) * kernel.data()[((a * kw + b) * c + ch) * o + oc];
                        }
                    }
                }
                out[(oi * ow + oj) * o + oc] = acc;
            }
        }
    }
    Tensor::new(vec![oh, ow, o], out).unwrap()
}

fn pick<C: Category>(rng: &mut impl Rng) -> C {
    C::ALL[rng.random_range(0..C::ALL.len())]
}

pub fn random_record(rng: &mut impl Rng, i: usize) -> AnnotationRecord {
    let real_age: f64 = rng.random_range(1.0..95.0);
    let apparent_mean: f64 = (real_age + rng.random_range(-6.0..6.0)).clamp(0.0, 100.0);
    AnnotationRecord {
        image_id: format!("img_{i:05}"),
        split: [Split::Train, Split::Validation, Split::Test][rng.random_range(0..3)],
        real_age,
        apparent_mean,
        apparent_std: rng.random_range(0.0..5.0),
        gender: pick::<Gender>(rng),
        race: pick::<Race>(rng),
        happiness: pick::<Happiness>(rng),
        makeup: pick::<Makeup>(rng),
        apparent_by_observer: Some(ObserverApparent {
            female: (apparent_mean + rng.random_range(-3.0..3.0)).clamp(0.0, 100.0),
            male: (apparent_mean + rng.random_range(-3.0..3.0)).clamp(0.0, 100.0),
        }),
    }
}

/// Seeded records with predictions scattered around the truth. Every
/// other seed omits the real head.
pub fn random_prediction_set(seed: u64, n: usize) -> (PredictionSet, Vec<AnnotationRecord>) {
    let mut r = rng(seed);
    let records: Vec<_> = (0..n).map(|i| random_record(&mut r, i)).collect();
    let dual = seed % 2 == 0;
    let rows = records
        .iter()
        .map(|rec| PredictionRow {
            image_id: rec.image_id.clone(),
            apparent_pred: rec.apparent_mean + r.random_range(-10.0..10.0),
            real_pred: dual.then(|| rec.real_age + r.random_range(-10.0..10.0)),
        })
        .collect();
    (PredictionSet::new(rows).unwrap(), records)
}

pub fn brute_mae(pairs: &[(f64, f64)]) -> f64 {
    let mut s = 0.0;
    for (p, t) in pairs {
        s += (p - t).abs();
    }
    s / pairs.len() as f64
}

pub fn lookup<'a>(preds: &'a PredictionSet, id: &str) -> &'a PredictionRow {
    preds.rows().iter().find(|r| r.image_id == id).unwrap()
}

fn label_pair(p: &PredictionRow, r: &AnnotationRecord, label: AgeLabel) -> (f64, f64) {
    match label {
        AgeLabel::Real => (p.real_pred.unwrap_or(p.apparent_pred), r.real_age),
        AgeLabel::Apparent => (p.apparent_pred, r.apparent_mean),
    }
}

pub fn brute_label_mae(preds: &PredictionSet, records: &[&AnnotationRecord], label: AgeLabel) -> f64 {
    let pairs: Vec<(f64, f64)> = records
        .iter()
        .map(|r| label_pair(lookup(preds, &r.image_id), r, label))
        .collect();
    brute_mae(&pairs)
}

fn truth(r: &AnnotationRecord, label: AgeLabel) -> f64 {
    match label {
        AgeLabel::Real => r.real_age,
        AgeLabel::Apparent => r.apparent_mean,
    }
}

const LABELS: [AgeLabel; 2] = [AgeLabel::Real, AgeLabel::Apparent];

/// Largest deviation between `mae` and a plain re-summation.
pub fn mae_oracle_err(seed: u64) -> f64 {
    let mut r = rng(seed);
    let p: Vec<f64> = (0..100).map(|_| r.random_range(-50.0..150.0)).collect();
    let t: Vec<f64> = (0..100).map(|_| r.random_range(0.0..100.0)).collect();
    let pairs: Vec<_> = p.iter().copied().zip(t.iter().copied()).collect();
    (mae(&p, &t).unwrap() - brute_mae(&pairs)).abs()
}

/// Largest deviation of any stratified value from per-subset brute force.
/// Structural mismatches (counts, empty rows) count as infinite error.
pub fn stratify_oracle_err(seed: u64) -> f64 {
    let (preds, records) = random_prediction_set(seed, 300);
    let train: Vec<AnnotationRecord> = records.iter().filter(|r| r.split == Split::Train).cloned().collect();
    let mut err: f64 = 0.0;
    for attribute in Attribute::ALL {
        let rows = stratify(&preds, &records, &train, attribute).unwrap();
        if rows.len() != attribute.categories().len() {
            return f64::INFINITY;
        }
        for row in &rows {
            let members: Vec<&AnnotationRecord> =
                records.iter().filter(|r| attribute.category_of(r) == row.category).collect();
            let k = train.iter().filter(|r| attribute.category_of(r) == row.category).count();
            if row.n != members.len() {
                return f64::INFINITY;
            }
            err = err.max((row.train_pct.unwrap() - 100.0 * k as f64 / train.len() as f64).abs());
            if members.is_empty() {
                if row.mae_real.is_some() || row.mae_apparent.is_some() {
                    return f64::INFINITY;
                }
                continue;
            }
            for (got, label) in [(row.mae_real, AgeLabel::Real), (row.mae_apparent, AgeLabel::Apparent)] {
                err = err.max((got.unwrap() - brute_label_mae(&preds, &members, label)).abs());
            }
        }
    }
    err
}

/// Largest gap between the count-weighted mean of category MAEs and the
/// overall MAE.
pub fn weighted_identity_err(seed: u64) -> f64 {
    let (preds, records) = random_prediction_set(seed, 250);
    let all: Vec<&AnnotationRecord> = records.iter().collect();
    let mut err: f64 = 0.0;
    for label in LABELS {
        let overall = brute_label_mae(&preds, &all, label);
        for attribute in Attribute::ALL {
            let rows = stratify(&preds, &records, &[], attribute).unwrap();
            let weighted: f64 = rows
                .iter()
                .filter_map(|r| {
                    let m = if label == AgeLabel::Real { r.mae_real } else { r.mae_apparent };
                    m.map(|m| m * r.n as f64)
                })
                .sum::<f64>()
                / records.len() as f64;
            err = err.max((weighted - overall).abs());
        }
    }
    err
}

pub fn window_oracle_err(seed: u64) -> f64 {
    let (preds, records) = random_prediction_set(seed, 200);
    let mut err: f64 = 0.0;
    for label in LABELS {
        let curve = error_by_age_window(&preds, &records, label, DEFAULT_WINDOW).unwrap();
        let mut expected = Vec::new();
        for c in 0..=100 {
            let center = c as f64;
            let members: Vec<&AnnotationRecord> = records
                .iter()
                .filter(|r| (truth(r, label) - center).abs() <= DEFAULT_WINDOW / 2.0)
                .collect();
            if !members.is_empty() {
                expected.push((center, brute_label_mae(&preds, &members, label), members.len()));
            }
        }
        if curve.len() != expected.len() {
            return f64::INFINITY;
        }
        for (p, (c, m, n)) in curve.iter().zip(&expected) {
            if (p.center, p.count) != (*c, *n) {
                return f64::INFINITY;
            }
            err = err.max((p.mae - m).abs());
        }
    }
    err
}

/// Whether every histogram bin equals a direct count.
pub fn histogram_oracle_ok(seed: u64) -> bool {
    let (_, records) = random_prediction_set(seed, 400);
    LABELS.iter().all(|&label| {
        [1.0, 2.5, 5.0].iter().all(|&width| {
            let h = age_histogram(&records, label, width).unwrap();
            let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
            for r in &records {
                *counts.entry((truth(r, label) / width).floor() as i64).or_default() += 1;
            }
            let expected: Vec<(f64, usize)> = counts.into_iter().map(|(k, n)| (k as f64 * width, n)).collect();
            h.bins == expected && h.total() == records.len()
        })
    })
}

pub fn observer_oracle_err(seed: u64) -> f64 {
    let (_, records) = random_prediction_set(seed, 120);
    let mut r = rng(seed + 100);
    let mut set = |shift: f64| {
        let rows = records
            .iter()
            .map(|rec| PredictionRow {
                image_id: rec.image_id.clone(),
                apparent_pred: rec.apparent_mean + shift + r.random_range(-4.0..4.0),
                real_pred: None,
            })
            .collect();
        PredictionSet::new(rows).unwrap()
    };
    let (f, m) = (set(1.0), set(-1.0));
    let report = observer_eval(&f, &m, &records).unwrap();
    let pairs = |preds: &PredictionSet, female: bool| -> Vec<(f64, f64)> {
        records
            .iter()
            .map(|rec| {
                let o = rec.apparent_by_observer.unwrap();
                (lookup(preds, &rec.image_id).apparent_pred, if female { o.female } else { o.male })
            })
            .collect()
    };
    if report.female.n != records.len() || report.male.n != records.len() {
        return f64::INFINITY;
    }
    [
        (report.female.matched, brute_mae(&pairs(&f, true))),
        (report.female.cross, brute_mae(&pairs(&m, true))),
        (report.male.matched, brute_mae(&pairs(&m, false))),
        (report.male.cross, brute_mae(&pairs(&f, false))),
    ]
    .iter()
    .map(|(a, b)| (a - b).abs())
    .fold(0.0, f64::max)
}
