//! Independent oracles shared by the integration tests and the acceptance
//! runner. Nothing here calls into the fast paths it is used to check.

#![allow(dead_code)]

use astro_float::{BigFloat, Consts, RoundingMode};
use defect_edf::features::Patch;
use defect_edf::splinefit::SplineModel;
use defect_edf::synth::{inject_defect, render_clean_patch, DefectKind, DefectSpec, PatternSpec};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

pub fn vec_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if diff == 0.0 {
        0.0
    } else {
        diff / norm
    }
}

/// `(XᵀX + λS)⁻¹` by explicit dense inversion.
fn normal_inverse(model: &SplineModel, lambda: f64) -> DMatrix<f64> {
    let x = model.design();
    let lhs = x.transpose() * x + model.penalty() * lambda;
    lhs.try_inverse().expect("normal matrix is invertible")
}

/// Penalized least-squares coefficients from the assembled normal equations.
pub fn dense_coefficients(model: &SplineModel, z: &[f64], lambda: f64) -> Vec<f64> {
    let x = model.design();
    let beta = normal_inverse(model, lambda) * (x.transpose() * DVector::from_column_slice(z));
    beta.iter().copied().collect()
}

/// Trace of the explicitly formed `m × m` hat matrix.
pub fn dense_hat_trace(model: &SplineModel, lambda: f64) -> f64 {
    let x = model.design();
    let hat = x * normal_inverse(model, lambda) * x.transpose();
    hat.trace()
}

pub fn penalized_objective(model: &SplineModel, z: &[f64], lambda: f64, beta: &[f64]) -> f64 {
    let b = DVector::from_column_slice(beta);
    let resid = DVector::from_column_slice(z) - model.design() * &b;
    resid.norm_squared() + lambda * (b.transpose() * model.penalty() * &b)[(0, 0)]
}

/// Penalty by brute force: each basis function differentiated twice with
/// central differences on a uniform grid over `[1, m]`, products integrated
/// with the trapezoid rule.
pub fn quadrature_penalty(model: &SplineModel, points: usize) -> DMatrix<f64> {
    let q = model.q();
    let (a, b) = (1.0, model.m() as f64);
    let h = (b - a) / (points - 1) as f64;
    let values: Vec<Vec<f64>> = (0..points)
        .map(|i| model.basis_values((a + i as f64 * h).min(b)))
        .collect();
    let mut second = vec![vec![0.0; q]; points];
    for i in 1..points - 1 {
        for k in 0..q {
            second[i][k] = (values[i + 1][k] - 2.0 * values[i][k] + values[i - 1][k]) / (h * h);
        }
    }
    // Second derivatives are linear within a span, so extrapolate the ends.
    for k in 0..q {
        second[0][k] = 2.0 * second[1][k] - second[2][k];
        second[points - 1][k] = 2.0 * second[points - 2][k] - second[points - 3][k];
    }
    let mut s = DMatrix::zeros(q, q);
    for (i, d) in second.iter().enumerate() {
        let w = if i == 0 || i == points - 1 { 0.5 * h } else { h };
        for j in 0..q {
            if d[j] == 0.0 {
                continue;
            }
            for k in 0..q {
                s[(j, k)] += w * d[j] * d[k];
            }
        }
    }
    s
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Quadratic-loop nearest distance per class, classes given as indices.
pub fn brute_force_distances(points: &[(Vec<f64>, usize)], k: usize, query: &[f64]) -> Vec<f64> {
    let mut best = vec![f64::INFINITY; k];
    for (p, c) in points {
        let mut s = 0.0;
        for i in 0..p.len() {
            s += (p[i] - query[i]) * (p[i] - query[i]);
        }
        let d = s.sqrt();
        if d < best[*c] {
            best[*c] = d;
        }
    }
    best
}

/// Direct `D^{-m} / Σ D^{-m}`, valid only while the powers stay in range.
pub fn naive_posterior(distances: &[f64], m: usize) -> Vec<f64> {
    let w: Vec<f64> = distances.iter().map(|d| d.powi(-(m as i32))).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

// Distances in [1e-6, 1e3] at m = 171 put class logits up to ~2400 nats
// apart, so the leading class's log probability can sit near 1e-1000.
// Resolving that next to 1 needs well over 3300 bits.
const WIDE: usize = 4096;
const RM: RoundingMode = RoundingMode::ToEven;

fn wide_to_f64(x: &BigFloat) -> f64 {
    x.to_string().parse().expect("decimal rendering parses")
}

/// Log posterior `−m ln D_j − ln Σ_i D_i^{−m}` evaluated with 4096-bit
/// floats.
pub fn extended_log_posterior(distances: &[f64], m: usize) -> Vec<f64> {
    let mut cc = Consts::new().expect("constants cache");
    let m_wide = BigFloat::from_f64(m as f64, WIDE);
    let logits: Vec<BigFloat> = distances
        .iter()
        .map(|&d| {
            let ln = BigFloat::from_f64(d, WIDE).ln(WIDE, RM, &mut cc);
            ln.mul(&m_wide, WIDE, RM).neg()
        })
        .collect();
    let mut total = BigFloat::from_f64(0.0, WIDE);
    for l in &logits {
        total = total.add(&l.exp(WIDE, RM, &mut cc), WIDE, RM);
    }
    let log_total = total.ln(WIDE, RM, &mut cc);
    logits
        .iter()
        .map(|l| wide_to_f64(&l.sub(&log_total, WIDE, RM)))
        .collect()
}

/// Sample standard deviation by the textbook two-pass formula.
pub fn two_pass_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1.0)).sqrt()
}

pub fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    10f64.powf(rng.random_range(lo.log10()..hi.log10()))
}

/// Random data row: smooth trend, a few oscillations and noise.
pub fn random_row(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let freq = rng.random_range(0.5..4.0);
    let phase = rng.random_range(0.0..6.3);
    let slope = rng.random_range(-1.0..1.0);
    let noise = rng.random_range(0.01..0.5);
    (0..m)
        .map(|j| {
            let t = j as f64 / m as f64;
            slope * t + (2.0 * std::f64::consts::PI * freq * t + phase).sin() + noise * rng.random_range(-1.0..1.0)
        })
        .collect()
}

/// Independent confusion-matrix tally for the binary defect view:
/// `(tp, fn, fp, tn)` with defect as the positive class.
pub fn confusion(is_defect: &[bool], predicted_defect: &[bool]) -> (usize, usize, usize, usize) {
    let mut t = (0, 0, 0, 0);
    for (&truth, &pred) in is_defect.iter().zip(predicted_defect) {
        match (truth, pred) {
            (true, true) => t.0 += 1,
            (true, false) => t.1 += 1,
            (false, true) => t.2 += 1,
            (false, false) => t.3 += 1,
        }
    }
    t
}

/// Runs the built binary and returns its output.
pub fn run_cli(args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_defect-edf"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Like [`run_cli`] but panics with stderr unless the command succeeds.
pub fn run_cli_ok(args: &[&str]) -> std::process::Output {
    let out = run_cli(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Schema violations of a report JSON document, empty when it validates.
pub fn report_schema_errors(report_json: &str) -> Vec<String> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/schema/report.schema.json");
    let schema: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let instance: serde_json::Value = serde_json::from_str(report_json).expect("report is JSON");
    validator.iter_errors(&instance).map(|e| e.to_string()).collect()
}

/// Default-channel patch at a random frequency and noise level; half carry
/// a crater or dirt defect.
pub fn random_patch(r: &mut ChaCha8Rng, m: usize) -> Patch {
    let spec = PatternSpec {
        frequency: [8.0, 16.0, 32.0, 64.0][r.random_range(0..4)],
        noise_sigma: r.random_range(0.002..0.05),
        ..PatternSpec::default()
    };
    let origin = r.random_range(0..spec.pattern_width - m);
    let clean = render_clean_patch(&spec, m, origin, r.random()).unwrap();
    if r.random_bool(0.5) {
        return clean;
    }
    let defect = DefectSpec {
        kind: if r.random_bool(0.5) {
            DefectKind::Crater
        } else {
            DefectKind::Dirt
        },
        center_row: r.random_range(10..m - 10) as f64,
        center_col: r.random_range(10..m - 10) as f64,
        radius: r.random_range(6.0..14.0),
        strength: r.random_range(0.5..2.0),
    };
    inject_defect(&clean, &spec, origin, &defect).unwrap()
}
