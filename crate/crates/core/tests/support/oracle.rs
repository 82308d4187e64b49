//! Plain scalar reference formulas, written without any of the library's kernels.

pub const FLOOR: f64 = 1e-12;

pub fn softmax(z: &[f64], tau: f64) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|v| (v / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn ce(p: &[f64], y: usize) -> f64 {
    -p[y].max(FLOOR).ln()
}

pub fn kl(q: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..q.len() {
        if q[k] > 0.0 {
            s += q[k] * (q[k].max(FLOOR).ln() - p[k].max(FLOOR).ln());
        }
    }
    s
}

pub fn sorted(z: &[f64]) -> Vec<f64> {
    let mut v = z.to_vec();
    // insertion sort keeps the reference independent of the library's argsort
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && v[j - 1] > v[j] {
            v.swap(j - 1, j);
            j -= 1;
        }
    }
    v
}

pub fn ce_logits(z: &[f64], y: usize) -> f64 {
    ce(&softmax(z, 1.0), y)
}

pub fn kd(student: &[f64], teacher: &[f64], y: usize, tau: f64) -> f64 {
    ce_logits(student, y) + tau * tau * kl(&softmax(teacher, tau), &softmax(student, tau))
}

pub fn hl(student: &[f64], teacher: &[f64], y: usize) -> f64 {
    ce_logits(teacher, y) + ce_logits(student, y)
}

pub fn rg(student: &[f64], teacher: &[f64], tau: f64) -> f64 {
    tau * tau * kl(&softmax(teacher, tau), &softmax(student, tau))
}

pub fn drg(student: &[f64], teacher: &[f64], y: usize, tau: f64, alpha: f64) -> f64 {
    hl(student, teacher, y) + alpha * rg(student, teacher, tau)
}

/// `prev` is already ranked.
pub fn sr(prev: &[f64], cur: &[f64], tau: f64) -> f64 {
    tau * tau * kl(&softmax(prev, tau), &softmax(&sorted(cur), tau))
}

pub fn dsr(z: &[f64], y: usize, prev: &[f64], tau: f64, beta: f64) -> f64 {
    ce_logits(z, y) + beta * sr(prev, z, tau)
}

#[allow(clippy::too_many_arguments)]
pub fn combined(
    student: &[f64],
    teacher: &[f64],
    y: usize,
    prev: &[f64],
    tau_drg: f64,
    tau_dsr: f64,
    alpha: f64,
    beta: f64,
) -> f64 {
    hl(student, teacher, y) + alpha * rg(student, teacher, tau_drg) + beta * sr(prev, student, tau_dsr)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||, 1e-12)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}

/// Population variance per rank position, then the mean over positions.
pub fn ranked_variance(rows: &[Vec<f64>]) -> f64 {
    let ranked: Vec<Vec<f64>> = rows.iter().map(|r| sorted(r)).collect();
    let n = ranked.len() as f64;
    let k = ranked[0].len();
    let mut total = 0.0;
    for j in 0..k {
        let m = ranked.iter().map(|r| r[j]).sum::<f64>() / n;
        total += ranked.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / n;
    }
    total / k as f64
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}
