//! Test-only reference transcriptions of the two detectors, written in the
//! array style of the original pseudocode (full accumulator arrays, numpy
//! helpers, python indexing). Kept independent of `pipeburst::cpd`.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `np.argmax` over a boolean array: first true, else 0.
fn argmax(mask: &[bool]) -> i64 {
    mask.iter().position(|&b| b).unwrap_or(0) as i64
}

/// Python-style `a[i]` with negative indices counting from the end.
fn py_index<T: Copy>(a: &[T], i: i64) -> T {
    let n = a.len() as i64;
    a[(if i < 0 { n + i } else { i }) as usize]
}

fn take<T: Copy>(a: &[T], idx: &[i64]) -> Vec<T> {
    idx.iter().map(|&i| py_index(a, i)).collect()
}

fn mask_keep<T: Copy>(a: &[T], drop: &[bool]) -> Vec<T> {
    a.iter().zip(drop).filter(|(_, &d)| !d).map(|(&v, _)| v).collect()
}

/// `np.unique(a, return_index=True)`.
fn unique_with_index(a: &[i64]) -> (Vec<i64>, Vec<i64>) {
    let mut vals: Vec<i64> = a.to_vec();
    vals.sort();
    vals.dedup();
    let idx = vals
        .iter()
        .map(|v| a.iter().position(|x| x == v).unwrap() as i64)
        .collect();
    (vals, idx)
}

pub struct OracleCusum {
    pub s: Vec<i64>,
    pub e: Vec<i64>,
    pub amp: Vec<f64>,
    /// gp, gn, gp_real, gn_real after each step.
    pub acc: Vec<[f64; 4]>,
}

/// Line-by-line CUSUM. `ending` selects the end-estimation stage; the inner
/// call on the reversed series runs without it.
pub fn oracle_cusum(x: &[f64], thr: f64, dr: f64, ending: bool) -> OracleCusum {
    let n = x.len();
    let mut gp = vec![0.0; n];
    let mut gn = vec![0.0; n];
    let mut gp_real = vec![0.0; n];
    let mut gn_real = vec![0.0; n];
    let mut ta: Vec<i64> = vec![];
    let mut s: Vec<i64> = vec![];
    let mut e: Vec<i64> = vec![];
    let (mut tap, mut tan) = (0i64, 0i64);
    let mut amp: Vec<f64> = vec![];

    for i in 1..n {
        let diff = x[i] - x[i - 1];
        gp[i] = gp[i - 1] + diff - dr;
        gp_real[i] = gp_real[i - 1] + diff;
        gn[i] = gn[i - 1] - diff - dr;
        gn_real[i] = gn_real[i - 1] - diff;
        if gp[i] < 0.0 {
            gp[i] = 0.0;
            gp_real[i] = 0.0;
            tap = i as i64;
        }
        if gn[i] < 0.0 {
            gn[i] = 0.0;
            gn_real[i] = 0.0;
            tan = i as i64;
        }
        if gp_real[i] > thr || gn_real[i] > thr {
            ta.push(i as i64);
            if gp_real[i] > thr {
                s.push(tap);
            } else {
                s.push(tan);
            }
            gp[i] = 0.0;
            gn[i] = 0.0;
            gp_real[i] = 0.0;
            gn_real[i] = 0.0;
        }
    }
    let acc = (0..n).map(|i| [gp[i], gn[i], gp_real[i], gn_real[i]]).collect();

    if !s.is_empty() && ending {
        let xr: Vec<f64> = x.iter().rev().copied().collect();
        let s2 = oracle_cusum(&xr, thr, dr, false).s;
        e = s2.iter().rev().map(|v| n as i64 - v - 1).collect();
        let (su, j) = unique_with_index(&s);
        s = su;
        ta = take(&ta, &j);
        if s.len() != e.len() {
            if s.len() < e.len() {
                let idx: Vec<i64> = ta
                    .iter()
                    .map(|&i| argmax(&e.iter().map(|&v| v >= i).collect::<Vec<_>>()))
                    .collect();
                e = take(&e, &idx);
            } else {
                let ta_rev: Vec<i64> = ta.iter().rev().copied().collect();
                let j: Vec<i64> = e
                    .iter()
                    .map(|&i| argmax(&ta_rev.iter().map(|&t| i >= t).collect::<Vec<_>>()) - 1)
                    .collect();
                ta = take(&ta, &j);
                s = take(&s, &j);
            }
        }
        let j: Vec<bool> = (0..e.len().saturating_sub(1))
            .map(|k| e[k] - s[k + 1] > 0)
            .collect();
        if j.iter().any(|&b| b) {
            let mut drop_front = vec![false];
            drop_front.extend(&j);
            let mut drop_back = j.clone();
            drop_back.push(false);
            ta = mask_keep(&ta, &drop_front);
            s = mask_keep(&s, &drop_front);
            e = mask_keep(&e, &drop_back);
        }
        amp = e
            .iter()
            .zip(&s)
            .map(|(&ei, &si)| x[ei as usize] - x[si as usize])
            .collect();
    }
    let _ = ta;
    OracleCusum { s, e, amp, acc }
}

/// Direct per-index evaluation of the floored Shewhart condition.
pub fn oracle_shewhart(x: &[f64], threshold: f64) -> (Vec<usize>, Vec<f64>) {
    let n = x.len() as f64;
    let mut total = 0.0;
    for v in x {
        total += v;
    }
    let mean = total / n;
    let mut sq = 0.0;
    for v in x {
        sq += (v - mean) * (v - mean);
    }
    let std = (sq / n).sqrt();
    let mut tai = vec![];
    for (i, v) in x.iter().enumerate() {
        if (v - mean).abs() > threshold * std && (v - mean).abs() > threshold {
            tai.push(i);
        }
    }
    let amp = tai.iter().map(|&i| (x[i] - mean).abs()).collect();
    (tai, amp)
}

/// Seeded random series of length 10..=500 mixing steps, ramps and noise.
pub fn random_series(seed: u64) -> (Vec<f64>, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.random_range(10..=500);
    let noise = [0.0, 0.01, 0.1, 1.0][rng.random_range(0..4)];
    let mut level = rng.random_range(-20.0..60.0);
    let mut slope = 0.0;
    let mut x = Vec::with_capacity(len);
    for _ in 0..len {
        match rng.random_range(0..100) {
            0..=3 => level += rng.random_range(-15.0..15.0),
            4..=5 => slope = rng.random_range(-0.5..0.5),
            6 => slope = 0.0,
            _ => {}
        }
        level += slope;
        x.push(level + noise * (rng.random::<f64>() * 2.0 - 1.0));
    }
    let thr = [0.05, 0.3, 1.0, 2.0, 5.0, 13.0][rng.random_range(0..6)];
    let dr = [0.0, 0.0, 0.01, 0.1, 0.5][rng.random_range(0..5)];
    (x, thr, dr)
}
