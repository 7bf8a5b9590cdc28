//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;

/// `(class, start, end)` runs found by scanning for label changes.
pub fn runs(labels: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut bounds = vec![0];
    bounds.extend((1..labels.len()).filter(|&t| labels[t] != labels[t - 1]));
    bounds.push(labels.len());
    bounds.windows(2).map(|w| (labels[w[0]], w[0], w[1])).collect()
}

pub fn accuracy(pred: &[usize], gt: &[usize]) -> f64 {
    let hits = (0..gt.len()).filter(|&t| pred[t] == gt[t]).count();
    100.0 * hits as f64 / gt.len() as f64
}

/// Full-table Levenshtein distance.
pub fn levenshtein(a: &[usize], b: &[usize]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

pub fn edit(pred: &[usize], gt: &[usize]) -> f64 {
    let p: Vec<usize> = runs(pred).iter().map(|r| r.0).collect();
    let g: Vec<usize> = runs(gt).iter().map(|r| r.0).collect();
    let n = p.len().max(g.len());
    (100.0 * (1.0 - levenshtein(&p, &g) as f64 / n as f64)).max(0.0)
}

/// `(tp, fp, fn)` by frame counting; IoU compared as exact fractions.
pub fn counts(pred: &[usize], gt: &[usize], k: u32) -> (usize, usize, usize) {
    let (ps, gs) = (runs(pred), runs(gt));
    let mut used = vec![false; gs.len()];
    let (mut tp, mut fp) = (0, 0);
    for &(c, s, e) in &ps {
        let mut best: Option<(usize, usize, usize)> = None;
        for (j, &(gc, gs_, ge)) in gs.iter().enumerate() {
            if gc != c {
                continue;
            }
            let inside = |t: usize, a: usize, b: usize| a <= t && t < b;
            let lo = s.min(gs_);
            let hi = e.max(ge);
            let inter = (lo..hi).filter(|&t| inside(t, s, e) && inside(t, gs_, ge)).count();
            let union = (lo..hi).filter(|&t| inside(t, s, e) || inside(t, gs_, ge)).count();
            if best.map_or(true, |(bi, bu, _)| inter * bu > bi * union) {
                best = Some((inter, union, j));
            }
        }
        match best {
            Some((i, u, j)) if 100 * i > k as usize * u && !used[j] => {
                used[j] = true;
                tp += 1;
            }
            _ => fp += 1,
        }
    }
    (tp, fp, used.iter().filter(|u| !**u).count())
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Harmonic mean of precision and recall, as a percentage, evaluated with
/// exact fractions and rounded once at the end.
pub fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let (t, p_den, r_den) = (tp as u128, (tp + fp) as u128, (tp + fn_) as u128);
    // P = t / p_den, R = t / r_den; 2PR / (P + R)
    let num = 2 * t * t * p_den * r_den;
    let den = p_den * r_den * (t * r_den + t * p_den);
    let g = gcd(num, den);
    let (num, den) = (100 * num / g, den / g);
    num as f64 / den as f64
}

/// Random label sequence with runs, `T <= max_len`, `C <= max_classes`.
pub fn random_labels<R: Rng>(rng: &mut R, len: usize, classes: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let c = rng.random_range(0..classes);
        let run = rng.random_range(1..=6);
        out.extend(std::iter::repeat_n(c, run.min(len - out.len())));
    }
    out
}
