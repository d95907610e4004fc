//! Brute-force reference implementations of the evaluation metrics,
//! written directly from the metric definitions on nested `Vec`s.

#![allow(dead_code, clippy::needless_range_loop)]

pub type Grid = Vec<Vec<f64>>;

const EPS: f64 = f64::EPSILON;

pub struct Oracle {
    pub pa: f64,
    pub f_max: f64,
    pub f_mean: f64,
    pub f_weighted: f64,
    pub s_measure: f64,
    pub e_measure: f64,
    pub iou: f64,
    pub dice: f64,
    pub ber: f64,
    pub mae: f64,
    pub f_curve: Vec<f64>,
    pub e_curve: Vec<f64>,
}

fn div0(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

fn dims(g: &Grid) -> (usize, usize) {
    (g.len(), g[0].len())
}

fn is_fg(v: f64) -> bool {
    v >= 0.5
}

/// `(tp, tn, fp, fn)` for `pred >= t` against `gt >= 0.5`.
pub fn counts(pred: &Grid, gt: &Grid, t: f64) -> (f64, f64, f64, f64) {
    let (h, w) = dims(pred);
    let (mut tp, mut tn, mut fp, mut fnn) = (0.0, 0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let p = pred[y][x] >= t;
            let g = is_fg(gt[y][x]);
            if p && g {
                tp += 1.0;
            } else if !p && !g {
                tn += 1.0;
            } else if p {
                fp += 1.0;
            } else {
                fnn += 1.0;
            }
        }
    }
    (tp, tn, fp, fnn)
}

pub fn mean(g: &Grid) -> f64 {
    let (h, w) = dims(g);
    g.iter().flatten().sum::<f64>() / (h * w) as f64
}

pub fn adaptive(pred: &Grid) -> f64 {
    let t = 2.0 * mean(pred);
    if t > 1.0 {
        1.0
    } else {
        t
    }
}

pub fn f_at(pred: &Grid, gt: &Grid, t: f64) -> f64 {
    let (tp, _, fp, fnn) = counts(pred, gt, t);
    let p = div0(tp, tp + fp);
    let r = div0(tp, tp + fnn);
    div0(1.3 * p * r, 0.3 * p + r)
}

pub fn mae(pred: &Grid, gt: &Grid) -> f64 {
    let (h, w) = dims(pred);
    let mut s = 0.0;
    for y in 0..h {
        for x in 0..w {
            s += (pred[y][x] - gt[y][x]).abs();
        }
    }
    s / (h * w) as f64
}

// ---------------------------------------------------------------- S-measure

fn s_object_part(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    2.0 * m / (m * m + 1.0 + sd + EPS)
}

fn block_ssim(p: &[f64], g: &[f64]) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    let n = p.len() as f64;
    let mx = p.iter().sum::<f64>() / n;
    let my = g.iter().sum::<f64>() / n;
    let d = if p.len() > 1 { n - 1.0 } else { 1.0 };
    let vx = p.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / d;
    let vy = g.iter().map(|v| (v - my).powi(2)).sum::<f64>() / d;
    let cxy = p.iter().zip(g).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / d;
    let a = 4.0 * mx * my * cxy;
    let b = (mx * mx + my * my) * (vx + vy);
    if a != 0.0 {
        a / (b + EPS)
    } else if b == 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn s_measure(pred: &Grid, gt: &Grid) -> f64 {
    let (h, w) = dims(pred);
    let g: Grid = gt
        .iter()
        .map(|r| r.iter().map(|&v| if is_fg(v) { 1.0 } else { 0.0 }).collect())
        .collect();
    let gm = mean(&g);
    if gm == 0.0 {
        return 1.0 - mean(pred);
    }
    if gm == 1.0 {
        return mean(pred);
    }
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if g[y][x] == 1.0 {
                fg.push(pred[y][x]);
            } else {
                bg.push(1.0 - pred[y][x]);
            }
        }
    }
    let so = gm * s_object_part(&fg) + (1.0 - gm) * s_object_part(&bg);

    // 1-based centroid, MATLAB-style rounding (half away from zero).
    let (mut sx, mut sy, mut area) = (0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if g[y][x] == 1.0 {
                sx += (x + 1) as f64;
                sy += (y + 1) as f64;
                area += 1.0;
            }
        }
    }
    let cx = (sx / area).round() as usize;
    let cy = (sy / area).round() as usize;
    let mut sr = 0.0;
    let total = (h * w) as f64;
    let mut used = 0.0;
    for q in 0..4 {
        let (top, left) = (q < 2, q % 2 == 0);
        let mut p = Vec::new();
        let mut gg = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if (y < cy) == top && (x < cx) == left {
                    p.push(pred[y][x]);
                    gg.push(g[y][x]);
                }
            }
        }
        let weight = if q < 3 { p.len() as f64 / total } else { 1.0 - used };
        used += weight;
        sr += weight * block_ssim(&p, &gg);
    }
    (0.5 * so + 0.5 * sr).max(0.0)
}

// ---------------------------------------------------------------- E-measure

pub fn e_at(pred: &Grid, gt: &Grid, t: f64) -> f64 {
    let (h, w) = dims(pred);
    let n = (h * w) as f64;
    let b: Grid = pred
        .iter()
        .map(|r| r.iter().map(|&v| if v >= t { 1.0 } else { 0.0 }).collect())
        .collect();
    let g: Grid = gt
        .iter()
        .map(|r| r.iter().map(|&v| if is_fg(v) { 1.0 } else { 0.0 }).collect())
        .collect();
    let gsum: f64 = g.iter().flatten().sum();
    let mut sum = 0.0;
    if gsum == 0.0 {
        for y in 0..h {
            for x in 0..w {
                sum += 1.0 - b[y][x];
            }
        }
        return sum / n;
    }
    if gsum == n {
        return b.iter().flatten().sum::<f64>() / n;
    }
    let (mb, mg) = (mean(&b), mean(&g));
    for y in 0..h {
        for x in 0..w {
            let (pb, pg) = (b[y][x] - mb, g[y][x] - mg);
            let xi = 2.0 * pb * pg / (pb * pb + pg * pg + EPS);
            sum += (xi + 1.0) * (xi + 1.0) / 4.0;
        }
    }
    sum / n
}

// -------------------------------------------------------- weighted F-measure

/// Nearest foreground pixel by exhaustive search; ties go to the smallest
/// row-major index. Returns `(distance, (row, col))`.
fn nearest_fg(g: &[Vec<bool>], y: usize, x: usize) -> (f64, (usize, usize)) {
    let mut best: Option<(usize, usize, (usize, usize))> = None;
    for (yy, row) in g.iter().enumerate() {
        for (xx, &f) in row.iter().enumerate() {
            if !f {
                continue;
            }
            let d2 = (yy as isize - y as isize).pow(2) as usize + (xx as isize - x as isize).pow(2) as usize;
            let idx = yy * row.len() + xx;
            if best.is_none_or(|(bd, bi, _)| (d2, idx) < (bd, bi)) {
                best = Some((d2, idx, (yy, xx)));
            }
        }
    }
    let (d2, _, at) = best.expect("foreground present");
    ((d2 as f64).sqrt(), at)
}

pub fn weighted_f(pred: &Grid, gt: &Grid) -> f64 {
    let (h, w) = dims(pred);
    let g: Vec<Vec<bool>> = gt.iter().map(|r| r.iter().map(|&v| is_fg(v)).collect()).collect();
    if !g.iter().flatten().any(|&b| b) {
        return 0.0;
    }
    let e = |y: usize, x: usize| (pred[y][x] - if g[y][x] { 1.0 } else { 0.0 }).abs();
    let mut et = vec![vec![0.0; w]; h];
    let mut dst = vec![vec![0.0; w]; h];
    for y in 0..h {
        for x in 0..w {
            let (d, (ny, nx)) = nearest_fg(&g, y, x);
            dst[y][x] = d;
            et[y][x] = if g[y][x] { e(y, x) } else { e(ny, nx) };
        }
    }
    // Direct 7×7 Gaussian, sigma 5, normalized to unit sum, zero padding.
    let mut k = [[0.0; 7]; 7];
    let mut ks = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (a, b) = (i as f64 - 3.0, j as f64 - 3.0);
            *v = (-(a * a + b * b) / 50.0).exp();
            ks += *v;
        }
    }
    let mut ea = vec![vec![0.0; w]; h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, row) in k.iter().enumerate() {
                for (j, kv) in row.iter().enumerate() {
                    let (yy, xx) = (y as isize + i as isize - 3, x as isize + j as isize - 3);
                    if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                        acc += kv / ks * et[yy as usize][xx as usize];
                    }
                }
            }
            ea[y][x] = acc;
        }
    }
    let (mut tpw_loss, mut fpw, mut nfg) = (0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if g[y][x] {
                let m = if ea[y][x] < e(y, x) { ea[y][x] } else { e(y, x) };
                tpw_loss += m;
                nfg += 1.0;
            } else {
                let b = 2.0 - (0.5f64.ln() / 5.0 * dst[y][x]).exp();
                fpw += e(y, x) * b;
            }
        }
    }
    let tpw = nfg - tpw_loss;
    let r = 1.0 - tpw_loss / nfg;
    let p = tpw / (EPS + tpw + fpw);
    2.0 * r * p / (EPS + r + p)
}

// ------------------------------------------------------------------ report

pub fn report(pred: &Grid, gt: &Grid, threshold: f64) -> Oracle {
    let (tp, tn, fp, fnn) = counts(pred, gt, threshold);
    let f_curve: Vec<f64> = (0..256).map(|k| f_at(pred, gt, k as f64 / 255.0)).collect();
    let e_curve: Vec<f64> = (0..256).map(|k| e_at(pred, gt, k as f64 / 255.0)).collect();
    let ta = adaptive(pred);
    let f_mean = f_at(pred, gt, ta);
    let f_max = f_curve.iter().copied().fold(f_mean, f64::max);
    Oracle {
        pa: div0(tp + tn, tp + tn + fp + fnn),
        f_max,
        f_mean,
        f_weighted: weighted_f(pred, gt),
        s_measure: s_measure(pred, gt),
        e_measure: e_at(pred, gt, ta),
        iou: div0(tp, tp + fp + fnn),
        dice: div0(2.0 * tp, 2.0 * tp + fp + fnn),
        ber: 1.0 - 0.5 * (div0(tp, tp + fnn) + div0(tn, tn + fp)),
        mae: mae(pred, gt),
        f_curve,
        e_curve,
    }
}
