//! Naive loop implementations used as ground truth. Nothing here calls into
//! the library's arithmetic.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sim(a: &[f64], b: &[f64], tau: f64) -> f64 {
    dot(a, b) / (tau * norm(a) * norm(b))
}

/// Other raw indices with the same label, then the sample's own view at `n + i`.
pub fn positives(raw_labels: &[u32]) -> Vec<Vec<usize>> {
    let n = raw_labels.len();
    let mut out = Vec::new();
    for i in 0..n {
        let mut p = Vec::new();
        for j in 0..n {
            if j != i && raw_labels[j] == raw_labels[i] {
                p.push(j);
            }
        }
        p.push(n + i);
        out.push(p);
    }
    out
}

/// Supervised BYOL term; `targets` spans raw samples then their views.
pub fn supbyol_oracle(pred: &[Vec<f64>], targets: &[Vec<f64>], raw_labels: &[u32], tau: f64) -> f64 {
    let n = pred.len();
    let pos = positives(raw_labels);
    let mut total = 0.0;
    for i in 0..n {
        let mut inner = 0.0;
        for &p in &pos[i] {
            inner += sim(&pred[i], &targets[p], tau);
        }
        total += inner / pos[i].len() as f64;
    }
    -total / n as f64
}

/// Cross-entropy over cosine logits; `protos` pairs a class id with its vector.
pub fn buffer_ce_oracle(z: &[Vec<f64>], labels: &[u32], protos: &[(u32, Vec<f64>)], tau: f64, mean: bool) -> f64 {
    let mut total = 0.0;
    for i in 0..z.len() {
        let mut denom = 0.0;
        let mut own = f64::NAN;
        for (c, v) in protos {
            let s = sim(v, &z[i], tau);
            denom += s.exp();
            if *c == labels[i] {
                own = s;
            }
        }
        total -= (own.exp() / denom).ln();
    }
    if mean {
        total / z.len() as f64
    } else {
        total
    }
}

pub fn contrast(protos: &[(u32, Vec<f64>)], tau: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..protos.len() {
        for j in 0..protos.len() {
            if i != j {
                total += sim(&protos[i].1, &protos[j].1, tau);
            }
        }
    }
    total / protos.len() as f64
}

/// Prototype attraction, positive attraction and prototype contrast on an extended batch.
pub fn ccp_incoming_oracle(z_ext: &[Vec<f64>], raw_labels: &[u32], protos: &[(u32, Vec<f64>)], tau: f64) -> f64 {
    let n = raw_labels.len();
    let pos = positives(raw_labels);
    let mut attraction = 0.0;
    for i in 0..n {
        let mut own = f64::NAN;
        for (c, v) in protos {
            if *c == raw_labels[i] {
                own = sim(&z_ext[i], v, tau);
            }
        }
        let mut pair = 0.0;
        for &p in &pos[i] {
            pair += sim(&z_ext[i], &z_ext[p], tau);
        }
        attraction += own + pair / pos[i].len() as f64;
    }
    -attraction / n as f64 + contrast(protos, tau)
}

pub fn forgetting(rows: &[Vec<f64>]) -> Option<f64> {
    let t = rows.len();
    if t < 2 {
        return None;
    }
    let mut total = 0.0;
    for j in 0..t - 1 {
        let mut best = f64::NEG_INFINITY;
        for l in j..t - 1 {
            if rows[l][j] > best {
                best = rows[l][j];
            }
        }
        let drop = best - rows[t - 1][j];
        if drop > 0.0 {
            total += drop;
        }
    }
    Some(total / (t - 1) as f64)
}

/// `ξ_k` after `k` updates toward a constant `θ`, by iteration.
pub fn ema_loop(xi: f64, theta: f64, rate: f64, k: usize) -> f64 {
    let mut x = xi;
    for _ in 0..k {
        x = rate * x + (1.0 - rate) * theta;
    }
    x
}

pub fn ema_closed_form(xi: f64, theta: f64, rate: f64, k: usize) -> f64 {
    let rk = rate.powi(k as i32);
    rk * xi + (1.0 - rk) * theta
}

/// Probability that a given element survives reservoir sampling.
pub fn reservoir_inclusion(capacity: usize, stream_len: usize) -> f64 {
    if stream_len <= capacity {
        1.0
    } else {
        capacity as f64 / stream_len as f64
    }
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    v.iter().map(|x| x / n).collect()
}

/// Central-difference gradient of `f` at `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for k in 0..x.len() {
        probe[k] = x[k] + h;
        let up = f(&probe);
        probe[k] = x[k] - h;
        let down = f(&probe);
        probe[k] = x[k];
        g[k] = (up - down) / (2.0 * h);
    }
    g
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let mut diff = 0.0;
    let mut scale = 0.0;
    for k in 0..a.len() {
        diff += (a[k] - b[k]).powi(2);
        scale += a[k].powi(2).max(b[k].powi(2));
    }
    if scale == 0.0 {
        0.0
    } else {
        (diff / scale).sqrt()
    }
}
