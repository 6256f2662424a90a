//! Straight-line f64 forward pass of the MLP network, addressed by parameter name.

use std::collections::BTreeMap;

/// Flat parameter values plus shapes, keyed like the library's parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub values: BTreeMap<String, Vec<f64>>,
    pub shapes: BTreeMap<String, Vec<usize>>,
}

impl Params {
    pub fn get(&self, name: &str) -> &[f64] {
        &self.values[name]
    }

    /// Every scalar as `(name, index)`, in a fixed order.
    pub fn coordinates(&self, prefix_filter: impl Fn(&str) -> bool) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (name, v) in &self.values {
            if prefix_filter(name) {
                for k in 0..v.len() {
                    out.push((name.clone(), k));
                }
            }
        }
        out
    }
}

fn linear(p: &Params, name: &str, x: &[f64]) -> Vec<f64> {
    let w = p.get(&format!("{name}.weight"));
    let b = p.get(&format!("{name}.bias"));
    let out = b.len();
    let input = x.len();
    let mut y = vec![0.0; out];
    for o in 0..out {
        let mut s = b[o];
        for i in 0..input {
            s += w[o * input + i] * x[i];
        }
        y[o] = s;
    }
    y
}

fn relu(mut v: Vec<f64>) -> Vec<f64> {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    v
}

pub fn embed(p: &Params, layers: usize, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for l in 0..layers {
        h = relu(linear(p, &format!("encoder.{l}"), &h));
    }
    h
}

pub fn project(p: &Params, layers: usize, x: &[f64]) -> Vec<f64> {
    let h = embed(p, layers, x);
    linear(p, "projector.1", &relu(linear(p, "projector.0", &h)))
}

pub fn predict(p: &Params, layers: usize, x: &[f64]) -> Vec<f64> {
    let z = project(p, layers, x);
    linear(p, "predictor.1", &relu(linear(p, "predictor.0", &z)))
}

pub fn logits(p: &Params, layers: usize, x: &[f64]) -> Vec<f64> {
    linear(p, "classifier", &embed(p, layers, x))
}
