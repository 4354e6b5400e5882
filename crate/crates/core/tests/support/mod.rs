#![allow(dead_code)]

use std::fmt::Write as _;

use rand::Rng;
use rascopf::network::{parse_case_str, Network};

pub const CASE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/rts96.case");

/// Shape of a random grid.
#[derive(Debug, Clone, Copy)]
pub struct GridShape {
    pub buses: (usize, usize),
    pub generators: (usize, usize),
    /// Ratings are drawn from this range, MW.
    pub rating: (f64, f64),
    /// System load as a share of total capacity.
    pub load_share: (f64, f64),
}

impl Default for GridShape {
    fn default() -> Self {
        Self {
            buses: (3, 8),
            generators: (2, 4),
            rating: (1e4, 1e4 + 1.0),
            load_share: (0.3, 0.6),
        }
    }
}

/// Connected random grid: a random spanning tree plus chords, so most lines
/// are not radial. Generator and line ids follow declaration order.
pub fn random_grid<R: Rng>(rng: &mut R, shape: GridShape) -> Network {
    let n = rng.gen_range(shape.buses.0..=shape.buses.1);
    let mut links: Vec<(usize, usize)> = (2..=n).map(|b| (rng.gen_range(1..b), b)).collect();
    for _ in 0..rng.gen_range(1..=n) {
        let a = rng.gen_range(1..=n);
        let b = rng.gen_range(1..=n);
        if a != b {
            links.push((a, b));
        }
    }
    let ng = rng.gen_range(shape.generators.0..=shape.generators.1);
    let gens: Vec<(usize, f64, f64, f64)> = (0..ng)
        .map(|_| {
            (
                rng.gen_range(1..=n),
                rng.gen_range(50.0..200.0),
                rng.gen_range(0.001..0.05),
                rng.gen_range(5.0..40.0),
            )
        })
        .collect();
    let cap: f64 = gens.iter().map(|g| g.1).sum();
    let total = cap * rng.gen_range(shape.load_share.0..shape.load_share.1);
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let wsum: f64 = weights.iter().sum();

    let mut s = String::from("base_mva 100\n[buses]\n");
    for (i, w) in weights.iter().enumerate() {
        let _ = writeln!(s, "{} {}", i + 1, total * w / wsum);
    }
    s.push_str("[generators]\n");
    for (i, (bus, pmax, c2, c1)) in gens.iter().enumerate() {
        let _ = writeln!(s, "{} {bus} 0 {pmax} {c2} {c1} 0", i + 1);
    }
    s.push_str("[lines]\n");
    for (i, (a, b)) in links.iter().enumerate() {
        let x = rng.gen_range(0.05..0.5);
        let rating = rng.gen_range(shape.rating.0..shape.rating.1);
        let _ = writeln!(s, "{} {a} {b} 0 {x} {rating}", i + 1);
    }
    parse_case_str(&s).expect("generated case is valid")
}

/// Balanced random injections over all buses, MW.
pub fn balanced_injections<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-100.0..100.0)).collect();
    let mean = v.iter().sum::<f64>() / n as f64;
    for x in &mut v {
        *x -= mean;
    }
    v
}
pub mod logic;
