//! Independent reference computations shared by integration and acceptance tests.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;

/// Random ensemble: `n` annotators, `classes` foreground classes, each pixel
/// drawn uniformly from {0..=classes}, then biased toward a shared base map so
/// votes actually accumulate.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub width: u32,
    pub height: u32,
    pub classes: u8,
    pub maps: Vec<Vec<u8>>,
}

pub fn random_ensemble(rng: &mut impl Rng, max_annotators: usize, max_side: u32, max_classes: u8) -> Ensemble {
    let width = rng.random_range(1..=max_side);
    let height = rng.random_range(1..=max_side);
    let classes = rng.random_range(1..=max_classes);
    let n = rng.random_range(1..=max_annotators);
    let len = (width * height) as usize;
    let base: Vec<u8> = (0..len).map(|_| rng.random_range(0..=classes)).collect();
    let agreement: f64 = rng.random_range(0.0..1.0);
    let maps = (0..n)
        .map(|_| {
            base.iter()
                .map(|&b| if rng.random_bool(agreement) { b } else { rng.random_range(0..=classes) })
                .collect()
        })
        .collect();
    Ensemble { width, height, classes, maps }
}

/// Per-pixel tally: keep classes with at least `tau` votes, pick the most
/// voted, break ties toward the smaller class id.
pub fn brute_force_merge(maps: &[Vec<u8>], tau: u16) -> Vec<u8> {
    let len = maps[0].len();
    (0..len)
        .map(|p| {
            let mut votes: HashMap<u8, u16> = HashMap::new();
            for m in maps {
                if m[p] != 0 {
                    *votes.entry(m[p]).or_default() += 1;
                }
            }
            let mut eligible: Vec<(u8, u16)> = votes.into_iter().filter(|&(_, v)| v >= tau).collect();
            eligible.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            eligible.first().map_or(0, |&(c, _)| c)
        })
        .collect()
}

/// Parses a plane written as rows of '0'/'1' separated by '/'.
pub fn parse_plane(s: &str) -> (u32, u32, Vec<bool>) {
    let rows: Vec<&str> = s.split('/').collect();
    let width = rows[0].len() as u32;
    let bits: Vec<bool> = rows
        .iter()
        .flat_map(|r| {
            assert_eq!(r.len() as u32, width, "ragged plane {s:?}");
            r.chars().map(|c| c == '1')
        })
        .collect();
    (width, rows.len() as u32, bits)
}

pub fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// True if `num/den` equals `[want_num, want_den]` as rationals.
pub fn same_ratio((num, den): (u64, u64), want: [u64; 2]) -> bool {
    num as u128 * want[1] as u128 == want[0] as u128 * den as u128
}
