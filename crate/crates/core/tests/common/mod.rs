//! Shared oracles for the integration and acceptance tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use sc_scdma::ensemble::{CoupledSpreadingMatrix, FactorGraph, SystemConfig};
use sc_scdma::system_model::{random_symbols, transmit, TransmissionBlock};

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Whether the bipartite graph has no cycle: every edge must join two
/// different components.
pub fn is_cycle_free(graph: &FactorGraph) -> bool {
    let nv = graph.num_vars();
    let mut parent: Vec<usize> = (0..nv + graph.num_fns()).collect();
    for f in 0..graph.num_fns() {
        for e in graph.fn_edges(f) {
            let a = find(&mut parent, graph.edge_var[e] as usize);
            let b = find(&mut parent, nv + f);
            if a == b {
                return false;
            }
            parent[a] = b;
        }
    }
    true
}

/// A random coupled instance with `K L <= 12` whose factor graph is a forest.
///
/// Each row draws up to three in-band symbols from distinct components of
/// the graph built so far, which keeps the graph acyclic.
pub fn random_tree_instance(seed: u64) -> (CoupledSpreadingMatrix, TransmissionBlock) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let l = rng.random_range(1..=3usize);
    let w = rng.random_range(0..l);
    let k = rng.random_range(1..=12 / l);
    let n = rng.random_range(1..=k + 2);
    let cfg = SystemConfig {
        k,
        n,
        n_init: Some(n),
        r: w + 1,
        l,
        w,
        sigma_n_sq: rng.random_range(0.2..1.5),
    };
    let nv = k * l;
    let mut parent: Vec<usize> = (0..nv).collect();
    let mut triples = Vec::new();
    let mut row = 0;
    for pos in 0..l {
        for _ in 0..cfg.rows_at(pos) {
            let mut cands: Vec<usize> =
                (0..=w).flat_map(|d| { let lp = (pos + l - d) % l; (lp * k)..(lp * k + k) }).collect();
            cands.sort_unstable();
            cands.dedup();
            cands.shuffle(&mut rng);
            let want = rng.random_range(1..=3usize);
            let mut roots = Vec::new();
            for &c in &cands {
                if roots.len() == want {
                    break;
                }
                let rc = find(&mut parent, c);
                if !roots.contains(&rc) {
                    roots.push(rc);
                    let sign = if rng.random::<bool>() { 1 } else { -1 };
                    triples.push((row, c, sign));
                }
            }
            for pair in roots.windows(2) {
                let (a, b) = (find(&mut parent, pair[0]), find(&mut parent, pair[1]));
                parent[a] = b;
            }
            row += 1;
        }
    }
    let matrix = CoupledSpreadingMatrix::from_signed_entries(cfg, &triples).expect("in-band entries");
    let symbols = random_symbols(nv, &mut rng);
    let block = transmit(&matrix, &symbols, cfg.sigma_n_sq, rng.random()).expect("valid block");
    (matrix, block)
}

/// Posterior LLRs `ln P(b_v = +1 | y) / P(b_v = -1 | y)` by enumerating all
/// `2^(K L)` symbol vectors under a uniform prior.
pub fn brute_force_llrs(matrix: &CoupledSpreadingMatrix, block: &TransmissionBlock) -> Vec<f64> {
    let nv = matrix.config.total_symbols();
    assert!(nv <= 20);
    let entries = matrix.global_entries();
    let mut plus = vec![f64::NEG_INFINITY; nv];
    let mut minus = vec![f64::NEG_INFINITY; nv];
    let lse = |a: f64, b: f64| {
        let m = a.max(b);
        if m == f64::NEG_INFINITY {
            m
        } else {
            m + ((a - m).exp() + (b - m).exp()).ln()
        }
    };
    for mask in 0u32..(1 << nv) {
        let b = |v: usize| if mask >> v & 1 == 1 { 1.0 } else { -1.0 };
        let mut resid = block.received.clone();
        for &(row, col, gain) in &entries {
            resid[row] -= gain * b(col);
        }
        let logp = -resid.iter().map(|x| x * x).sum::<f64>() / (2.0 * block.noise_variance);
        for v in 0..nv {
            if b(v) > 0.0 {
                plus[v] = lse(plus[v], logp);
            } else {
                minus[v] = lse(minus[v], logp);
            }
        }
    }
    plus.iter().zip(&minus).map(|(p, m)| p - m).collect()
}
