//! Run grid and ordered parallel execution.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use pspl_core::rater::RaterCompetence;

use crate::config::ExperimentConfig;

/// One independent run: a point of the sweep axes and a seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub index: usize,
    /// Index of the axis point, shared by all seeds of that point.
    pub group: usize,
    pub n: usize,
    pub true_competence: RaterCompetence,
    pub assumed_competence: RaterCompetence,
    pub seed: u64,
}

/// Cross product `N x lambda x beta x seeds`, seeds varying fastest.
pub fn build_grid(cfg: &ExperimentConfig) -> Vec<Cell> {
    let or_base = |axis: &[f64], base: f64| {
        if axis.is_empty() {
            vec![base]
        } else {
            axis.to_vec()
        }
    };
    let ns = if cfg.sweep.n.is_empty() {
        vec![cfg.n]
    } else {
        cfg.sweep.n.clone()
    };
    let lambdas = or_base(&cfg.sweep.lambda, cfg.true_competence.lambda);
    let betas = or_base(&cfg.sweep.beta, cfg.true_competence.beta);
    let mut cells = Vec::new();
    let mut group = 0;
    for &n in &ns {
        for &lambda in &lambdas {
            for &beta in &betas {
                let true_competence = RaterCompetence { beta, lambda };
                for &seed in &cfg.seeds {
                    cells.push(Cell {
                        index: cells.len(),
                        group,
                        n,
                        true_competence,
                        assumed_competence: cfg.assumed_competence.unwrap_or(true_competence),
                        seed,
                    });
                }
                group += 1;
            }
        }
    }
    cells
}

/// Episodes that get a result row: every episode for `K <= 2000`, else every
/// `ceil(K / 2000)`-th, always including `K`.
pub fn logged_episodes(k: usize) -> Vec<usize> {
    let stride = if k <= 2000 { 1 } else { k.div_ceil(2000) };
    (1..=k).filter(|e| e % stride == 0 || *e == k).collect()
}

/// Runs `work` on every item with up to `workers` threads. `emit` sees the
/// results in item order as soon as each prefix is complete.
pub fn run_ordered<T, R, W, E>(items: &[T], workers: usize, work: W, mut emit: E) -> Vec<R>
where
    T: Sync,
    R: Send,
    W: Fn(&T) -> R + Sync,
    E: FnMut(usize, &R),
{
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let r = work(item);
                emit(i, &r);
                r
            })
            .collect();
    }
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, R)>();
    let mut done: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, work) = (&next, &work);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                if tx.send((i, work(&items[i]))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut cursor = 0;
        for (i, r) in rx {
            pending.insert(i, r);
            while let Some(r) = pending.remove(&cursor) {
                emit(cursor, &r);
                done[cursor] = Some(r);
                cursor += 1;
            }
        }
    });
    done.into_iter()
        .map(|r| r.expect("every cell produces a result"))
        .collect()
}
