#![allow(dead_code)]

use hilc_core::recognition::{initial, pairwise, StateSpace, UnaryMatrix};

/// Exhaustive search over every state sequence. Branches are cut only when
/// even a +1 transition and the column maximum on every remaining column
/// cannot reach the best score found so far, so the result is the exact
/// argmax. Returns the best score, one best path, and whether the best is
/// unique (no other sequence within 1e-9).
pub fn exhaustive_argmax(space: &StateSpace, u: &UnaryMatrix) -> (f64, Vec<usize>, bool) {
    let n = space.len();
    let c = u.n_cols();
    let colmax: Vec<f64> = (0..c)
        .map(|v| (0..n).map(|s| u.get(s, v)).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut rest = vec![0.0; c + 1];
    for v in (0..c).rev() {
        rest[v] = rest[v + 1] + 1.0 + colmax[v];
    }
    struct Search<'a> {
        space: &'a StateSpace,
        u: &'a UnaryMatrix,
        rest: Vec<f64>,
        best: f64,
        best_path: Vec<usize>,
        ties: usize,
        path: Vec<usize>,
    }
    impl Search<'_> {
        fn go(&mut self, v: usize, score: f64) {
            let c = self.u.n_cols();
            if v == c {
                if score > self.best + 1e-9 {
                    self.best = score;
                    self.best_path = self.path.clone();
                    self.ties = 1;
                } else if (score - self.best).abs() <= 1e-9 {
                    self.ties += 1;
                }
                return;
            }
            if score + self.rest[v] < self.best - 1e-9 {
                return;
            }
            for s in 0..self.space.len() {
                let t = match self.path.last() {
                    None => initial(self.space.state(s)),
                    Some(&p) => pairwise(self.space.state(p), self.space.state(s)),
                } as f64;
                self.path.push(s);
                self.go(v + 1, score + t + self.u.get(s, v));
                self.path.pop();
            }
        }
    }
    let mut search = Search {
        space,
        u,
        rest,
        best: f64::NEG_INFINITY,
        best_path: Vec::new(),
        ties: 0,
        path: Vec::new(),
    };
    search.go(0, 0.0);
    (search.best, search.best_path, search.ties == 1)
}
