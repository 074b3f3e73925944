use super::states::{initial, pairwise, StateSpace};

/// Per-key-frame state scores, `states × columns`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryMatrix {
    n_states: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl UnaryMatrix {
    pub fn zeros(n_states: usize, n_cols: usize) -> Self {
        Self {
            n_states,
            n_cols,
            data: vec![0.0; n_states * n_cols],
        }
    }

    /// `columns[v][s]` is the score of state `s` at key frame `v`.
    pub fn from_columns(columns: &[Vec<f64>]) -> Self {
        let n_states = columns.first().map_or(0, Vec::len);
        let mut m = Self::zeros(n_states, columns.len());
        for (v, col) in columns.iter().enumerate() {
            assert_eq!(col.len(), n_states, "ragged unary column");
            for (s, &x) in col.iter().enumerate() {
                m.set(s, v, x);
            }
        }
        m
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn get(&self, state: usize, col: usize) -> f64 {
        self.data[state * self.n_cols + col]
    }

    pub fn set(&mut self, state: usize, col: usize, value: f64) {
        self.data[state * self.n_cols + col] = value;
    }
}

/// Total objective of a labelling: transition rewards plus unary scores.
pub fn path_score(space: &StateSpace, unary: &UnaryMatrix, path: &[usize]) -> f64 {
    let mut total = 0.0;
    for (v, &s) in path.iter().enumerate() {
        let trans = if v == 0 {
            initial(space.state(s))
        } else {
            pairwise(space.state(path[v - 1]), space.state(s))
        };
        total += trans as f64 + unary.get(s, v);
    }
    total
}

/// Highest-scoring state sequence by dynamic programming. Ties go to the
/// lowest state index, both for predecessors and for the final state.
pub fn decode(space: &StateSpace, unary: &UnaryMatrix) -> Vec<usize> {
    let n = space.len();
    assert_eq!(unary.n_states(), n, "unary rows must match the state space");
    let c = unary.n_cols();
    if c == 0 {
        return Vec::new();
    }
    let trans: Vec<f64> = (0..n * n)
        .map(|k| pairwise(space.state(k / n), space.state(k % n)) as f64)
        .collect();

    let mut score: Vec<f64> = (0..n)
        .map(|s| initial(space.state(s)) as f64 + unary.get(s, 0))
        .collect();
    let mut back = vec![0usize; n * c];
    let mut next = vec![0.0; n];
    for v in 1..c {
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for p in 0..n {
                let cand = score[p] + trans[p * n + s];
                if cand > best {
                    best = cand;
                    arg = p;
                }
            }
            next[s] = best + unary.get(s, v);
            back[v * n + s] = arg;
        }
        std::mem::swap(&mut score, &mut next);
    }
    let mut last = 0;
    for s in 1..n {
        if score[s] > score[last] {
            last = s;
        }
    }
    let mut path = vec![0usize; c];
    path[c - 1] = last;
    for v in (1..c).rev() {
        path[v - 1] = back[v * n + path[v]];
    }
    path
}
