//! Linear-chain conditional random field.

use ndarray::Array2;

use crate::graph::{Matrix, Var};
use crate::layers::Tape;
use crate::params::{Init, ParamId, ParamStore};

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Hard transition constraints applied at decode time.
#[derive(Clone, Debug)]
pub struct Constraints {
    pub start: Vec<bool>,
    /// `allowed[from][to]`
    pub allowed: Vec<Vec<bool>>,
}

#[derive(Clone, Debug)]
pub struct Crf {
    pub num_tags: usize,
    pub start: ParamId,
    pub end: ParamId,
    pub transitions: ParamId,
}

impl Crf {
    pub fn new(ps: &mut ParamStore, name: &str, num_tags: usize) -> Self {
        assert!(num_tags > 0);
        Self {
            num_tags,
            start: ps.get_or_init(&format!("{name}.start"), (1, num_tags), Init::Uniform(0.1)),
            end: ps.get_or_init(&format!("{name}.end"), (1, num_tags), Init::Uniform(0.1)),
            transitions: ps.get_or_init(&format!("{name}.transitions"), (num_tags, num_tags), Init::Uniform(0.1)),
        }
    }

    /// Negative log-likelihood of `tags` given `n x num_tags` emission scores.
    /// Gradients come from forward-backward marginals.
    pub fn nll(&self, t: &mut Tape, emissions: Var, tags: &[usize]) -> Var {
        let (n, k) = t.shape(emissions);
        assert_eq!(k, self.num_tags);
        assert_eq!(n, tags.len());
        assert!(n > 0, "empty sequence");
        let start_v = t.p(self.start);
        let end_v = t.p(self.end);
        let trans_v = t.p(self.transitions);
        let e = t.value(emissions);
        let st = t.value(start_v);
        let en = t.value(end_v);
        let tr = t.value(trans_v);

        let mut alpha = Array2::<f64>::zeros((n, k));
        for j in 0..k {
            alpha[[0, j]] = st[[0, j]] + e[[0, j]];
        }
        for i in 1..n {
            for j in 0..k {
                alpha[[i, j]] = log_sum_exp((0..k).map(|p| alpha[[i - 1, p]] + tr[[p, j]])) + e[[i, j]];
            }
        }
        let log_z = log_sum_exp((0..k).map(|j| alpha[[n - 1, j]] + en[[0, j]]));

        let mut beta = Array2::<f64>::zeros((n, k));
        for j in 0..k {
            beta[[n - 1, j]] = en[[0, j]];
        }
        for i in (0..n - 1).rev() {
            for p in 0..k {
                beta[[i, p]] = log_sum_exp((0..k).map(|j| tr[[p, j]] + e[[i + 1, j]] + beta[[i + 1, j]]));
            }
        }

        let mut gold = st[[0, tags[0]]] + en[[0, tags[n - 1]]];
        for i in 0..n {
            gold += e[[i, tags[i]]];
            if i > 0 {
                gold += tr[[tags[i - 1], tags[i]]];
            }
        }

        let mut g_emit = Array2::<f64>::zeros((n, k));
        for i in 0..n {
            for j in 0..k {
                g_emit[[i, j]] = (alpha[[i, j]] + beta[[i, j]] - log_z).exp();
            }
            g_emit[[i, tags[i]]] -= 1.0;
        }
        let mut g_trans = Array2::<f64>::zeros((k, k));
        for i in 1..n {
            for p in 0..k {
                for j in 0..k {
                    g_trans[[p, j]] += (alpha[[i - 1, p]] + tr[[p, j]] + e[[i, j]] + beta[[i, j]] - log_z).exp();
                }
            }
            g_trans[[tags[i - 1], tags[i]]] -= 1.0;
        }
        let mut g_start = Array2::<f64>::zeros((1, k));
        let mut g_end = Array2::<f64>::zeros((1, k));
        for j in 0..k {
            g_start[[0, j]] = (alpha[[0, j]] + beta[[0, j]] - log_z).exp();
            g_end[[0, j]] = (alpha[[n - 1, j]] + en[[0, j]] - log_z).exp();
        }
        g_start[[0, tags[0]]] -= 1.0;
        g_end[[0, tags[n - 1]]] -= 1.0;

        t.custom_scalar(
            log_z - gold,
            vec![
                (emissions, g_emit),
                (trans_v, g_trans),
                (start_v, g_start),
                (end_v, g_end),
            ],
        )
    }

    /// Highest-scoring tag sequence, optionally restricted to allowed transitions.
    pub fn viterbi(&self, ps: &ParamStore, emissions: &Matrix, constraints: Option<&Constraints>) -> Vec<usize> {
        let (n, k) = emissions.dim();
        if n == 0 {
            return Vec::new();
        }
        let st = ps.get(self.start);
        let en = ps.get(self.end);
        let tr = ps.get(self.transitions);
        let neg = f64::NEG_INFINITY;
        let start_ok = |j: usize| constraints.is_none_or(|c| c.start[j]);
        let trans_ok = |p: usize, j: usize| constraints.is_none_or(|c| c.allowed[p][j]);

        let mut score = Array2::<f64>::from_elem((n, k), neg);
        let mut back = Array2::<usize>::zeros((n, k));
        for j in 0..k {
            if start_ok(j) {
                score[[0, j]] = st[[0, j]] + emissions[[0, j]];
            }
        }
        for i in 1..n {
            for j in 0..k {
                let mut best = (neg, 0);
                for p in 0..k {
                    if !trans_ok(p, j) || score[[i - 1, p]] == neg {
                        continue;
                    }
                    let s = score[[i - 1, p]] + tr[[p, j]];
                    if s > best.0 {
                        best = (s, p);
                    }
                }
                if best.0 > neg {
                    score[[i, j]] = best.0 + emissions[[i, j]];
                    back[[i, j]] = best.1;
                }
            }
        }
        let mut last = (neg, 0);
        for j in 0..k {
            let s = score[[n - 1, j]] + en[[0, j]];
            if s > last.0 {
                last = (s, j);
            }
        }
        let mut path = vec![last.1; n];
        for i in (1..n).rev() {
            path[i - 1] = back[[i, path[i]]];
        }
        path
    }

    /// Unnormalised score of a tag path (used by brute-force checks).
    pub fn path_score(&self, ps: &ParamStore, emissions: &Matrix, tags: &[usize]) -> f64 {
        let st = ps.get(self.start);
        let en = ps.get(self.end);
        let tr = ps.get(self.transitions);
        let n = tags.len();
        let mut s = st[[0, tags[0]]] + en[[0, tags[n - 1]]];
        for i in 0..n {
            s += emissions[[i, tags[i]]];
            if i > 0 {
                s += tr[[tags[i - 1], tags[i]]];
            }
        }
        s
    }
}
