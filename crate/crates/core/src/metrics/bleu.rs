//! Clipped n-gram BLEU at sentence and corpus level.
//!
//! Orders longer than the candidate have no n-grams and are left out of the
//! geometric mean, so a short candidate identical to its reference scores 1.

use std::collections::HashMap;

pub const MAX_ORDER: usize = 4;

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if n == 0 || tokens.len() < n {
        return m;
    }
    for w in tokens.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

/// Sufficient statistics of one (candidate, references) pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub cand_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn add(&mut self, o: &BleuStats) {
        for k in 0..MAX_ORDER {
            self.matches[k] += o.matches[k];
            self.totals[k] += o.totals[k];
        }
        self.cand_len += o.cand_len;
        self.ref_len += o.ref_len;
    }
}

/// Reference length closest to `c`; ties go to the shorter reference.
fn closest_ref_len(c: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

pub fn bleu_stats(cand: &[String], refs: &[Vec<String>]) -> BleuStats {
    let mut s = BleuStats {
        cand_len: cand.len(),
        ref_len: closest_ref_len(cand.len(), refs),
        ..Default::default()
    };
    for n in 1..=MAX_ORDER {
        let c = ngrams(cand, n);
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in refs {
            for (g, k) in ngrams(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(k);
            }
        }
        s.totals[n - 1] = c.values().sum();
        s.matches[n - 1] = c
            .iter()
            .map(|(g, &k)| k.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
    }
    s
}

/// Score from statistics. `smooth` adds one to the numerator and
/// denominator of orders with no match; `brevity` toggles the penalty.
pub fn bleu_from_stats(s: &BleuStats, n: usize, smooth: bool, brevity: bool) -> f64 {
    let n = n.clamp(1, MAX_ORDER);
    let mut log_sum = 0.0;
    let mut orders = 0;
    for k in 0..n {
        if s.totals[k] == 0 {
            continue;
        }
        let p = if s.matches[k] > 0 {
            s.matches[k] as f64 / s.totals[k] as f64
        } else if smooth {
            1.0 / (s.totals[k] as f64 + 1.0)
        } else {
            return 0.0;
        };
        log_sum += p.ln();
        orders += 1;
    }
    if orders == 0 {
        return 0.0;
    }
    let bp = if brevity && s.cand_len < s.ref_len {
        (1.0 - s.ref_len as f64 / s.cand_len as f64).exp()
    } else {
        1.0
    };
    bp * (log_sum / orders as f64).exp()
}

/// Sentence BLEU-n; an empty candidate scores 0.
pub fn bleu_n(cand: &[String], refs: &[Vec<String>], n: usize, smooth: bool) -> f64 {
    if cand.is_empty() || refs.is_empty() {
        return 0.0;
    }
    bleu_from_stats(&bleu_stats(cand, refs), n, smooth, true)
}

/// Corpus BLEU-n from pooled statistics, unsmoothed.
pub fn corpus_bleu(pairs: &[(Vec<String>, Vec<Vec<String>>)], n: usize) -> f64 {
    let mut total = BleuStats::default();
    for (c, r) in pairs {
        total.add(&bleu_stats(c, r));
    }
    bleu_from_stats(&total, n, false, true)
}
