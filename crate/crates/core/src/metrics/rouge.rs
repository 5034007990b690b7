/// ROUGE-L `beta` of the conventional reference implementation.
pub const DEFAULT_BETA: f64 = 1.2;

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure `(1 + β²) P R / (R + β² P)`.
pub fn rouge_l_beta(cand: &[String], reference: &[String], beta: f64) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_len(cand, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / cand.len() as f64;
    let r = l / reference.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

pub fn rouge_l(cand: &[String], reference: &[String]) -> f64 {
    rouge_l_beta(cand, reference, DEFAULT_BETA)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identical_and_disjoint() {
        assert_eq!(rouge_l(&t("a b c"), &t("a b c")), 1.0);
        assert_eq!(rouge_l(&t("a b"), &t("c d")), 0.0);
    }

    #[test]
    fn four_vs_three_fixture() {
        assert_eq!(lcs_len(&t("a b c d"), &t("a c d")), 3);
        // P = 3/4, R = 1: 2.44 * 0.75 / (1 + 1.44 * 0.75)
        let v = rouge_l(&t("a b c d"), &t("a c d"));
        assert!((v - 0.879_807_692_307_692_3).abs() < 1e-12);
    }

    #[test]
    fn beta_one_is_symmetric() {
        let (a, b) = (t("a b c d e"), t("b d x"));
        assert_eq!(rouge_l_beta(&a, &b, 1.0), rouge_l_beta(&b, &a, 1.0));
        assert_ne!(rouge_l(&a, &b), rouge_l(&b, &a));
    }
}
