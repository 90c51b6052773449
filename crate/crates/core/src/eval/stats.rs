//! Rank statistics: Kruskal-Wallis with tie correction, Conover-Iman
//! post-hoc pairwise comparisons, and Benjamini-Hochberg FDR adjustment.

use thiserror::Error;

use super::metrics::midranks;
use super::special::{chi2_sf, t_two_sided_p};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least two non-empty groups")]
    TooFewGroups,
    #[error("p-value {0} outside [0, 1]")]
    OutOfRange(f64),
}

/// Kruskal-Wallis result. `all_equal` flags the degenerate case where every
/// value ties: H is forced to 0 and p to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct KruskalWallis {
    pub h: f64,
    pub p: f64,
    pub all_equal: bool,
    pub df: usize,
}

fn pooled_ranks(groups: &[Vec<f64>]) -> (Vec<f64>, usize) {
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = pooled.len();
    (midranks(&pooled), n)
}

/// Rank-based H statistic with tie correction; p from the chi-square
/// approximation with (groups - 1) degrees of freedom.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KruskalWallis, StatsError> {
    if groups.len() < 2 || groups.iter().any(|g| g.is_empty()) {
        return Err(StatsError::TooFewGroups);
    }
    let (ranks, n) = pooled_ranks(groups);
    let nf = n as f64;
    let df = groups.len() - 1;

    let mut h = 0.0;
    let mut offset = 0;
    for g in groups {
        let r_sum: f64 = ranks[offset..offset + g.len()].iter().sum();
        h += r_sum * r_sum / g.len() as f64;
        offset += g.len();
    }
    h = 12.0 / (nf * (nf + 1.0)) * h - 3.0 * (nf + 1.0);

    // Tie correction: 1 - sum(t^3 - t) / (N^3 - N) over tie groups.
    let mut sorted: Vec<f64> = groups.iter().flatten().copied().collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_sum += t * t * t - t;
        i = j + 1;
    }
    let correction = 1.0 - tie_sum / (nf * nf * nf - nf);
    if correction <= 0.0 {
        // Every value identical: no rank separation at all.
        return Ok(KruskalWallis {
            h: 0.0,
            p: 1.0,
            all_equal: true,
            df,
        });
    }
    let h = h / correction;
    Ok(KruskalWallis {
        h,
        p: chi2_sf(h, df),
        all_equal: false,
        df,
    })
}

/// Conover-Iman pairwise comparisons: t statistics on rank means with the
/// pooled rank variance adjusted by the Kruskal-Wallis H, two-sided p-values
/// from the t distribution with N - k degrees of freedom. Returns the
/// symmetric matrix of p-values with a unit diagonal.
pub fn conover_iman(groups: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, StatsError> {
    let kw = kruskal_wallis(groups)?;
    let (ranks, n) = pooled_ranks(groups);
    let k = groups.len();
    let nf = n as f64;
    if n <= k {
        return Err(StatsError::TooFewGroups);
    }

    let mut mean_ranks = Vec::with_capacity(k);
    let mut offset = 0;
    for g in groups {
        let r_sum: f64 = ranks[offset..offset + g.len()].iter().sum();
        mean_ranks.push(r_sum / g.len() as f64);
        offset += g.len();
    }
    // Pooled rank variance (with ties): (sum r^2 - N (N+1)^2 / 4) / (N - 1).
    let sum_sq: f64 = ranks.iter().map(|r| r * r).sum();
    let s_sq = (sum_sq - nf * (nf + 1.0) * (nf + 1.0) / 4.0) / (nf - 1.0);

    let df = n - k;
    let mut p = vec![vec![1.0; k]; k];
    if kw.all_equal || s_sq <= 0.0 {
        return Ok(p);
    }
    let factor = s_sq * (nf - 1.0 - kw.h) / df as f64;
    for i in 0..k {
        for j in i + 1..k {
            let se = (factor * (1.0 / groups[i].len() as f64 + 1.0 / groups[j].len() as f64))
                .sqrt();
            let t = (mean_ranks[i] - mean_ranks[j]) / se;
            let pv = t_two_sided_p(t, df).min(1.0);
            p[i][j] = pv;
            p[j][i] = pv;
        }
    }
    Ok(p)
}

/// Benjamini-Hochberg step-up adjustment: q_(i) = min_{j >= i} p_(j) m / j,
/// capped at 1, returned in the input order.
pub fn fdr_adjust(p_values: &[f64]) -> Result<Vec<f64>, StatsError> {
    for &p in p_values {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(StatsError::OutOfRange(p));
        }
    }
    let m = p_values.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].partial_cmp(&p_values[b]).unwrap());
    let mut adjusted = vec![0.0; m];
    let mut running_min = 1.0f64;
    for rank in (0..m).rev() {
        let idx = order[rank];
        // Ratio first: m/m is exactly 1, so the top-ranked q equals its p.
        let q = p_values[idx] * (m as f64 / (rank + 1) as f64);
        running_min = running_min.min(q).min(1.0);
        adjusted[idx] = running_min;
    }
    Ok(adjusted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identical_groups_give_h_zero_p_one() {
        let groups = vec![vec![2.0, 2.0, 2.0], vec![2.0, 2.0], vec![2.0]];
        let kw = kruskal_wallis(&groups).unwrap();
        assert!(kw.all_equal);
        assert_eq!(kw.h, 0.0);
        assert_eq!(kw.p, 1.0);
    }

    #[test]
    fn textbook_two_group_case() {
        // Groups [1,2,3] vs [4,5,6]: H = 27/7 = 3.857142..., reference p
        // from scipy.stats.kruskal.
        let kw = kruskal_wallis(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert!((kw.h - 27.0 / 7.0).abs() < 1e-12, "H = {}", kw.h);
        assert!((kw.p - 0.049534613435626915).abs() < 1e-12);
    }

    #[test]
    fn kw_is_invariant_under_monotone_transforms() {
        let mut rng = StdRng::seed_from_u64(1);
        let groups: Vec<Vec<f64>> = (0..3)
            .map(|g| (0..8).map(|_| rng.gen_range(0.0..1.0) + g as f64 * 0.2).collect())
            .collect();
        let base = kruskal_wallis(&groups).unwrap();
        let warped: Vec<Vec<f64>> = groups
            .iter()
            .map(|g| g.iter().map(|&v| (3.0 * v).exp() + v).collect())
            .collect();
        let after = kruskal_wallis(&warped).unwrap();
        assert!((base.h - after.h).abs() < 1e-10);
        assert!((base.p - after.p).abs() < 1e-10);
    }

    #[test]
    fn conover_iman_detects_the_equal_pair() {
        // Two identical groups among three: their pairwise p is near 1.
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let b = vec![1.1, 2.1, 3.1, 4.1, 5.1];
        let c = vec![10.0, 11.0, 12.0, 13.0, 14.0];
        let p = conover_iman(&[a, b, c]).unwrap();
        assert!(p[0][1] > 0.5, "similar groups: p = {}", p[0][1]);
        assert!(p[0][2] < 0.01, "distinct groups: p = {}", p[0][2]);
        for i in 0..3 {
            assert_eq!(p[i][i], 1.0);
            for j in 0..3 {
                assert_eq!(p[i][j], p[j][i]);
            }
        }
    }

    #[test]
    fn fdr_single_p_is_unchanged() {
        assert_eq!(fdr_adjust(&[0.037]).unwrap(), vec![0.037]);
    }

    #[test]
    fn fdr_textbook_step_up() {
        // Hand-applied step-up: q_(i) = min_{j>=i} p_(j)*4/j.
        let q = fdr_adjust(&[0.01, 0.02, 0.03, 0.04]).unwrap();
        for v in &q {
            assert!((v - 0.04).abs() < 1e-15);
        }
        let q = fdr_adjust(&[0.005, 0.049, 0.05, 0.2]).unwrap();
        assert!((q[0] - 0.02).abs() < 1e-15);
        assert!((q[1] - 0.0666666666666666).abs() < 1e-12);
        assert!((q[2] - 0.0666666666666666).abs() < 1e-12);
        assert!((q[3] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn fdr_is_monotone_and_bounded() {
        let mut rng = StdRng::seed_from_u64(2);
        let p: Vec<f64> = (0..40).map(|_| rng.gen::<f64>()).collect();
        let q = fdr_adjust(&p).unwrap();
        for (pi, qi) in p.iter().zip(&q) {
            assert!(qi >= pi && *qi <= 1.0);
        }
        for i in 0..p.len() {
            for j in 0..p.len() {
                if p[i] <= p[j] {
                    assert!(q[i] <= q[j] + 1e-15);
                }
            }
        }
    }

    #[test]
    fn fdr_rejects_out_of_range() {
        assert!(matches!(
            fdr_adjust(&[0.5, 1.2]),
            Err(StatsError::OutOfRange(_))
        ));
    }

    /// Permutation oracle for the Kruskal-Wallis p-value: fraction of
    /// label permutations whose H meets or exceeds the observed H.
    fn kw_permutation_p(groups: &[Vec<f64>], n_perm: usize, seed: u64) -> (f64, f64) {
        let observed = kruskal_wallis(groups).unwrap().h;
        let sizes: Vec<usize> = groups.iter().map(|g| g.len()).collect();
        let mut pooled: Vec<f64> = groups.iter().flatten().copied().collect();
        let mut rng = StdRng::seed_from_u64(seed);
        let mut hits = 0usize;
        for _ in 0..n_perm {
            // Fisher-Yates shuffle of the pooled values.
            for i in (1..pooled.len()).rev() {
                let j = rng.gen_range(0..=i);
                pooled.swap(i, j);
            }
            let mut regrouped = Vec::with_capacity(sizes.len());
            let mut off = 0;
            for &s in &sizes {
                regrouped.push(pooled[off..off + s].to_vec());
                off += s;
            }
            if kruskal_wallis(&regrouped).unwrap().h >= observed - 1e-12 {
                hits += 1;
            }
        }
        let p = hits as f64 / n_perm as f64;
        let se = (p * (1.0 - p) / n_perm as f64).sqrt();
        (p, se)
    }

    #[test]
    fn chi_square_p_tracks_the_permutation_oracle() {
        // Moderate group sizes where the chi-square approximation is good;
        // 20k permutations keep this test quick, the acceptance suite runs
        // the full 100k version.
        let mut rng = StdRng::seed_from_u64(3);
        let groups: Vec<Vec<f64>> = (0..3)
            .map(|g| {
                (0..60)
                    .map(|_| rng.gen_range(0.0..1.0) + g as f64 * 0.08)
                    .collect()
            })
            .collect();
        let kw = kruskal_wallis(&groups).unwrap();
        let (p_perm, se) = kw_permutation_p(&groups, 20_000, 11);
        let tol = 3.0 * se + 0.01;
        assert!(
            (kw.p - p_perm).abs() < tol,
            "chi2 p {} vs permutation p {} (tol {tol})",
            kw.p,
            p_perm
        );
    }
}
