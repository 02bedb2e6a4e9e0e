use proptest::prelude::*;
use std::collections::BTreeMap;
use suggestbias::corpus::{parse_subject_registry, SubjectRegistry};
use suggestbias::metrics::{MetricKind, MetricsTable, TopicAffiliationProfile, RANKS};
use suggestbias::stats::{
    encode_design, f_p, ols_fit, ols_fit_matrix, regress_all, t_two_sided_p, DesignMatrix, DesignOptions, StatsError,
};

fn registry(rows: &str) -> SubjectRegistry {
    parse_subject_registry(format!("term_id,display_name,gender,birth_year,party,state\n{rows}").as_bytes()).unwrap()
}

fn all_terms(reg: &SubjectRegistry) -> Vec<String> {
    reg.subjects().iter().map(|s| s.term_id.clone()).collect()
}

/// Rank of XᵀX by Gaussian elimination with partial pivoting.
fn gram_rank(d: &DesignMatrix<f64>) -> usize {
    let p = d.cols();
    let mut g: Vec<Vec<f64>> =
        (0..p).map(|a| (0..p).map(|b| (0..d.rows()).map(|i| d.get(i, a) * d.get(i, b)).sum()).collect()).collect();
    let scale = g.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut rank = 0;
    for col in 0..p {
        let Some(piv) = (rank..p).max_by(|&a, &b| g[a][col].abs().total_cmp(&g[b][col].abs())) else { break };
        if g[piv][col].abs() <= 1e-9 * scale {
            continue;
        }
        g.swap(rank, piv);
        for r in 0..p {
            if r != rank {
                let f = g[r][col] / g[rank][col];
                for c in 0..p {
                    g[r][c] -= f * g[rank][c];
                }
            }
        }
        rank += 1;
    }
    rank
}

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn single_party_registry_drops_party_columns_and_stays_full_rank() {
    let reg = registry(
        "a,A,male,1950,CDU,Baden-Württemberg\nb,B,female,1962,CDU,Bayern\nc,C,male,1975,CDU,Hessen\n\
         d,D,female,1983,CDU,Bayern\ne,E,male,1991,CDU,Baden-Württemberg\nf,F,female,1968,CDU,Hessen\n",
    );
    let d: DesignMatrix<f64> = encode_design(&reg, &all_terms(&reg), &DesignOptions::new(2021)).unwrap();
    assert!(d.column_names.iter().all(|c| !c.starts_with("party:")));
    assert_eq!(gram_rank(&d), d.cols());
}

#[test]
fn female_spd_row() {
    let reg = registry("a,A,male,1970,CDU,Baden-Württemberg\nb,B,female,1980,SPD,Bayern\nc,C,male,1960,FDP,Hessen\n");
    let d: DesignMatrix<f64> = encode_design(&reg, &all_terms(&reg), &DesignOptions::new(2021)).unwrap();
    let row = d.row(1);
    for (name, v) in d.column_names.iter().zip(row) {
        let want = match name.as_str() {
            "intercept" | "female" | "party:SPD" | "state:Bayern" => 1.0,
            "age_decades" => 4.0,
            _ => 0.0,
        };
        assert_eq!(*v, want, "{name}");
    }
}

fn random_system(seed: u64, n: usize, p: usize) -> (Vec<f64>, Vec<String>, Vec<f64>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n * p);
    for _ in 0..n {
        x.push(1.0);
        for _ in 1..p {
            x.push(rng.random_range(-2.0..2.0));
        }
    }
    let names = (0..p).map(|j| if j == 0 { "intercept".to_string() } else { format!("x{j}") }).collect();
    let y = (0..n).map(|i| x[i * p + 1] * 0.3 + rng.random_range(-1.0..1.0)).collect();
    (x, names, y)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn fit_invariants(seed in any::<u64>(), n in 8usize..60, p in 2usize..6) {
        prop_assume!(n > p + 1);
        let (x, names, y) = random_system(seed, n, p);
        let r = ols_fit_matrix(&x, n, &names, &y).unwrap();
        let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (i, yi) in y.iter().enumerate() {
            prop_assert!((r.fitted[i] + r.residuals[i] - yi).abs() <= 1e-10 * ynorm.max(1.0));
        }
        for j in 0..p {
            let dot: f64 = (0..n).map(|i| x[i * p + j] * r.residuals[i]).sum();
            prop_assert!(dot.abs() < 1e-6 * ynorm);
        }
        let adj = 1.0 - (1.0 - r.r2) * (n - 1) as f64 / (n - p) as f64;
        prop_assert_eq!(r.adjusted_r2, adj);
        prop_assert_eq!(r.df_resid, n - p);
    }

    #[test]
    fn p_monotone_in_abs_t(a in 0.0f64..50.0, b in 0.0f64..50.0, df in 1u64..500) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(t_two_sided_p(hi, df) <= t_two_sided_p(lo, df));
        prop_assert_eq!(t_two_sided_p(-a, df), t_two_sided_p(a, df));
    }

    #[test]
    fn f_with_one_numerator_df_matches_t(t in -8.0f64..8.0, df in 1u64..200) {
        prop_assert!((f_p(t * t, 1, df) - t_two_sided_p(t, df)).abs() <= 1e-10);
    }
}

#[test]
fn t_zero_is_one() {
    for df in [1, 2, 7, 30, 1000] {
        assert_eq!(t_two_sided_p(0.0f64, df), 1.0);
    }
}

#[test]
fn t_large_df_matches_normal_tail() {
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let t = 1.959964;
    let normal = 1.0 - 2.0 * simpson(phi, 0.0, t, 20_000);
    let p = t_two_sided_p(t, 1_000_000);
    assert!((p - 0.05).abs() <= 0.0005);
    assert!((p - normal).abs() <= 1e-5);
}

#[test]
fn f_tail_matches_quadrature() {
    // F(1, 10) density; substitute x = u² to remove the x^{-1/2} singularity.
    let (d1, d2) = (1.0f64, 10.0f64);
    // B(1/2, 5) = Γ(1/2)Γ(5)/Γ(11/2) = 24·32/945.
    let beta_fn = 768.0 / 945.0;
    let density_u = |u: f64| {
        let x = u * u;
        let dens_times_sqrt_x = (d1 / d2).sqrt() * (1.0 + d1 * x / d2).powf(-(d1 + d2) / 2.0) / beta_fn;
        2.0 * dens_times_sqrt_x
    };
    let cdf = simpson(density_u, 0.0, 4.96f64.sqrt(), 20_000);
    let p = f_p(4.96f64, 1, 10);
    assert!((p - (1.0 - cdf)).abs() <= 1e-6);
    assert!((p - 0.05).abs() <= 0.002);
    assert_eq!(f_p(0.0f64, 3, 10), 1.0);
}

fn metrics_for(terms: &[&str], k: usize, value: impl Fn(usize, usize) -> f64) -> MetricsTable<f64> {
    let mut rows = BTreeMap::new();
    for (i, t) in terms.iter().enumerate() {
        for c in 0..k {
            let v = value(i, c);
            let mut p = [0.0; RANKS];
            p[0] = v;
            rows.insert((t.to_string(), c), TopicAffiliationProfile::from_percentages(t, c, p, v).unwrap());
        }
    }
    MetricsTable { k, rows, included_terms: terms.iter().map(|t| t.to_string()).collect(), excluded_terms: vec![] }
}

const SIX: &str = "a,A,male,1950,CDU,Baden-Württemberg\nb,B,female,1962,SPD,Bayern\nc,C,male,1975,SPD,Bayern\n\
                   d,D,female,1983,CDU,Bayern\ne,E,male,1991,CDU,Baden-Württemberg\nf,F,female,1968,SPD,Baden-Württemberg\n\
                   g,G,male,1958,CDU,Bayern\nh,H,female,1979,SPD,Baden-Württemberg\n";

#[test]
fn three_clusters_two_kinds_give_six_models() {
    let reg = registry(SIX);
    let terms = all_terms(&reg);
    let refs: Vec<&str> = terms.iter().map(String::as_str).collect();
    let m = metrics_for(&refs, 3, |i, c| ((i * 7 + c * 3) % 5) as f64 / 5.0);
    let d = encode_design(&reg, &terms, &DesignOptions::new(2021)).unwrap();
    let out = regress_all(&m, &d, &[MetricKind::Ndcg, MetricKind::Dcg]).unwrap();
    assert_eq!(out.len(), 6);
    for c in 0..3 {
        assert!(out.contains_key(&(MetricKind::Ndcg, c)) && out.contains_key(&(MetricKind::Dcg, c)));
    }
}

#[test]
fn constant_metric_has_zero_slopes() {
    let reg = registry(SIX);
    let terms = all_terms(&reg);
    let refs: Vec<&str> = terms.iter().map(String::as_str).collect();
    let m = metrics_for(&refs, 1, |_, _| 0.4);
    let d = encode_design(&reg, &terms, &DesignOptions::new(2021)).unwrap();
    let out = regress_all(&m, &d, &[MetricKind::TotalPercentage]).unwrap();
    let r = out[&(MetricKind::TotalPercentage, 0)].as_ref().unwrap();
    assert_eq!(r.r2, 0.0);
    for c in r.coefficients.iter().filter(|c| c.name != "intercept") {
        assert_eq!(c.b, 0.0, "{}", c.name);
    }
    assert!((r.coefficient("intercept").unwrap().b - 0.4).abs() < 1e-12);
}

#[test]
fn misaligned_metrics_are_a_contract_error() {
    let reg = registry(SIX);
    let terms = all_terms(&reg);
    let m = metrics_for(&["a", "b", "c"], 2, |_, _| 0.5);
    let d = encode_design(&reg, &terms, &DesignOptions::new(2021)).unwrap();
    assert!(matches!(regress_all(&m, &d, &[MetricKind::Dcg]), Err(StatsError::Contract(_))));
    assert!(matches!(ols_fit(&d, &[0.0; 3]), Err(StatsError::Contract(_))));
}

#[test]
fn too_few_rows_is_insufficient() {
    let reg = registry("a,A,male,1950,CDU,Baden-Württemberg\nb,B,female,1962,SPD,Bayern\n");
    let d = encode_design::<f64>(&reg, &all_terms(&reg), &DesignOptions::new(2021)).unwrap();
    assert!(matches!(ols_fit(&d, &[0.1, 0.2]), Err(StatsError::InsufficientData { .. })));
}
