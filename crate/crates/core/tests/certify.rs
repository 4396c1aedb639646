mod common;

use common::{categorical_counts, noisy_logits, uniform};
use lipbound::certify::{
    certify_bonferroni, certify_cpm, certify_mono, ci_bernstein, ci_clopper_pearson, ci_hoeffding, cpm_partition,
    hoeffding_shift, bernstein_shift, lvm_rs, radius_mono, radius_mult, simplex_map, sparsemax, CiMethod,
    ScoreSamples, Side, SimplexKind, SimplexMap,
};
use lipbound::linalg::norm2;
use lipbound::rng;
use lipbound::special::norm_quantile;
use rand::Rng;

fn bernoulli_samples(s: u64, n: u64) -> Vec<f64> {
    (0..n).map(|i| if i < s { 1.0 } else { 0.0 }).collect()
}

#[test]
fn intervals_cover_at_nominal_level() {
    let (n, alpha, trials) = (1000u64, 0.05, 3000);
    let mut r = rng::seeded(70);
    for p in [0.1, 0.5, 0.9] {
        let mut miss = [0usize; 3];
        for _ in 0..trials {
            let s = (0..n).filter(|_| r.random::<f64>() < p).count() as u64;
            let mean = s as f64 / n as f64;
            let cis = [
                ci_clopper_pearson(s, n, alpha, Side::TwoSided).unwrap(),
                ci_hoeffding(mean, n as usize, alpha, 1.0, Side::TwoSided).unwrap(),
                ci_bernstein(&bernoulli_samples(s, n), alpha, 1.0, Side::TwoSided).unwrap(),
            ];
            for (m, ci) in miss.iter_mut().zip(&cis) {
                if !(ci.lower <= p && p <= ci.upper) {
                    *m += 1;
                }
            }
        }
        let limit = alpha + 3.0 * (alpha * (1.0 - alpha) / trials as f64).sqrt();
        for m in miss {
            assert!((m as f64 / trials as f64) <= limit, "p={p}: miss rate {}", m as f64 / trials as f64);
        }
    }
}

#[test]
fn interval_formulas() {
    let ci = ci_clopper_pearson(10, 10, 0.05, Side::Lower).unwrap();
    assert!((ci.lower - 0.05f64.powf(0.1)).abs() < 1e-12);
    assert_eq!(hoeffding_shift(100, 1.0 - 1e-17, 1.0, Side::Lower), 0.0);
    assert!(hoeffding_shift(10_000_000, 0.05, 1.0, Side::Lower) < 1e-3);
    let flat = vec![0.4; 500];
    let ci = ci_bernstein(&flat, 0.01, 1.0, Side::TwoSided).unwrap();
    let shift = 7.0 * (2.0f64 / 0.005).ln() / (3.0 * 499.0);
    assert!((0.4 - ci.lower - shift).abs() < 1e-14 && (ci.upper - 0.4 - shift).abs() < 1e-14);
    // Range r rescales the shift.
    let scaled: Vec<f64> = flat.iter().map(|x| 3.0 * x).collect();
    let ci3 = ci_bernstein(&scaled, 0.01, 3.0, Side::TwoSided).unwrap();
    assert!((ci3.upper - 3.0 * ci.upper).abs() < 1e-13);
    assert!(ci_bernstein(&[0.5], 0.05, 1.0, Side::Lower).is_err());
}

#[test]
fn bernstein_beats_hoeffding_at_low_variance() {
    // Bernstein pays ln(2/α) against ln(1/α), so it wins only below roughly
    // var = ln(1/α) / (4 ln(2/α)), about 0.2 at α = 0.05.
    for n in [1000, 10_000, 100_000] {
        for var in [0.0, 0.01, 0.05, 0.1] {
            for alpha in [1e-3, 0.01, 0.05] {
                assert!(bernstein_shift(var, n, alpha, 1.0, Side::Lower) <= hoeffding_shift(n, alpha, 1.0, Side::Lower));
            }
        }
    }
}

#[test]
fn multi_class_radius_dominates_mono() {
    let mut r = rng::seeded(71);
    for _ in 0..1000 {
        let p1 = uniform(&mut r, 0.5, 1.0);
        let p2 = uniform(&mut r, 0.0, 1.0 - p1);
        let sigma = uniform(&mut r, 0.1, 2.0);
        assert!(radius_mult(p1, p2, sigma) >= radius_mono(p1, sigma) - 1e-12);
        assert!((radius_mult(p1, 1.0 - p1, sigma) - radius_mono(p1, sigma)).abs() <= 1e-12);
    }
}

#[test]
fn simplex_maps_are_lipschitz() {
    let mut r = rng::seeded(72);
    for _ in 0..10_000 {
        let c = 2 + (uniform(&mut r, 0.0, 6.0) as usize);
        let z: Vec<f64> = rng::normal_vec(&mut r, c).iter().map(|x| 3.0 * x).collect();
        let dz = uniform(&mut r, 1e-4, 2.0);
        let zp: Vec<f64> = z.iter().map(|x| x + dz * rng::standard_normal(&mut r)).collect();
        let d_in = norm2(&z.iter().zip(&zp).map(|(a, b)| a - b).collect::<Vec<_>>());
        let t = uniform(&mut r, 0.1, 5.0);
        let mass = uniform(&mut r, 0.5, 3.0);
        for (kind, m) in [(SimplexKind::Softmax, mass), (SimplexKind::Sparsemax, 1.0)] {
            let map = SimplexMap::new(kind, t, m);
            let a = simplex_map(&z, &map).unwrap();
            let b = simplex_map(&zp, &map).unwrap();
            let d_out = norm2(&a.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<_>>());
            assert!(d_out <= m.max(1.0) / t * d_in * (1.0 + 1e-9), "{kind:?}: {d_out} vs {d_in}");
        }
    }
}

#[test]
fn sparsemax_projects_onto_the_simplex() {
    let mut r = rng::seeded(73);
    for _ in 0..2000 {
        let c = 2 + (uniform(&mut r, 0.0, 8.0) as usize);
        let mass = uniform(&mut r, 0.1, 5.0);
        let z: Vec<f64> = rng::normal_vec(&mut r, c).iter().map(|x| 4.0 * x).collect();
        let p = sparsemax(&z, mass);
        assert!(p.iter().all(|x| *x >= 0.0));
        assert!((p.iter().sum::<f64>() - mass).abs() <= 1e-12 * mass.max(1.0));
        let q = sparsemax(&p, mass);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn hardmax_inflates_variance() {
    let (eps, n) = (0.01, 100_000);
    let mut r = rng::seeded(74);
    let x: Vec<f64> = (0..n).map(|_| uniform(&mut r, 0.5 - eps, 0.5 + eps)).collect();
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let raw = var(&x);
    let hard: Vec<f64> = x.iter().map(|a| simplex_map(&[*a, 1.0 - a], &SimplexMap::new(SimplexKind::Hardmax, 1.0, 1.0)).unwrap()[0]).collect();
    assert!((raw / (eps * eps / 3.0) - 1.0).abs() <= 0.05);
    assert!((var(&hard) / 0.25 - 1.0).abs() <= 0.05);
}

// Per-class bounds rebuilt from the formulas.
fn hand_rolled(table: &[[f64; 3]], alpha: f64, sigma: f64, bernstein: bool) -> (usize, f64, f64, f64) {
    let n = table.len() as f64;
    let a = alpha / 3.0;
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    for j in 0..3 {
        let mean = table.iter().map(|row| row[j]).sum::<f64>() / n;
        let var = table.iter().map(|row| (row[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let shift = if bernstein {
            (2.0 * var * (2.0 / a).ln() / n).sqrt() + 7.0 * (2.0 / a).ln() / (3.0 * (n - 1.0))
        } else {
            ((1.0 / a).ln() / (2.0 * n)).sqrt()
        };
        lo[j] = (mean - shift).max(0.0);
        hi[j] = (mean + shift).min(1.0);
    }
    let i1 = (0..3).fold(0, |b, j| if lo[j] > lo[b] { j } else { b });
    let p2 = (0..3).filter(|&j| j != i1).map(|j| hi[j]).fold(0.0, f64::max);
    let rad = if lo[i1] > p2 { 0.5 * sigma * (norm_quantile(lo[i1]) - norm_quantile(p2)) } else { 0.0 };
    (i1, rad, lo[i1], p2)
}

#[test]
fn bonferroni_matches_hand_computation() {
    let mut r = rng::seeded(75);
    let mut table = [[0.0; 3]; 20];
    for row in table.iter_mut() {
        let z = [2.5 + 0.3 * rng::standard_normal(&mut r), 0.3 * rng::standard_normal(&mut r), -1.0];
        let p = simplex_map(&z, &SimplexMap::new(SimplexKind::Softmax, 1.0, 1.0)).unwrap();
        row.copy_from_slice(&p);
    }
    let flat: Vec<f64> = table.iter().flatten().copied().collect();
    let samples = ScoreSamples::new(20, 3, flat).unwrap();
    let alpha = 0.2;
    for (method, bernstein) in [(CiMethod::Bernstein, true), (CiMethod::Hoeffding, false)] {
        let got = certify_bonferroni(&samples, 0.5, alpha, method, 1.0).unwrap();
        let (i1, rad, lo, hi) = hand_rolled(&table, alpha, 0.5, bernstein);
        assert_eq!(got.predicted, i1);
        assert!((got.radius - rad).abs() <= 1e-12, "{method:?}: {} vs {rad}", got.radius);
        assert!((got.meta.lower.unwrap() - lo).abs() <= 1e-14);
        assert!((got.meta.upper.unwrap() - hi).abs() <= 1e-14);
        if !bernstein {
            assert!(rad > 0.0);
        }
    }
}

#[test]
fn bonferroni_edge_cases() {
    let n = 200;
    let mut scores = Vec::new();
    for _ in 0..n {
        scores.extend([1.0, 0.0]);
    }
    let s = ScoreSamples::new(n, 2, scores).unwrap();
    let got = certify_bonferroni(&s, 1.0, 0.01, CiMethod::ClopperPearson, 1.0).unwrap();
    let a: f64 = 0.005;
    let want = radius_mult(a.powf(1.0 / n as f64), 1.0 - a.powf(1.0 / n as f64), 1.0);
    assert_eq!(got.predicted, 0);
    assert!((got.radius - want).abs() <= 1e-12);
    let uniform: Vec<f64> = (0..300).map(|i| if i % 3 == (i / 3) % 3 { 1.0 } else { 0.0 }).collect();
    let u = ScoreSamples::new(100, 3, uniform).unwrap();
    assert_eq!(certify_bonferroni(&u, 1.0, 0.01, CiMethod::ClopperPearson, 1.0).unwrap().radius, 0.0);
    let m = certify_mono(&[90, 10], 1.0, 0.05).unwrap();
    assert!(m.radius > 0.0 && m.predicted == 0);
}

#[test]
fn cpm_partitions() {
    let p = cpm_partition(&[40, 60]).unwrap();
    assert_eq!((p.top, p.attackers.clone(), p.c_star()), (1, vec![0], 2));
    let p = cpm_partition(&[50, 30, 10, 10]).unwrap();
    assert_eq!(p.c_star(), 3);
    assert_eq!(p.meta_class, vec![2, 3]);
    assert!(certify_cpm(&[0, 0], &[1, 2], 1.0, 0.05).is_err());
}

#[test]
fn cpm_covers_the_true_radius() {
    let p = [0.6, 0.2, 0.1, 0.1];
    let sigma = 0.5;
    let truth = radius_mult(0.6, 0.2, sigma);
    let mut r = rng::seeded(76);
    let trials = 400;
    let mut miss = 0;
    for _ in 0..trials {
        let c0 = categorical_counts(&mut r, &p, 100);
        let c1 = categorical_counts(&mut r, &p, 10_000);
        let res = certify_cpm(&c0, &c1, sigma, 0.05).unwrap();
        if res.radius > truth {
            miss += 1;
        }
    }
    let limit = 0.05 + 3.0 * (0.05 * 0.95 / trials as f64).sqrt();
    assert!(miss as f64 / trials as f64 <= limit);
}

fn one_hot_samples(counts: &[u64]) -> ScoreSamples {
    let c = counts.len();
    let n: u64 = counts.iter().sum();
    let mut one_hot = Vec::with_capacity(n as usize * c);
    for (j, &k) in counts.iter().enumerate() {
        for _ in 0..k {
            one_hot.extend((0..c).map(|i| if i == j { 1.0 } else { 0.0 }));
        }
    }
    ScoreSamples::new(n as usize, c, one_hot).unwrap()
}

#[test]
fn cpm_beats_plain_bonferroni_on_concentrated_classes() {
    let mut p = vec![0.8, 0.15];
    p.extend(std::iter::repeat_n(0.05 / 8.0, 8));
    let mut r = rng::seeded(77);
    for _ in 0..50 {
        let c0 = categorical_counts(&mut r, &p, 100);
        let c1 = categorical_counts(&mut r, &p, 10_000);
        let cpm = certify_cpm(&c0, &c1, 1.0, 0.05).unwrap();
        let bonf = certify_bonferroni(&one_hot_samples(&c1), 1.0, 0.05, CiMethod::ClopperPearson, 1.0).unwrap();
        let cs = cpm.meta.c_star.unwrap();
        assert!((2..=5).contains(&cs), "c* = {cs}");
        if bonf.radius > 0.0 && cpm.radius > 0.0 {
            assert!(cpm.radius >= bonf.radius);
        }
    }
}

#[test]
fn cpm_can_lose_when_the_meta_class_is_as_heavy_as_the_runner_up() {
    // The selection phase stops merging once the meta mass ties the
    // runner-up; in the estimation phase the merged bucket then carries the
    // larger upper bound even at the milder level α/c*.
    let c0 = [70, 15, 2, 2, 2, 2, 2, 2, 1, 0];
    let c1 = [6900, 1450, 210, 210, 210, 200, 200, 200, 200, 180];
    let cpm = certify_cpm(&c0, &c1, 1.0, 0.05).unwrap();
    let bonf = certify_bonferroni(&one_hot_samples(&c1), 1.0, 0.05, CiMethod::ClopperPearson, 1.0).unwrap();
    assert_eq!(cpm.meta.c_star, Some(3));
    assert!(cpm.radius > 0.0 && bonf.radius > cpm.radius);
}

#[test]
fn lvm_reduces_to_bonferroni_for_a_single_hardmax() {
    let mut r = rng::seeded(78);
    let mu = [1.5, 0.5, 0.0, -0.5];
    let s0 = ScoreSamples::new(200, 4, noisy_logits(&mut r, &mu, 1.0, 200)).unwrap();
    let s1 = ScoreSamples::new(1000, 4, noisy_logits(&mut r, &mu, 1.0, 1000)).unwrap();
    let lvm = lvm_rs(&s0, &s1, 0.5, 0.01, &[1.0], &[SimplexKind::Hardmax], 1.0).unwrap();
    let hard = s1.mapped(&SimplexMap::new(SimplexKind::Hardmax, 1.0, 1.0)).unwrap();
    let bonf = certify_bonferroni(&hard, 0.5, 0.01, CiMethod::Bernstein, 1.0).unwrap();
    assert_eq!(lvm.radius, bonf.radius);
    assert_eq!(lvm.predicted, bonf.predicted);
    assert!(lvm_rs(&s0, &s1, 0.5, 0.01, &[1.0], &[], 1.0).is_err());
}

#[test]
fn lvm_is_deterministic_and_consistent_on_clear_margins() {
    let mut r = rng::seeded(79);
    let mu = [12.0, 1.0, 0.0, -1.0, 0.5];
    let s0 = ScoreSamples::new(100, 5, noisy_logits(&mut r, &mu, 0.3, 100)).unwrap();
    let s1 = ScoreSamples::new(1000, 5, noisy_logits(&mut r, &mu, 0.3, 1000)).unwrap();
    let temps = lipbound::certify::default_temperature_grid();
    let all = [SimplexKind::Hardmax, SimplexKind::Softmax, SimplexKind::Sparsemax];
    let a = lvm_rs(&s0, &s1, 0.25, 0.001, &temps, &all, 1.0).unwrap();
    let b = lvm_rs(&s0, &s1, 0.25, 0.001, &temps, &all, 1.0).unwrap();
    assert_eq!(a, b);
    let hard = lvm_rs(&s0, &s1, 0.25, 0.001, &[1.0], &[SimplexKind::Hardmax], 1.0).unwrap();
    for kind in [SimplexKind::Softmax, SimplexKind::Sparsemax] {
        let res = lvm_rs(&s0, &s1, 0.25, 0.001, &temps, &[kind], 1.0).unwrap();
        assert_eq!(res.predicted, hard.predicted);
        assert!(res.radius >= hard.radius - 1e-9, "{kind:?}: {} < {}", res.radius, hard.radius);
    }
}
