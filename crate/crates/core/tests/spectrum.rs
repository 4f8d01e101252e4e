use reshuffle::kernels::SymmetricMatrix;
use reshuffle::spectrum::*;
use reshuffle::{assemble, generate_gaussian, partition, BetaSpec, Route};

fn z_spectrum(n: usize, p: usize, alpha: f64, seed: u64) -> Vec<f64> {
    let problem = generate_gaussian(n, p, None, 0.0, &BetaSpec::UnitSphere, seed).unwrap();
    let parts = partition(&problem, 2).unwrap();
    let ops = assemble(&parts, alpha / 2.0, Route::ClosedForm).unwrap();
    ops.z().eigenvalues().into_iter().map(|l| alpha * l).collect()
}

fn density(gamma: f64, alpha: f64) -> SpectralDensity {
    spectral_density(gamma, alpha, &GridSpec::default(), &OperatorCauchyState::default()).unwrap()
}

#[test]
fn empirical_spectrum_of_two_batch_operator_matches_both_regimes() {
    for &(gamma, alpha, p) in &[(0.25, 0.4, 250usize), (1.5, 0.2, 1500)] {
        let d = density(gamma, alpha);
        let ev = z_spectrum(1000, p, alpha, 11);
        let ks = d.ks_distance(&ev, 1e-9);
        assert!(ks <= 0.05, "gamma = {gamma}: KS = {ks}");
        assert!((d.mass - 1.0).abs() <= 0.01);
    }
}

#[test]
fn underparameterized_large_draw_and_right_edge_shrinkage() {
    let (gamma, alpha) = (0.25, 0.4);
    let d = density(gamma, alpha);
    let ev = z_spectrum(4000, 1000, alpha, 3);
    let ks = d.ks_distance(&ev, 1e-9);
    assert!(ks <= 0.03, "KS = {ks}");
    let fmax = d.density.iter().cloned().fold(0.0, f64::max);
    let right = d
        .grid
        .iter()
        .zip(&d.density)
        .filter(|(_, &f)| f > 1e-3 * fmax)
        .map(|(x, _)| *x)
        .fold(f64::MIN, f64::max);
    let mp_edge = MarchenkoPastur::new(gamma, alpha).unwrap().support().1;
    assert!(right < mp_edge - 0.05, "right edge {right} vs {mp_edge}");
}

/// `p(a w1 / 2, a w2 / 2)` for independent Gaussian blocks, computed directly.
#[test]
fn asymptotic_freeness_surrogate_over_seeds() {
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let (gamma, alpha, n) = (1.5, 0.2, 1000usize);
    let p = (gamma * n as f64) as usize;
    let d = density(gamma, alpha);
    let lin = Linearization::two_batch();
    for seed in 0..5u64 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(100 + seed);
        let mut block = || {
            let x = DMatrix::<f64>::from_fn(n / 2, p, |_, _| StandardNormal.sample(&mut rng));
            (x.transpose() * x) * (alpha / 2.0 / (n / 2) as f64)
        };
        let (w1, w2) = (block(), block());
        let ev = SymmetricMatrix::symmetrize(lin.polynomial(&w1, &w2)).eigenvalues();
        let ks = d.ks_distance(&ev, 1e-9);
        assert!(ks <= 0.05, "seed {seed}: KS = {ks}");
    }
}

/// Moments of `p(w1, w2)` by summing free cumulants over non-crossing partitions
/// whose blocks are monochromatic.
fn free_moment(word: &[usize], kappa: &dyn Fn(usize) -> f64) -> f64 {
    let n = word.len();
    let mut total = 0.0;
    let mut labels = vec![0usize; n];
    fn rec(i: usize, max: usize, labels: &mut Vec<usize>, word: &[usize], kappa: &dyn Fn(usize) -> f64, total: &mut f64) {
        let n = word.len();
        if i == n {
            for a in 0..n {
                for b in a + 1..n {
                    for c in b + 1..n {
                        for d in c + 1..n {
                            if labels[a] == labels[c] && labels[b] == labels[d] && labels[a] != labels[b] {
                                return;
                            }
                        }
                    }
                }
            }
            let mut prod = 1.0;
            for blk in 0..=max {
                let members: Vec<usize> = (0..n).filter(|&j| labels[j] == blk).collect();
                if members.is_empty() {
                    continue;
                }
                if members.iter().any(|&j| word[j] != word[members[0]]) {
                    return;
                }
                prod *= kappa(members.len());
            }
            *total += prod;
            return;
        }
        for l in 0..=max + 1 {
            labels[i] = l;
            rec(i + 1, max.max(l), labels, word, kappa, total);
        }
    }
    if n == 0 {
        return 1.0;
    }
    labels[0] = 0;
    rec(1, 0, &mut labels, word, kappa, &mut total);
    total
}

#[test]
fn moments_match_free_cumulant_oracle() {
    let (gamma, alpha) = (1.5, 0.2);
    let input = MarchenkoPastur::new(2.0 * gamma, alpha / 2.0).unwrap();
    let kappa = |m: usize| input.free_cumulant(m as u32);
    // p = w1 + w2 - (w1 w2 + w2 w1) / 2 as weighted words.
    let p: Vec<(f64, Vec<usize>)> = vec![(1.0, vec![0]), (1.0, vec![1]), (-0.5, vec![0, 1]), (-0.5, vec![1, 0])];
    let mut power: Vec<(f64, Vec<usize>)> = vec![(1.0, vec![])];
    let d = density(gamma, alpha);
    for k in 1..=3 {
        power = power
            .iter()
            .flat_map(|(c, w)| {
                p.iter().map(move |(c2, w2)| (c * c2, w.iter().chain(w2).copied().collect::<Vec<_>>()))
            })
            .collect();
        let exact: f64 = power.iter().map(|(c, w)| c * free_moment(w, &kappa)).sum();
        let computed = d.moment(k);
        assert!((computed - exact).abs() <= 0.02 * exact.abs(), "k = {k}: {computed} vs {exact}");
        if k == 1 {
            let v = alpha / 2.0;
            assert!((exact - (2.0 * v - v * v)).abs() < 1e-14);
        }
    }
}

#[test]
fn oracle_reproduces_marchenko_pastur_moments() {
    // Sum of the two inputs is MP(gamma, alpha): second moment alpha^2 (1 + gamma).
    let input = MarchenkoPastur::new(3.0, 0.1).unwrap();
    let kappa = |m: usize| input.free_cumulant(m as u32);
    let words = [vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]];
    let m2: f64 = words.iter().map(|w| free_moment(w, &kappa)).sum();
    assert!((m2 - 0.2f64.powi(2) * 2.5).abs() < 1e-14);
}
