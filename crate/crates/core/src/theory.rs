//! Brute-force checks of the opposite-label probability model on small discrete instances.
//!
//! The transition operator `C[i][j] = P(Ȳ = j | Y = i)` is uniform on the
//! opposite pool of `i`; for a class posterior `s(x)` the opposite-label
//! posterior is `s̄(x) = Cᵀ s(x)`.
//!
//! [`verify_theorem1`] enumerates every deterministic labeling of a finite
//! support, scores it by the exact expected composite risk (the opposite
//! term taken in expectation through `C`), and reports whether the risk
//! minimizers coincide with the Bayes classifier `argmax_i P(Y = i | x)`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::loss::{self, CompositeLossConfig, ProbVector};
use crate::rng::SeededRng;
use crate::sampler::sample_opposite_sd;
use crate::taxonomy::{ClassId, SemanticPrior};

/// Row-stochastic `c × c` operator, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    entries: Vec<f64>,
    class_count: usize,
}

impl TransitionMatrix {
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.class_count + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.class_count..(i + 1) * self.class_count]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

pub fn build_transition(prior: &SemanticPrior) -> TransitionMatrix {
    let c = prior.class_count();
    let mut entries = vec![0.0; c * c];
    for i in 0..c {
        let pool = prior.opposite_pool(ClassId(i));
        let w = 1.0 / pool.len() as f64;
        for j in pool {
            entries[i * c + j.0] = w;
        }
    }
    TransitionMatrix {
        entries,
        class_count: c,
    }
}

/// `s̄ = Cᵀ s`.
pub fn induced_opposite(s: &ProbVector, c: &TransitionMatrix) -> Result<ProbVector> {
    let n = c.class_count();
    if s.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: s.len(),
        });
    }
    let mut out = vec![0.0; n];
    for (i, &si) in s.as_slice().iter().enumerate() {
        for (o, &cij) in out.iter_mut().zip(c.row(i)) {
            *o += si * cij;
        }
    }
    ProbVector::new(out)
}

pub const MIN_MONTE_CARLO_DRAWS: u64 = 100_000;

/// Draws `y ∼ s` then `ȳ` by SD sampling, and returns the L∞ distance between the
/// empirical `ȳ` frequencies and `Cᵀ s`.
pub fn monte_carlo_consistency(s: &ProbVector, prior: &SemanticPrior, rng: &mut SeededRng, draws: u64) -> Result<f64> {
    if draws < MIN_MONTE_CARLO_DRAWS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_MONTE_CARLO_DRAWS} draws, got {draws}"
        )));
    }
    let expected = induced_opposite(s, &build_transition(prior))?;
    let c = prior.class_count();
    let mut cdf = Vec::with_capacity(c);
    let mut acc = 0.0;
    for &p in s.as_slice() {
        acc += p;
        cdf.push(acc);
    }
    let mut counts = vec![0u64; c];
    for _ in 0..draws {
        let u = rng.uniform() * acc;
        let y = cdf.partition_point(|&v| v <= u).min(c - 1);
        counts[sample_opposite_sd(prior, ClassId(y), rng).value.0] += 1;
    }
    Ok(counts
        .iter()
        .zip(expected.as_slice())
        .map(|(&k, &e)| (k as f64 / draws as f64 - e).abs())
        .fold(0.0, f64::max))
}

/// Finite support with point masses and class posteriors `P(Y | X = x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteInstance {
    pub point_mass: Vec<f64>,
    /// One row per support point, each a distribution over the classes.
    pub cond: Vec<Vec<f64>>,
}

impl DiscreteInstance {
    pub fn new(point_mass: Vec<f64>, cond: Vec<Vec<f64>>) -> Result<Self> {
        if point_mass.is_empty() || point_mass.len() != cond.len() {
            return Err(Error::DimensionMismatch {
                expected: point_mass.len(),
                actual: cond.len(),
            });
        }
        ProbVector::new(point_mass.clone())?;
        let c = cond[0].len();
        for row in &cond {
            if row.len() != c {
                return Err(Error::DimensionMismatch {
                    expected: c,
                    actual: row.len(),
                });
            }
            ProbVector::new(row.clone())?;
        }
        Ok(DiscreteInstance { point_mass, cond })
    }

    pub fn support_size(&self) -> usize {
        self.point_mass.len()
    }

    pub fn class_count(&self) -> usize {
        self.cond[0].len()
    }

    /// Bayes classifier on each support point (lowest index on ties).
    pub fn bayes_labeling(&self) -> Vec<ClassId> {
        self.cond.iter().map(|row| ClassId(loss::argmax(row))).collect()
    }

    /// Smallest gap between the two largest posteriors over all points.
    pub fn min_margin(&self) -> (usize, f64) {
        self.cond
            .iter()
            .map(|row| top2_gap(row))
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |best, (i, g)| if g < best.1 { (i, g) } else { best },
            )
    }
}

fn top2_gap(row: &[f64]) -> f64 {
    let mut sorted = row.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted.len() < 2 {
        f64::INFINITY
    } else {
        sorted[0] - sorted[1]
    }
}

pub const MIN_MARGIN: f64 = 1e-3;
pub const MAX_SUPPORT: usize = 8;
pub const MAX_CLASSES: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Report {
    /// Every risk-minimizing labeling equals the Bayes labeling.
    pub agreement: bool,
    pub bayes_labeling: Vec<ClassId>,
    /// First labeling (in enumeration order) attaining the minimum risk.
    pub minimizer: Vec<ClassId>,
    pub bayes_risk: f64,
    pub min_risk: f64,
    /// Best risk among labelings that differ from the Bayes labeling somewhere.
    pub best_disagreeing_risk: f64,
    /// `best_disagreeing_risk − bayes_risk`; positive exactly when the Bayes labeling wins strictly.
    pub risk_gap: f64,
    pub labelings: u64,
}

/// Expected composite loss of predicting `label` (as a one-hot output) at a
/// point whose posterior is `s` and opposite posterior `s_bar`.
fn pointwise_risk(label: usize, s: &[f64], s_bar: &[f64], cfg: &CompositeLossConfig) -> f64 {
    let c = s.len();
    let out = ProbVector::one_hot(c, ClassId(label));
    let mut positive = 0.0;
    let mut opposite = 0.0;
    for y in 0..c {
        positive += s[y] * loss::positive_loss(&out, ClassId(y), cfg.prob_clamp);
        opposite += s_bar[y] * loss::opposite_loss(&out, ClassId(y), cfg.prob_clamp);
    }
    cfg.alpha1 * positive + cfg.alpha2 * opposite
}

pub fn verify_theorem1(
    instance: &DiscreteInstance,
    prior: &SemanticPrior,
    cfg: &CompositeLossConfig,
) -> Result<Theorem1Report> {
    cfg.validate()?;
    let c = instance.class_count();
    let n = instance.support_size();
    if prior.class_count() != c {
        return Err(Error::DimensionMismatch {
            expected: prior.class_count(),
            actual: c,
        });
    }
    let labelings = (c as u128).pow(n as u32);
    if n > MAX_SUPPORT || c > MAX_CLASSES {
        return Err(Error::EnumerationTooLarge {
            labelings,
            support: n,
            classes: c,
        });
    }
    let (point, gap) = instance.min_margin();
    if gap < MIN_MARGIN {
        return Err(Error::DegenerateMargin {
            point,
            gap,
            min_gap: MIN_MARGIN,
        });
    }

    let transition = build_transition(prior);
    // cost[x][l]: mass-weighted expected loss of labeling point x with l.
    let mut cost = vec![vec![0.0; c]; n];
    for (x, row) in cost.iter_mut().enumerate() {
        let s = ProbVector::new(instance.cond[x].clone())?;
        let s_bar = induced_opposite(&s, &transition)?;
        for (l, slot) in row.iter_mut().enumerate() {
            *slot = instance.point_mass[x] * pointwise_risk(l, s.as_slice(), s_bar.as_slice(), cfg);
        }
    }

    let bayes = instance.bayes_labeling();
    let mut labeling = vec![0usize; n];
    let mut min_risk = f64::INFINITY;
    let mut minimizer = labeling.clone();
    let mut bayes_risk = f64::NAN;
    let mut best_disagreeing = f64::INFINITY;
    let mut count = 0u64;
    loop {
        let risk: f64 = labeling.iter().enumerate().map(|(x, &l)| cost[x][l]).sum();
        count += 1;
        let is_bayes = labeling.iter().zip(&bayes).all(|(&l, b)| l == b.0);
        if is_bayes {
            bayes_risk = risk;
        } else if risk < best_disagreeing {
            best_disagreeing = risk;
        }
        if risk < min_risk {
            min_risk = risk;
            minimizer.copy_from_slice(&labeling);
        }
        // Odometer increment.
        let mut pos = 0;
        loop {
            if pos == n {
                break;
            }
            labeling[pos] += 1;
            if labeling[pos] < c {
                break;
            }
            labeling[pos] = 0;
            pos += 1;
        }
        if pos == n {
            break;
        }
    }

    let risk_gap = best_disagreeing - bayes_risk;
    Ok(Theorem1Report {
        agreement: risk_gap > 0.0,
        bayes_labeling: bayes,
        minimizer: minimizer.into_iter().map(ClassId).collect(),
        bayes_risk,
        min_risk,
        best_disagreeing_risk: best_disagreeing,
        risk_gap,
        labelings: count,
    })
}

/// Dirichlet(1, …, 1) sample.
fn flat_dirichlet(k: usize, rng: &mut SeededRng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k).map(|_| -(1.0 - rng.uniform()).ln()).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Random prior with `2 ≤ colonies ≤ c` non-empty colonies.
pub fn random_prior(class_count: usize, rng: &mut SeededRng) -> SemanticPrior {
    assert!(class_count >= 2);
    let k = 2 + rng.below_usize(class_count - 1);
    let mut classes: Vec<usize> = (0..class_count).collect();
    rng.shuffle(&mut classes);
    // First k classes seed one colony each; the rest join a uniform colony.
    let mut colonies: Vec<Vec<usize>> = classes[..k].iter().map(|&c| vec![c]).collect();
    for &c in &classes[k..] {
        colonies[rng.below_usize(k)].push(c);
    }
    SemanticPrior::new(
        class_count,
        None,
        colonies.into_iter().enumerate().map(|(i, m)| (format!("g{i}"), m)),
    )
    .expect("construction yields a partition")
}

/// Random instance with `1..=max_support` points and `2..=max_classes` classes.
/// Posterior rows are flat-Dirichlet, redrawn until the top-2 gap is at least [`MIN_MARGIN`].
pub fn random_instance(
    max_support: usize,
    max_classes: usize,
    rng: &mut SeededRng,
) -> (DiscreteInstance, SemanticPrior) {
    let c = 2 + rng.below_usize(max_classes - 1);
    let n = 1 + rng.below_usize(max_support);
    let prior = random_prior(c, rng);
    let point_mass = flat_dirichlet(n, rng);
    let cond = (0..n)
        .map(|_| loop {
            let row = flat_dirichlet(c, rng);
            if top2_gap(&row) >= MIN_MARGIN {
                break row;
            }
        })
        .collect();
    let inst = DiscreteInstance::new(point_mass, cond).expect("valid by construction");
    (inst, prior)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryRow {
    pub instance: usize,
    pub classes: usize,
    pub colonies: usize,
    pub support: usize,
    pub report: Theorem1Report,
}

/// Runs [`verify_theorem1`] on `count` random instances drawn from `seed`.
pub fn theorem1_suite(
    count: usize,
    max_support: usize,
    max_classes: usize,
    cfg: &CompositeLossConfig,
    seed: u64,
) -> Result<Vec<TheoryRow>> {
    let mut rng = SeededRng::new(seed);
    (0..count)
        .map(|id| {
            let (inst, prior) = random_instance(max_support, max_classes, &mut rng);
            let report = verify_theorem1(&inst, &prior, cfg)?;
            Ok(TheoryRow {
                instance: id,
                classes: inst.class_count(),
                colonies: prior.colonies().len(),
                support: inst.support_size(),
                report,
            })
        })
        .collect()
}

pub const THEORY_CSV_HEADER: [&str; 9] = [
    "instance",
    "classes",
    "colonies",
    "support",
    "agreement",
    "risk_gap",
    "bayes_risk",
    "best_disagreeing_risk",
    "minimizer",
];

pub fn write_theory_csv<W: Write>(rows: &[TheoryRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(THEORY_CSV_HEADER)?;
    for r in rows {
        let minimizer: Vec<String> = r.report.minimizer.iter().map(|c| c.to_string()).collect();
        w.write_record([
            r.instance.to_string(),
            r.classes.to_string(),
            r.colonies.to_string(),
            r.support.to_string(),
            u8::from(r.report.agreement).to_string(),
            r.report.risk_gap.to_string(),
            r.report.bayes_risk.to_string(),
            r.report.best_disagreeing_risk.to_string(),
            minimizer.join(" "),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_colonies_of_three() -> SemanticPrior {
        SemanticPrior::new(3, None, [("a", vec![0]), ("b", vec![1, 2])]).unwrap()
    }

    #[test]
    fn forced_permutation() {
        let p = SemanticPrior::new(2, None, [("a", vec![0]), ("b", vec![1])]).unwrap();
        let c = build_transition(&p);
        assert_eq!(c.entries(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn cifar10_rows() {
        let p = SemanticPrior::builtin("cifar10").unwrap();
        let c = build_transition(&p);
        for i in 0..10 {
            let row = c.row(i);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let vehicle = [0, 1, 8, 9].contains(&i);
            for (j, &v) in row.iter().enumerate() {
                let j_vehicle = [0, 1, 8, 9].contains(&j);
                if vehicle == j_vehicle {
                    assert_eq!(v, 0.0);
                } else if vehicle {
                    assert_eq!(v, 1.0 / 6.0);
                } else {
                    assert_eq!(v, 0.25);
                }
            }
        }
    }

    #[test]
    fn one_hot_posterior_gives_row() {
        let p = SemanticPrior::builtin("fashion-mnist").unwrap();
        let c = build_transition(&p);
        let s_bar = induced_opposite(&ProbVector::one_hot(10, ClassId(8)), &c).unwrap();
        assert_eq!(s_bar.as_slice(), c.row(8));
    }

    #[test]
    fn dimension_mismatch() {
        let c = build_transition(&two_colonies_of_three());
        assert!(induced_opposite(&ProbVector::uniform(4), &c).is_err());
    }

    #[test]
    fn monte_carlo_needs_enough_draws() {
        let p = two_colonies_of_three();
        let err = monte_carlo_consistency(&ProbVector::uniform(3), &p, &mut SeededRng::new(0), 10);
        assert!(err.is_err());
    }

    #[test]
    fn single_point_example_agrees() {
        let inst = DiscreteInstance::new(vec![1.0], vec![vec![0.6, 0.3, 0.1]]).unwrap();
        let r = verify_theorem1(&inst, &two_colonies_of_three(), &CompositeLossConfig::default()).unwrap();
        assert_eq!(r.labelings, 3);
        assert_eq!(r.minimizer, vec![ClassId(0)]);
        assert!(r.agreement);
        assert!(r.risk_gap > 0.0);
    }

    #[test]
    fn opposite_term_can_move_the_minimizer() {
        // Class 0 is the opposite label of 60% of the posterior mass, so the
        // opposite term outweighs its 5-point lead.
        let inst = DiscreteInstance::new(vec![1.0], vec![vec![0.4, 0.35, 0.25]]).unwrap();
        let r = verify_theorem1(&inst, &two_colonies_of_three(), &CompositeLossConfig::default()).unwrap();
        assert_eq!(r.bayes_labeling, vec![ClassId(0)]);
        assert_eq!(r.minimizer, vec![ClassId(1)]);
        assert!(!r.agreement);
    }

    #[test]
    fn cross_entropy_always_agrees() {
        let cfg = CompositeLossConfig::cross_entropy();
        let rows = theorem1_suite(50, 6, 5, &cfg, 3).unwrap();
        assert!(rows.iter().all(|r| r.report.agreement));
    }

    #[test]
    fn degenerate_and_oversized_instances_rejected() {
        let p = two_colonies_of_three();
        let inst = DiscreteInstance::new(vec![1.0], vec![vec![0.4, 0.4, 0.2]]).unwrap();
        assert!(matches!(
            verify_theorem1(&inst, &p, &CompositeLossConfig::default()),
            Err(Error::DegenerateMargin { point: 0, .. })
        ));
        let big = DiscreteInstance::new(vec![1.0 / 9.0; 9], vec![vec![0.6, 0.3, 0.1]; 9]).unwrap();
        assert!(matches!(
            verify_theorem1(&big, &p, &CompositeLossConfig::default()),
            Err(Error::EnumerationTooLarge { support: 9, .. })
        ));
    }

    #[test]
    fn random_instances_are_valid() {
        let mut rng = SeededRng::new(4);
        for _ in 0..200 {
            let (inst, prior) = random_instance(6, 5, &mut rng);
            assert!((1..=6).contains(&inst.support_size()));
            assert!((2..=5).contains(&inst.class_count()));
            assert!(prior.colonies().len() >= 2);
            assert!(inst.min_margin().1 >= MIN_MARGIN);
        }
    }

    #[test]
    fn csv_header() {
        let rows = theorem1_suite(2, 3, 3, &CompositeLossConfig::default(), 0).unwrap();
        let mut buf = Vec::new();
        write_theory_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("instance,classes,colonies,support,agreement,risk_gap,"));
        assert_eq!(text.lines().count(), 3);
    }
}
