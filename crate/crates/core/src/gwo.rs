//! Grey wolf optimizer over the unit hypercube, and its use as a wrapper
//! feature selector for histogram bins.
//!
//! Minimization throughout. The three leaders are best-so-far: they are the
//! top three of the previous leaders and the freshly evaluated pack, so the
//! alpha fitness never increases. Random draws for a step are generated up
//! front in a fixed order, which keeps parallel fitness evaluation
//! bit-identical to the sequential path.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cpwt::FeatureVector;
use crate::error::{Error, Result};
use crate::exec::Execution;

pub const MIN_WOLVES: usize = 4;
pub const SELECT_THRESHOLD: f64 = 0.5;
pub const SIZE_PENALTY: f64 = 0.01;
pub const VALIDATION_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct Wolf {
    pub position: Vec<f64>,
    pub fitness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackState {
    pub wolves: Vec<Wolf>,
    pub alpha: Wolf,
    pub beta: Wolf,
    pub delta: Wolf,
    pub iteration: usize,
    pub max_iterations: usize,
    pub a: f64,
}

/// Linear decay of the exploration coefficient from 2 to 0.
pub fn coefficient_schedule(t: usize, max_iterations: usize) -> f64 {
    debug_assert!(max_iterations >= 1 && t <= max_iterations);
    2.0 * (1.0 - t as f64 / max_iterations as f64)
}

fn checked(fitness: f64, wolf: usize) -> Result<f64> {
    if fitness.is_finite() {
        Ok(fitness)
    } else {
        Err(Error::NonFinite(format!("fitness of wolf {wolf} is {fitness}")))
    }
}

fn evaluate<F>(positions: Vec<Vec<f64>>, fitness: &F, exec: Execution) -> Result<Vec<Wolf>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let scores = exec.map(&positions, |p| fitness(p));
    positions
        .into_iter()
        .zip(scores)
        .enumerate()
        .map(|(i, (position, f))| Ok(Wolf { position, fitness: checked(f, i)? }))
        .collect()
}

/// Top three by fitness; earlier candidates win ties.
fn leaders<'a>(candidates: impl Iterator<Item = &'a Wolf>) -> [Wolf; 3] {
    let mut sorted: Vec<&Wolf> = candidates.collect();
    sorted.sort_by(|a, b| a.fitness.total_cmp(&b.fitness));
    [sorted[0].clone(), sorted[1].clone(), sorted[2].clone()]
}

impl PackState {
    /// Uniform random pack in `[0, 1]^dim`.
    pub fn init<F, R>(n_wolves: usize, dim: usize, max_iterations: usize, fitness: &F, rng: &mut R, exec: Execution) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Sync,
        R: Rng,
    {
        if n_wolves < MIN_WOLVES {
            return Err(Error::InvalidInput(format!(
                "grey wolf pack needs at least {MIN_WOLVES} wolves, got {n_wolves}"
            )));
        }
        if dim == 0 {
            return Err(Error::InvalidInput("search dimension must be positive".into()));
        }
        if max_iterations == 0 {
            return Err(Error::InvalidInput("iteration budget must be positive".into()));
        }
        let positions: Vec<Vec<f64>> = (0..n_wolves)
            .map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let wolves = evaluate(positions, fitness, exec)?;
        let [alpha, beta, delta] = leaders(wolves.iter());
        Ok(PackState {
            wolves,
            alpha,
            beta,
            delta,
            iteration: 0,
            max_iterations,
            a: coefficient_schedule(0, max_iterations),
        })
    }

    pub fn dim(&self) -> usize {
        self.alpha.position.len()
    }

    /// One encircle-and-attack update of every wolf.
    pub fn step<F, R>(&mut self, fitness: &F, rng: &mut R, exec: Execution) -> Result<()>
    where
        F: Fn(&[f64]) -> f64 + Sync,
        R: Rng,
    {
        let (n, dim, a) = (self.wolves.len(), self.dim(), self.a);
        // per wolf, per leader, per dimension: (r1, r2)
        let draws: Vec<f64> = (0..n * 3 * dim * 2).map(|_| rng.gen::<f64>()).collect();
        let leaders = [&self.alpha.position, &self.beta.position, &self.delta.position];
        let wolves = &self.wolves;
        let positions: Vec<Vec<f64>> = exec.map_range(n, |i| {
            let x = &wolves[i].position;
            (0..dim)
                .map(|j| {
                    let mut sum = 0.0;
                    for (l, leader) in leaders.iter().enumerate() {
                        let k = ((i * 3 + l) * dim + j) * 2;
                        let big_a = 2.0 * a * draws[k] - a;
                        let big_c = 2.0 * draws[k + 1];
                        let d = (big_c * leader[j] - x[j]).abs();
                        sum += leader[j] - big_a * d;
                    }
                    (sum / 3.0).clamp(0.0, 1.0)
                })
                .collect()
        });
        self.wolves = evaluate(positions, fitness, exec)?;
        let [alpha, beta, delta] = leaders_of(self);
        self.alpha = alpha;
        self.beta = beta;
        self.delta = delta;
        self.iteration += 1;
        self.a = coefficient_schedule(self.iteration.min(self.max_iterations), self.max_iterations);
        Ok(())
    }
}

fn leaders_of(pack: &PackState) -> [Wolf; 3] {
    leaders([&pack.alpha, &pack.beta, &pack.delta].into_iter().chain(pack.wolves.iter()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GwoParams {
    pub wolves: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for GwoParams {
    fn default() -> Self {
        GwoParams {
            wolves: 20,
            iterations: 60,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
    /// Alpha fitness after each iteration.
    pub history: Vec<f64>,
}

pub fn optimize<F>(fitness: &F, dim: usize, params: &GwoParams, exec: Execution) -> Result<OptimizeResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    optimize_with_rng(fitness, dim, params, &mut rng, exec)
}

fn optimize_with_rng<F, R>(fitness: &F, dim: usize, params: &GwoParams, rng: &mut R, exec: Execution) -> Result<OptimizeResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
    R: Rng,
{
    let mut pack = PackState::init(params.wolves, dim, params.iterations, fitness, rng, exec)?;
    let mut history = Vec::with_capacity(params.iterations);
    for _ in 0..params.iterations {
        pack.step(fitness, rng, exec)?;
        history.push(pack.alpha.fitness);
    }
    Ok(OptimizeResult {
        best_position: pack.alpha.position,
        best_fitness: pack.alpha.fitness,
        history,
    })
}

/// Binary bin selection, persisted as `{dim, selected, position}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub dim: usize,
    pub selected: Vec<usize>,
    pub position: Vec<f64>,
}

impl FeatureMask {
    /// Thresholds a position at 0.5; if nothing survives, the largest entry
    /// (lowest index on ties) is switched on.
    pub fn from_position(position: &[f64]) -> Self {
        let mut selected: Vec<usize> = position
            .iter()
            .enumerate()
            .filter(|&(_, &p)| p > SELECT_THRESHOLD)
            .map(|(i, _)| i)
            .collect();
        if selected.is_empty() && !position.is_empty() {
            let mut best = 0;
            for (i, &p) in position.iter().enumerate() {
                if p > position[best] {
                    best = i;
                }
            }
            selected.push(best);
        }
        FeatureMask {
            dim: position.len(),
            selected,
            position: position.to_vec(),
        }
    }

    pub fn all(dim: usize) -> Self {
        FeatureMask {
            dim,
            selected: (0..dim).collect(),
            position: vec![1.0; dim],
        }
    }

    pub fn count(&self) -> usize {
        self.selected.len()
    }

    pub fn contains(&self, bin: usize) -> bool {
        self.selected.binary_search(&bin).is_ok()
    }

    pub fn flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.dim];
        for &i in &self.selected {
            flags[i] = true;
        }
        flags
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("mask serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mask: FeatureMask = serde_json::from_str(&text).map_err(|e| Error::artifact(path, e))?;
        if mask.selected.is_empty() || mask.selected.iter().any(|&i| i >= mask.dim) || !mask.selected.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::artifact(path, "selected bins must be sorted, unique and inside dim"));
        }
        Ok(mask)
    }
}

/// Nearest-centroid scorer on a fixed fit/validation split.
struct CentroidScorer<'a> {
    features: &'a [FeatureVector],
    labels: &'a [usize],
    n_classes: usize,
    fit: Vec<usize>,
    validation: Vec<usize>,
}

impl CentroidScorer<'_> {
    fn accuracy(&self, mask: &FeatureMask) -> f64 {
        let bins = &mask.selected;
        let mut centroids = vec![vec![0.0; bins.len()]; self.n_classes];
        let mut counts = vec![0usize; self.n_classes];
        for &i in &self.fit {
            let class = self.labels[i];
            counts[class] += 1;
            for (acc, &b) in centroids[class].iter_mut().zip(bins) {
                *acc += self.features[i].bins[b];
            }
        }
        for (centroid, &n) in centroids.iter_mut().zip(&counts) {
            if n > 0 {
                centroid.iter_mut().for_each(|v| *v /= n as f64);
            }
        }
        let correct = self
            .validation
            .iter()
            .filter(|&&i| {
                let x = &self.features[i].bins;
                let mut best = (f64::INFINITY, 0);
                for (class, centroid) in centroids.iter().enumerate() {
                    if counts[class] == 0 {
                        continue;
                    }
                    let d: f64 = centroid.iter().zip(bins).map(|(c, &b)| (x[b] - c).powi(2)).sum();
                    if d < best.0 {
                        best = (d, class);
                    }
                }
                best.1 == self.labels[i]
            })
            .count();
        correct as f64 / self.validation.len() as f64
    }

    fn fitness(&self, position: &[f64]) -> f64 {
        let mask = FeatureMask::from_position(position);
        (1.0 - self.accuracy(&mask)) + SIZE_PENALTY * mask.count() as f64 / mask.dim as f64
    }
}

/// Stratified split; each class keeps at least one fitting sample.
fn stratified_split<R: Rng>(labels: &[usize], n_classes: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let (mut fit, mut validation) = (Vec::new(), Vec::new());
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(rng);
        let n = members.len();
        let n_val = if n >= 2 {
            ((VALIDATION_FRACTION * n as f64).round() as usize).clamp(1, n - 1)
        } else {
            0
        };
        validation.extend_from_slice(&members[..n_val]);
        fit.extend_from_slice(&members[n_val..]);
    }
    fit.sort_unstable();
    validation.sort_unstable();
    if validation.is_empty() {
        validation = fit.clone();
    }
    (fit, validation)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub mask: FeatureMask,
    pub fitness: f64,
    pub validation_accuracy: f64,
    pub history: Vec<f64>,
}

/// Wrapper feature selection: GWO minimizes validation error of a
/// nearest-centroid classifier plus a small penalty on the selected fraction.
pub fn select_features(features: &[FeatureVector], labels: &[usize], params: &GwoParams, exec: Execution) -> Result<Selection> {
    if features.len() != labels.len() {
        return Err(Error::Shape(format!("{} features vs {} labels", features.len(), labels.len())));
    }
    let dim = features.first().map(|f| f.len()).unwrap_or(0);
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(Error::Shape("features must share one non-zero length".into()));
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let present = (0..n_classes).filter(|c| labels.contains(c)).count();
    if present < 2 {
        return Err(Error::SingleClass(present));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (fit, validation) = stratified_split(labels, n_classes, &mut rng);
    let scorer = CentroidScorer {
        features,
        labels,
        n_classes,
        fit,
        validation,
    };
    let fitness = |p: &[f64]| scorer.fitness(p);
    let result = optimize_with_rng(&fitness, dim, params, &mut rng, exec)?;
    let mask = FeatureMask::from_position(&result.best_position);
    let validation_accuracy = scorer.accuracy(&mask);
    Ok(Selection {
        mask,
        fitness: result.best_fitness,
        validation_accuracy,
        history: result.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere01(p: &[f64]) -> f64 {
        p.iter().map(|x| (20.0 * x - 10.0).powi(2)).sum()
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(coefficient_schedule(0, 10), 2.0);
        assert_eq!(coefficient_schedule(10, 10), 0.0);
        assert_eq!(coefficient_schedule(50, 100), 1.0);
    }

    #[test]
    fn init_is_seeded_and_ordered() {
        let f = |p: &[f64]| p.iter().sum::<f64>();
        let mk = || PackState::init(4, 2, 10, &f, &mut ChaCha8Rng::seed_from_u64(5), Execution::Sequential).unwrap();
        let (a, b) = (mk(), mk());
        assert_eq!(a, b);
        assert!(a.wolves.iter().all(|w| a.alpha.fitness <= w.fitness));
        assert!(a.alpha.fitness <= a.beta.fitness && a.beta.fitness <= a.delta.fitness);
        assert_eq!(a.a, 2.0);
        let err = PackState::init(3, 2, 10, &f, &mut ChaCha8Rng::seed_from_u64(5), Execution::Sequential);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn constant_fitness_stays_constant() {
        let f = |_: &[f64]| 3.0;
        let r = optimize(&f, 3, &GwoParams { wolves: 6, iterations: 20, seed: 1 }, Execution::Sequential).unwrap();
        assert!(r.history.iter().all(|&h| h == 3.0));
    }

    #[test]
    fn step_keeps_bounds_and_leader_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pack = PackState::init(10, 4, 30, &sphere01, &mut rng, Execution::Sequential).unwrap();
        for _ in 0..30 {
            let before = pack.alpha.fitness;
            pack.step(&sphere01, &mut rng, Execution::Sequential).unwrap();
            assert!(pack.alpha.fitness <= before);
            assert!(pack.wolves.iter().all(|w| w.position.iter().all(|&x| (0.0..=1.0).contains(&x))));
            assert!(pack.alpha.fitness <= pack.beta.fitness && pack.beta.fitness <= pack.delta.fitness);
            let better = pack.wolves.iter().filter(|w| w.fitness < pack.delta.fitness).count();
            assert!(better <= 2);
        }
        assert_eq!(pack.iteration, 30);
        assert_eq!(pack.a, 0.0);
    }

    #[test]
    fn non_finite_fitness_is_an_error() {
        let f = |p: &[f64]| if p[0] > 0.0 { f64::NAN } else { 0.0 };
        let r = optimize(&f, 1, &GwoParams { wolves: 4, iterations: 2, seed: 0 }, Execution::Sequential);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn one_dimensional_quadratic_converges() {
        let f = |p: &[f64]| (p[0] - 0.3).powi(2);
        for seed in 0..10 {
            let r = optimize(&f, 1, &GwoParams { wolves: 20, iterations: 100, seed }, Execution::Sequential).unwrap();
            assert!((r.best_position[0] - 0.3).abs() < 0.01, "seed {seed}: {:?}", r.best_position);
        }
    }

    #[test]
    fn optimize_history_and_determinism() {
        let p = GwoParams { wolves: 8, iterations: 1, seed: 3 };
        assert_eq!(optimize(&sphere01, 3, &p, Execution::Sequential).unwrap().history.len(), 1);
        let p = GwoParams { wolves: 12, iterations: 40, seed: 3 };
        let a = optimize(&sphere01, 3, &p, Execution::Sequential).unwrap();
        let b = optimize(&sphere01, 3, &p, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(a.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn mask_threshold_and_guard() {
        let m = FeatureMask::from_position(&[0.9, 0.1, 0.7]);
        assert_eq!(m.selected, vec![0, 2]);
        assert_eq!(m.flags(), vec![true, false, true]);
        let g = FeatureMask::from_position(&[0.2, 0.2, 0.2]);
        assert_eq!(g.selected, vec![0]);
        let g = FeatureMask::from_position(&[0.1, 0.4, 0.2]);
        assert_eq!(g.selected, vec![1]);
    }

    #[test]
    fn mask_json_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mask.json");
        let m = FeatureMask::from_position(&[0.9, 0.1, 0.7, 0.6]);
        m.save(&p).unwrap();
        assert_eq!(FeatureMask::load(&p).unwrap(), m);
        fs::write(&p, r#"{"dim": 2, "selected": [5], "position": [0.1, 0.2]}"#).unwrap();
        assert!(FeatureMask::load(&p).is_err());
    }

    #[test]
    fn single_class_is_rejected() {
        let feats = vec![FeatureVector { bins: vec![0.5; 4], normalized: false }; 3];
        let r = select_features(&feats, &[0, 0, 0], &GwoParams::default(), Execution::Sequential);
        assert!(matches!(r, Err(Error::SingleClass(1))));
    }

    #[test]
    fn split_is_stratified() {
        let labels = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 2];
        let (fit, val) = stratified_split(&labels, 3, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(val.iter().filter(|&&i| labels[i] == 0).count(), 1);
        assert_eq!(val.iter().filter(|&&i| labels[i] == 1).count(), 1);
        assert!(fit.contains(&10));
        assert_eq!(fit.len() + val.len(), labels.len());
    }
}
