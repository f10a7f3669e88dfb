//! NSGA-II over per-layer multiplier indices and skip levels, seeded from a
//! conductance-guided configuration.
//!
//! Objectives are (maximize accuracy, minimize energy). Genomes are deduped
//! before every selection, offspring draw from a per-offspring RNG stream
//! derived from `(seed, generation, index)`, and evaluations are cached by
//! genome, so results do not depend on thread scheduling.

mod search;

pub use search::{genome_from_config, random_search, run_nas, write_front_csv, FrontPoint, GenerationRecord, GenomeEvaluator, NasResult, RandomSearchResult};

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Skip levels are multiples of this step.
pub const SKIP_STEP: f64 = 0.05;
/// Levels 0..=15, i.e. 0 % to 75 %.
pub const SKIP_LEVELS: u8 = 16;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Genome {
    /// Ladder index per parameterized layer.
    pub multipliers: Vec<usize>,
    /// Skip level per parameterized layer; the fraction is `level · 5 %`.
    pub skip_levels: Vec<u8>,
}

impl Genome {
    pub fn skip_fractions(&self) -> Vec<f64> {
        self.skip_levels.iter().map(|&l| f64::from(l) * SKIP_STEP).collect()
    }

    /// Nearest genome for a set of multiplier indices and skip fractions.
    pub fn from_parts(multipliers: Vec<usize>, fractions: &[f64]) -> Genome {
        let skip_levels = fractions
            .iter()
            .map(|f| ((f / SKIP_STEP).round() as i64).clamp(0, i64::from(SKIP_LEVELS) - 1) as u8)
            .collect();
        Genome { multipliers, skip_levels }
    }
}

impl fmt::Display for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m: Vec<String> = self.multipliers.iter().map(|v| v.to_string()).collect();
        let s: Vec<String> = self.skip_levels.iter().map(|v| (u32::from(*v) * 5).to_string()).collect();
        write!(f, "m[{}] p[{}]", m.join(","), s.join(","))
    }
}

/// Values each gene may take.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenomeDomain {
    pub ladder_len: usize,
    /// Number of allowed skip levels per layer (1 pins the layer to 0 %).
    pub skip_levels: Vec<u8>,
}

impl GenomeDomain {
    pub fn new(layers: usize, ladder_len: usize, protect_output_layer: bool) -> Self {
        let mut skip_levels = vec![SKIP_LEVELS; layers];
        if protect_output_layer {
            if let Some(l) = skip_levels.last_mut() {
                *l = 1;
            }
        }
        GenomeDomain { ladder_len, skip_levels }
    }

    pub fn layers(&self) -> usize {
        self.skip_levels.len()
    }

    pub fn contains(&self, g: &Genome) -> bool {
        g.multipliers.len() == self.layers()
            && g.skip_levels.len() == self.layers()
            && g.multipliers.iter().all(|&m| m < self.ladder_len)
            && g.skip_levels.iter().zip(&self.skip_levels).all(|(l, max)| l < max)
    }

    pub fn clamp(&self, mut g: Genome) -> Genome {
        for m in &mut g.multipliers {
            *m = (*m).min(self.ladder_len - 1);
        }
        for (l, max) in g.skip_levels.iter_mut().zip(&self.skip_levels) {
            *l = (*l).min(max - 1);
        }
        g
    }

    pub fn random(&self, rng: &mut impl Rng) -> Genome {
        Genome {
            multipliers: (0..self.layers()).map(|_| rng.random_range(0..self.ladder_len)).collect(),
            skip_levels: self.skip_levels.iter().map(|&max| rng.random_range(0..max)).collect(),
        }
    }

    /// Resamples each gene with probability `p`.
    pub fn mutate(&self, g: &mut Genome, p: f64, rng: &mut impl Rng) {
        for m in &mut g.multipliers {
            if rng.random_bool(p) {
                *m = rng.random_range(0..self.ladder_len);
            }
        }
        for (l, &max) in g.skip_levels.iter_mut().zip(&self.skip_levels) {
            if rng.random_bool(p) {
                *l = rng.random_range(0..max);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objectives {
    pub quality: f64,
    pub energy_j: f64,
}

/// `a` is at least as accurate and at most as costly, and strictly better in one.
pub fn dominates(a: &Objectives, b: &Objectives) -> bool {
    a.quality >= b.quality && a.energy_j <= b.energy_j && (a.quality > b.quality || a.energy_j < b.energy_j)
}

/// Fast non-dominated sort; each front lists indices in ascending order.
pub fn nondominated_sort(points: &[Objectives]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by = vec![0usize; n];
    let mut dominating: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates(&points[i], &points[j]) {
                dominating[i].push(j);
                dominated_by[j] += 1;
            } else if dominates(&points[j], &points[i]) {
                dominating[j].push(i);
                dominated_by[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominating[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of `front` (same order). Boundary points
/// per objective are infinite; a zero objective range contributes nothing.
pub fn crowding_distance(points: &[Objectives], front: &[usize]) -> Vec<f64> {
    let n = front.len();
    let mut dist = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let objectives: [fn(&Objectives) -> f64; 2] = [|o| o.quality, |o| o.energy_j];
    for value in objectives {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| value(&points[front[a]]).total_cmp(&value(&points[front[b]])).then(a.cmp(&b)));
        let lo = value(&points[front[order[0]]]);
        let hi = value(&points[front[order[n - 1]]]);
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range > 0.0 {
            for k in 1..n - 1 {
                let gap = value(&points[front[order[k + 1]]]) - value(&points[front[order[k - 1]]]);
                dist[order[k]] += gap / range;
            }
        }
    }
    dist
}

/// Area dominated by `front` up to the reference point (worst quality, worst energy).
pub fn hypervolume(front: &[Objectives], reference: Objectives) -> f64 {
    let mut pts: Vec<Objectives> = front
        .iter()
        .copied()
        .filter(|p| p.quality > reference.quality && p.energy_j < reference.energy_j)
        .collect();
    pts.sort_by(|a, b| a.energy_j.total_cmp(&b.energy_j));
    let mut area = 0.0;
    let mut best_q = reference.quality;
    for (i, p) in pts.iter().enumerate() {
        best_q = best_q.max(p.quality);
        let next_e = pts.get(i + 1).map_or(reference.energy_j, |n| n.energy_j);
        area += (next_e - p.energy_j) * (best_q - reference.quality);
    }
    area
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub genome: Genome,
    pub objectives: Objectives,
    pub rank: usize,
    #[serde(with = "inf_as_string")]
    pub crowding: f64,
}

/// JSON has no infinity; boundary crowding distances are written as `"inf"`.
mod inf_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad crowding distance `{t}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NasConfig {
    pub initial_population: usize,
    pub survivors: usize,
    pub offspring: usize,
    pub generations: usize,
    pub crossover_p: f64,
    pub mutation_p: f64,
    /// Gene resampling probability when perturbing the seed genome.
    pub perturbation_p: f64,
    pub seed: u64,
    /// Evaluation images per candidate; `None` uses the whole evaluation set.
    pub eval_subset: Option<usize>,
    pub protect_output_layer: bool,
    pub use_weight_map: bool,
}

impl Default for NasConfig {
    fn default() -> Self {
        NasConfig {
            initial_population: 36,
            survivors: 50,
            offspring: 50,
            generations: 10,
            crossover_p: 0.9,
            mutation_p: 0.10,
            perturbation_p: 0.3,
            seed: 0,
            eval_subset: Some(2000),
            protect_output_layer: true,
            use_weight_map: true,
        }
    }
}

impl NasConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, p) in [
            ("crossover_p", self.crossover_p),
            ("mutation_p", self.mutation_p),
            ("perturbation_p", self.perturbation_p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(field, format!("{p} outside [0, 1]")));
            }
        }
        if self.initial_population == 0 || self.survivors == 0 {
            return Err(Error::config("survivors", "population sizes must be positive"));
        }
        if self.eval_subset == Some(0) {
            return Err(Error::config("eval_subset", "must be positive"));
        }
        Ok(())
    }
}

/// Evaluation callback: objectives for a batch of distinct genomes.
pub type BatchEval<'a> = dyn Fn(&[Genome]) -> Result<Vec<Objectives>> + Sync + 'a;

/// `(rank, crowding)` ordering: lower rank first, then larger crowding.
fn better(a: &Member, b: &Member) -> bool {
    match a.rank.cmp(&b.rank) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => a.crowding > b.crowding,
    }
}

fn offspring_rng(seed: u64, generation: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((generation as u64 + 1) << 32) | index as u64);
    rng
}

/// Ranks and crowding for a pool, then keeps the best `count` by `(rank, crowding)`.
pub fn select_survivors(pool: Vec<(Genome, Objectives)>, count: usize) -> Vec<Member> {
    let mut seen = HashSet::new();
    let pool: Vec<(Genome, Objectives)> = pool.into_iter().filter(|(g, _)| seen.insert(g.clone())).collect();
    let points: Vec<Objectives> = pool.iter().map(|(_, o)| *o).collect();
    let fronts = nondominated_sort(&points);
    let mut out = Vec::with_capacity(count.min(pool.len()));
    for (rank, front) in fronts.iter().enumerate() {
        if out.len() >= count {
            break;
        }
        let crowd = crowding_distance(&points, front);
        let mut members: Vec<(usize, f64)> = front.iter().copied().zip(crowd).collect();
        if out.len() + members.len() > count {
            members.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            members.truncate(count - out.len());
            members.sort_by_key(|m| m.0);
        }
        for (i, c) in members {
            out.push(Member {
                genome: pool[i].0.clone(),
                objectives: pool[i].1,
                rank,
                crowding: c,
            });
        }
    }
    out
}

/// One NSGA-II generation: tournament, uniform crossover, mutation, then
/// survivor selection over parents and offspring.
pub fn evolve_generation(population: &[Member], generation: usize, cfg: &NasConfig, domain: &GenomeDomain, eval: &BatchEval) -> Result<Vec<Member>> {
    if population.is_empty() {
        return Err(Error::config("population", "cannot evolve an empty population"));
    }
    let pick = |rng: &mut ChaCha8Rng| -> &Member {
        let a = &population[rng.random_range(0..population.len())];
        let b = &population[rng.random_range(0..population.len())];
        if better(b, a) {
            b
        } else {
            a
        }
    };
    let children: Vec<Genome> = (0..cfg.offspring)
        .map(|i| {
            let mut rng = offspring_rng(cfg.seed, generation, i);
            let (pa, pb) = (pick(&mut rng), pick(&mut rng));
            let mut child = pa.genome.clone();
            if rng.random_bool(cfg.crossover_p) {
                for (c, o) in child.multipliers.iter_mut().zip(&pb.genome.multipliers) {
                    if rng.random_bool(0.5) {
                        *c = *o;
                    }
                }
                for (c, o) in child.skip_levels.iter_mut().zip(&pb.genome.skip_levels) {
                    if rng.random_bool(0.5) {
                        *c = *o;
                    }
                }
            }
            domain.mutate(&mut child, cfg.mutation_p, &mut rng);
            child
        })
        .collect();
    let objectives = eval(&children)?;
    let pool = population
        .iter()
        .map(|m| (m.genome.clone(), m.objectives))
        .chain(children.into_iter().zip(objectives))
        .collect();
    Ok(select_survivors(pool, cfg.survivors))
}

/// The seed genome followed by distinct perturbations of it.
pub fn initial_genomes(seed_genome: &Genome, cfg: &NasConfig, domain: &GenomeDomain) -> Vec<Genome> {
    let seed_genome = domain.clamp(seed_genome.clone());
    let mut out = vec![seed_genome.clone()];
    let mut seen: HashSet<Genome> = out.iter().cloned().collect();
    let mut rng = offspring_rng(cfg.seed, usize::MAX >> 32, 0);
    let mut tries = 0;
    while out.len() < cfg.initial_population && tries < 100 * cfg.initial_population {
        tries += 1;
        let mut g = seed_genome.clone();
        domain.mutate(&mut g, cfg.perturbation_p, &mut rng);
        if seen.insert(g.clone()) {
            out.push(g);
        }
    }
    out
}
