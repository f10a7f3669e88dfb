use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evolve_generation, hypervolume, initial_genomes, select_survivors, Genome, GenomeDomain, Member, NasConfig, Objectives};
use crate::axexec::{least_important, ApproxModel, AxDNNConfig, LayerApprox, QuantizedNetwork};
use crate::axmul::MultiplierLibrary;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Network;
use crate::podmodel::{energy_total, AcceleratorParams};

/// Scores genomes on a fixed evaluation set with a cache keyed by genome.
pub struct GenomeEvaluator<'a> {
    pub net: &'a Network,
    pub qnet: &'a QuantizedNetwork,
    /// Skip ranking key per layer and neuron.
    pub neuron_scores: &'a [Vec<f64>],
    pub library: &'a MultiplierLibrary,
    pub params: &'a AcceleratorParams,
    pub data: &'a Dataset,
    pub use_weight_map: bool,
    cache: Mutex<BTreeMap<Genome, Objectives>>,
    evaluations: AtomicUsize,
}

impl<'a> GenomeEvaluator<'a> {
    pub fn new(
        net: &'a Network,
        qnet: &'a QuantizedNetwork,
        neuron_scores: &'a [Vec<f64>],
        library: &'a MultiplierLibrary,
        params: &'a AcceleratorParams,
        data: &'a Dataset,
        use_weight_map: bool,
    ) -> Self {
        GenomeEvaluator {
            net,
            qnet,
            neuron_scores,
            library,
            params,
            data,
            use_weight_map,
            cache: Mutex::new(BTreeMap::new()),
            evaluations: AtomicUsize::new(0),
        }
    }

    /// Distinct genomes evaluated so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::SeqCst)
    }

    pub fn config_for(&self, g: &Genome) -> Result<AxDNNConfig> {
        let fractions = g.skip_fractions();
        let layers = g
            .multipliers
            .iter()
            .zip(&fractions)
            .zip(self.neuron_scores)
            .map(|((&m, &f), scores)| {
                if m >= self.library.len() {
                    return Err(Error::config("multipliers", format!("index {m} outside a ladder of {}", self.library.len())));
                }
                Ok(LayerApprox {
                    multiplier: self.library.at(m).lut.name().to_string(),
                    skip_fraction: f,
                    skip_indices: least_important(scores, f)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(AxDNNConfig {
            layers,
            use_weight_map: self.use_weight_map,
        })
    }

    pub fn evaluate_on(&self, g: &Genome, data: &Dataset) -> Result<Objectives> {
        let run = || -> Result<Objectives> {
            let cfg = self.config_for(g)?;
            let quality = ApproxModel::new(self.qnet, &cfg, self.library)?.accuracy(data)?;
            let energy_j = energy_total(self.net, &cfg, self.library, self.params)?.e_total_j;
            Ok(Objectives { quality, energy_j })
        };
        run().map_err(|e| Error::Evaluation {
            genome: g.to_string(),
            source: Box::new(e),
        })
    }

    /// Objectives for `genomes` (in order); only uncached distinct genomes run.
    pub fn evaluate_batch(&self, genomes: &[Genome]) -> Result<Vec<Objectives>> {
        let fresh: Vec<Genome> = {
            let cache = self.cache.lock().expect("cache lock");
            let mut seen = HashSet::new();
            genomes
                .iter()
                .filter(|g| !cache.contains_key(*g) && seen.insert((*g).clone()))
                .cloned()
                .collect()
        };
        let results = fresh
            .par_iter()
            .map(|g| self.evaluate_on(g, self.data))
            .collect::<Result<Vec<_>>>()?;
        self.evaluations.fetch_add(fresh.len(), Ordering::SeqCst);
        let mut cache = self.cache.lock().expect("cache lock");
        cache.extend(fresh.into_iter().zip(results));
        Ok(genomes.iter().map(|g| cache[g]).collect())
    }
}

/// Genome nearest to a generated configuration (skip fractions snap to 5 % levels).
pub fn genome_from_config(config: &AxDNNConfig, library: &MultiplierLibrary) -> Result<Genome> {
    let multipliers = config.layers.iter().map(|l| library.index_of(&l.multiplier)).collect::<Result<_>>()?;
    Ok(Genome::from_parts(multipliers, &config.skip_fractions()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub g: usize,
    pub members: Vec<Member>,
    /// Front-0 hypervolume against the run's final reference point.
    pub hypervolume: f64,
    /// Cumulative distinct evaluations.
    pub evaluations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontPoint {
    pub genome: Genome,
    pub config: AxDNNConfig,
    /// On the search subset.
    pub objectives: Objectives,
    /// On the full evaluation split, when given.
    pub full_quality: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NasResult {
    pub seed_genome: Genome,
    pub generations: Vec<GenerationRecord>,
    pub final_front: Vec<FrontPoint>,
    pub evaluations: usize,
    /// Worst observed (quality, energy).
    pub reference: Objectives,
}

impl NasResult {
    pub fn front_objectives(&self) -> Vec<Objectives> {
        self.final_front.iter().map(|p| p.objectives).collect()
    }
}

pub fn run_nas(
    evaluator: &GenomeEvaluator,
    seed_genome: &Genome,
    cfg: &NasConfig,
    domain: &GenomeDomain,
    full_eval: Option<&Dataset>,
) -> Result<NasResult> {
    cfg.validate()?;
    if !domain.contains(&domain.clamp(seed_genome.clone())) {
        return Err(Error::config("seed_genome", "does not fit the genome domain"));
    }
    let eval = |gs: &[Genome]| evaluator.evaluate_batch(gs);
    let init = initial_genomes(seed_genome, cfg, domain);
    let objectives = evaluator.evaluate_batch(&init)?;
    let mut population = select_survivors(init.into_iter().zip(objectives).collect(), cfg.survivors);
    let mut history = vec![(population.clone(), evaluator.evaluations())];
    for g in 1..=cfg.generations {
        population = evolve_generation(&population, g, cfg, domain, &eval)?;
        info!("generation {g}: {} survivors, {} evaluations", population.len(), evaluator.evaluations());
        history.push((population.clone(), evaluator.evaluations()));
    }

    let all = history.iter().flat_map(|(p, _)| p.iter().map(|m| m.objectives));
    let reference = all.fold(
        Objectives {
            quality: f64::INFINITY,
            energy_j: f64::NEG_INFINITY,
        },
        |r, o| Objectives {
            quality: r.quality.min(o.quality),
            energy_j: r.energy_j.max(o.energy_j),
        },
    );
    let generations = history
        .into_iter()
        .enumerate()
        .map(|(g, (members, evaluations))| {
            let front: Vec<Objectives> = members.iter().filter(|m| m.rank == 0).map(|m| m.objectives).collect();
            GenerationRecord {
                g,
                hypervolume: hypervolume(&front, reference),
                members,
                evaluations,
            }
        })
        .collect();
    let final_front = population
        .iter()
        .filter(|m| m.rank == 0)
        .map(|m| {
            Ok(FrontPoint {
                genome: m.genome.clone(),
                config: evaluator.config_for(&m.genome)?,
                objectives: m.objectives,
                full_quality: full_eval.map(|d| evaluator.evaluate_on(&m.genome, d).map(|o| o.quality)).transpose()?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(NasResult {
        seed_genome: domain.clamp(seed_genome.clone()),
        generations,
        final_front,
        evaluations: evaluator.evaluations(),
        reference,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomSearchResult {
    pub candidates: Vec<(Genome, Objectives)>,
    /// Lowest-energy candidate within the quality bound, else the most accurate one.
    pub best: usize,
}

/// Uniform random genomes, `budget` distinct evaluations.
pub fn random_search(evaluator: &GenomeEvaluator, domain: &GenomeDomain, budget: usize, seed: u64, min_quality: f64) -> Result<RandomSearchResult> {
    if budget == 0 {
        return Err(Error::config("budget", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut seen = HashSet::new();
    let mut genomes = Vec::with_capacity(budget);
    let mut tries = 0;
    while genomes.len() < budget && tries < 1000 * budget {
        tries += 1;
        let g = domain.random(&mut rng);
        if seen.insert(g.clone()) {
            genomes.push(g);
        }
    }
    let objectives = evaluator.evaluate_batch(&genomes)?;
    let candidates: Vec<(Genome, Objectives)> = genomes.into_iter().zip(objectives).collect();
    let feasible = candidates
        .iter()
        .enumerate()
        .filter(|(_, (_, o))| o.quality >= min_quality)
        .min_by(|a, b| a.1 .1.energy_j.total_cmp(&b.1 .1.energy_j).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i);
    let best = feasible.unwrap_or_else(|| {
        candidates
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.quality.total_cmp(&b.1 .1.quality).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .expect("budget > 0")
    });
    Ok(RandomSearchResult { candidates, best })
}

/// `accuracy,energy_joules,genome` rows.
pub fn write_front_csv(points: &[(Genome, Objectives)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["accuracy", "energy_joules", "genome"])?;
    for (g, o) in points {
        w.write_record([o.quality.to_string(), o.energy_j.to_string(), g.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::report::write_atomic(path, &bytes)
}
