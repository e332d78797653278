//! Population search over the circle of headings. One entry point dispatches
//! to the four canonical update rules; every method tracks a best-ever
//! candidate so the per-iteration best fitness never increases.

use crate::baselines::{Candidate, MetaConfig, MetaMethod};
use crate::geo::{angular_distance, wrap_angle};
use crate::rng::Rng;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub struct SearchResult {
    pub best: Candidate,
    /// Best fitness seen up to each iteration (index 0 = after init).
    pub history: Vec<f64>,
}

fn init_population(
    fitness: &dyn Fn(f64) -> f64,
    cfg: &MetaConfig,
    rng: &mut Rng,
    init: Option<&[f64]>,
) -> Vec<Candidate> {
    let mut pop = Vec::with_capacity(cfg.population);
    if let Some(seeded) = init {
        for &h in seeded.iter().take(cfg.population) {
            let h = wrap_angle(h);
            pop.push(Candidate {
                heading: h,
                fitness: fitness(h),
            });
        }
    }
    while pop.len() < cfg.population {
        let h = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        pop.push(Candidate {
            heading: h,
            fitness: fitness(h),
        });
    }
    pop
}

fn best_of(pop: &[Candidate]) -> Candidate {
    *pop.iter()
        .min_by(|a, b| a.fitness.total_cmp(&b.fitness))
        .expect("population is never empty")
}

/// Minimize `fitness` over headings with the configured method. `init`
/// seeds the first candidates (useful for warm starts and elitism tests).
pub fn search_heading(
    fitness: &dyn Fn(f64) -> f64,
    cfg: &MetaConfig,
    rng: &mut Rng,
    init: Option<&[f64]>,
) -> SearchResult {
    let mut pop = init_population(fitness, cfg, rng, init);
    let mut best = best_of(&pop);
    let mut history = vec![best.fitness];
    if cfg.population < 2 {
        // Degenerate population: nothing to recombine, report the lone probe.
        for _ in 0..cfg.iterations_per_step {
            history.push(best.fitness);
        }
        return SearchResult { best, history };
    }
    match cfg.method {
        MetaMethod::Pso => pso(fitness, cfg, rng, &mut pop, &mut best, &mut history),
        MetaMethod::De => de(fitness, cfg, rng, &mut pop, &mut best, &mut history),
        MetaMethod::Ga => ga(fitness, cfg, rng, &mut pop, &mut best, &mut history),
        MetaMethod::Afsa => afsa(fitness, cfg, rng, &mut pop, &mut best, &mut history),
    }
    SearchResult { best, history }
}

fn track(best: &mut Candidate, c: Candidate) {
    if c.fitness < best.fitness {
        *best = c;
    }
}

/// Global-best particle swarm with inertia.
fn pso(
    fitness: &dyn Fn(f64) -> f64,
    cfg: &MetaConfig,
    rng: &mut Rng,
    pop: &mut [Candidate],
    best: &mut Candidate,
    history: &mut Vec<f64>,
) {
    let k = cfg.pso;
    let mut velocity = vec![0.0f64; pop.len()];
    let mut personal = pop.to_vec();
    for _ in 0..cfg.iterations_per_step {
        for i in 0..pop.len() {
            let r1: f64 = rng.gen();
            let r2: f64 = rng.gen();
            let toward_personal = wrap_angle(personal[i].heading - pop[i].heading);
            let toward_best = wrap_angle(best.heading - pop[i].heading);
            velocity[i] = (k.inertia * velocity[i]
                + k.cognitive * r1 * toward_personal
                + k.social * r2 * toward_best)
                .clamp(-std::f64::consts::PI, std::f64::consts::PI);
            let h = wrap_angle(pop[i].heading + velocity[i]);
            let c = Candidate {
                heading: h,
                fitness: fitness(h),
            };
            pop[i] = c;
            if c.fitness < personal[i].fitness {
                personal[i] = c;
            }
            track(best, c);
        }
        history.push(best.fitness);
    }
}

/// rand/1/bin differential evolution with greedy selection. With a single
/// dimension the forced-crossover coordinate always takes the mutant.
fn de(
    fitness: &dyn Fn(f64) -> f64,
    cfg: &MetaConfig,
    rng: &mut Rng,
    pop: &mut [Candidate],
    best: &mut Candidate,
    history: &mut Vec<f64>,
) {
    let k = cfg.de;
    let n = pop.len();
    for _ in 0..cfg.iterations_per_step {
        for i in 0..n {
            let mut pick = || loop {
                let j = rng.gen_range(0..n);
                if j != i {
                    return j;
                }
            };
            let (a, b, c) = (pick(), pick(), pick());
            let diff = wrap_angle(pop[b].heading - pop[c].heading);
            let mutant = wrap_angle(pop[a].heading + k.differential_weight * diff);
            // Keep the stream shape of a binomial crossover draw even though
            // the single coordinate is always forced.
            let _cross: f64 = rng.gen();
            let trial = Candidate {
                heading: mutant,
                fitness: fitness(mutant),
            };
            if trial.fitness <= pop[i].fitness {
                pop[i] = trial;
                track(best, trial);
            }
        }
        history.push(best.fitness);
    }
}

/// Tournament selection, blend crossover, Gaussian mutation, one elite.
fn ga(
    fitness: &dyn Fn(f64) -> f64,
    cfg: &MetaConfig,
    rng: &mut Rng,
    pop: &mut Vec<Candidate>,
    best: &mut Candidate,
    history: &mut Vec<f64>,
) {
    let k = cfg.ga;
    let n = pop.len();
    for _ in 0..cfg.iterations_per_step {
        let mut next = Vec::with_capacity(n);
        next.push(*best); // elite carries over unevaluated
        while next.len() < n {
            let tournament = |rng: &mut Rng| {
                let mut w = pop[rng.gen_range(0..n)];
                for _ in 1..k.tournament.max(1) {
                    let c = pop[rng.gen_range(0..n)];
                    if c.fitness < w.fitness {
                        w = c;
                    }
                }
                w
            };
            let p1 = tournament(rng);
            let p2 = tournament(rng);
            let mut h = if rng.gen::<f64>() < k.crossover_rate {
                // Blend along the short arc between the parents.
                let u: f64 = rng.gen_range(-0.1..1.1);
                wrap_angle(p1.heading + u * wrap_angle(p2.heading - p1.heading))
            } else {
                p1.heading
            };
            if rng.gen::<f64>() < k.mutation_rate {
                let g: f64 = StandardNormal.sample(rng);
                h = wrap_angle(h + g * k.mutation_std);
            }
            let c = Candidate {
                heading: h,
                fitness: fitness(h),
            };
            track(best, c);
            next.push(c);
        }
        *pop = next;
        history.push(best.fitness);
    }
}

/// Artificial fish swarm: follow the best visible neighbor or the visible
/// swarm center when not crowded, otherwise prey on random probes. The
/// bulletin (best-ever) plays the role of the elite.
fn afsa(
    fitness: &dyn Fn(f64) -> f64,
    cfg: &MetaConfig,
    rng: &mut Rng,
    pop: &mut [Candidate],
    best: &mut Candidate,
    history: &mut Vec<f64>,
) {
    let k = cfg.afsa;
    let n = pop.len();
    let move_toward = |from: f64, to: f64, rng: &mut Rng| {
        let gap = wrap_angle(to - from);
        wrap_angle(from + rng.gen::<f64>() * k.step * gap.signum())
    };
    for _ in 0..cfg.iterations_per_step {
        for i in 0..n {
            let me = pop[i];
            // Visible neighbors.
            let mut n_vis = 0usize;
            let (mut sum_sin, mut sum_cos) = (0.0, 0.0);
            let mut best_neighbor: Option<Candidate> = None;
            for (j, other) in pop.iter().enumerate() {
                if j == i {
                    continue;
                }
                if angular_distance(other.heading, me.heading) <= k.visual {
                    n_vis += 1;
                    sum_sin += other.heading.sin();
                    sum_cos += other.heading.cos();
                    if best_neighbor.map_or(true, |b| other.fitness < b.fitness) {
                        best_neighbor = Some(*other);
                    }
                }
            }
            let crowded = n_vis as f64 / n as f64 >= k.crowding;
            let mut moved = false;
            // Follow: chase the best visible neighbor when it helps.
            if let Some(nb) = best_neighbor {
                if !crowded && nb.fitness < me.fitness {
                    let h = move_toward(me.heading, nb.heading, rng);
                    let c = Candidate {
                        heading: h,
                        fitness: fitness(h),
                    };
                    if c.fitness < me.fitness {
                        pop[i] = c;
                        track(best, c);
                        moved = true;
                    }
                }
            }
            // Swarm: drift toward the visible center when it helps.
            if !moved && n_vis > 0 && !crowded {
                let center = sum_sin.atan2(sum_cos);
                let fc = fitness(center);
                if fc < me.fitness {
                    let h = move_toward(me.heading, center, rng);
                    let c = Candidate {
                        heading: h,
                        fitness: fitness(h),
                    };
                    if c.fitness < me.fitness {
                        pop[i] = c;
                        track(best, c);
                        moved = true;
                    }
                }
            }
            // Prey: bounded random probes inside the visual range.
            if !moved {
                let mut success = false;
                for _ in 0..k.try_number {
                    let probe = wrap_angle(me.heading + rng.gen_range(-1.0..1.0) * k.visual);
                    if fitness(probe) < me.fitness {
                        let h = move_toward(me.heading, probe, rng);
                        let c = Candidate {
                            heading: h,
                            fitness: fitness(h),
                        };
                        pop[i] = c;
                        track(best, c);
                        success = true;
                        break;
                    }
                }
                if !success && k.step > 0.0 {
                    let h = wrap_angle(me.heading + rng.gen_range(-1.0..1.0) * k.step);
                    let c = Candidate {
                        heading: h,
                        fitness: fitness(h),
                    };
                    pop[i] = c;
                    track(best, c);
                }
            }
        }
        history.push(best.fitness);
    }
}
