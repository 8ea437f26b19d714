//! The two channel models behind a common emit/advance interface.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;

use crate::channel::{
    CalibrationSetup, Census, ParticleCloud, ParticleEngine, ParticleState, Species, StatisticalChannel,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Absorption {
    pub time: f64,
    pub species: Species,
}

fn index(species: Species) -> usize {
    match species {
        Species::S => 0,
        Species::R => 1,
    }
}

/// Binomial thinning plus sampled delays; arrivals wait in a queue.
#[derive(Debug)]
pub struct StatisticalSim {
    channels: [StatisticalChannel; 2],
    /// Arrivals later than this are dropped at emission and counted as lost.
    cutoff: f64,
    // Positive f64 bit patterns sort like the numbers; `seq` breaks ties.
    queue: BinaryHeap<Reverse<(u64, u64, usize)>>,
    seq: u64,
    census: [Census; 2],
}

impl StatisticalSim {
    pub fn new(s: StatisticalChannel, r: StatisticalChannel, cutoff: f64) -> Self {
        Self {
            channels: [s, r],
            cutoff,
            queue: BinaryHeap::new(),
            seq: 0,
            census: [Census::default(); 2],
        }
    }
}

/// Particle engine driven on the protocol clock.
#[derive(Debug)]
pub struct ParticleSim {
    engine: ParticleEngine,
    cloud: ParticleCloud,
}

impl ParticleSim {
    pub fn new(engine: ParticleEngine) -> Self {
        Self {
            engine,
            cloud: ParticleCloud::new(),
        }
    }
}

#[derive(Debug)]
pub enum ChannelSim {
    Statistical(StatisticalSim),
    Particle(ParticleSim),
}

impl ChannelSim {
    /// Release `count` molecules of `species` from their source node at `t`.
    pub fn emit<R: Rng + ?Sized>(&mut self, t: f64, species: Species, count: u64, rng: &mut R) {
        match self {
            ChannelSim::Statistical(sim) => {
                let si = index(species);
                let delays = sim.channels[si].transmit(count, rng);
                let c = &mut sim.census[si];
                c.emitted += count;
                c.culled += count - delays.len() as u64;
                for d in delays {
                    let at = t + d;
                    if at > sim.cutoff {
                        c.culled += 1;
                        continue;
                    }
                    c.in_flight += 1;
                    sim.queue.push(Reverse((at.to_bits(), sim.seq, si)));
                    sim.seq += 1;
                }
            }
            ChannelSim::Particle(sim) => {
                let (source, _) = CalibrationSetup::route(species);
                for _ in 0..count {
                    let pos = sim.engine.scene().surface_point(source, rng);
                    sim.cloud.emit(ParticleState::new(pos, species, t));
                }
            }
        }
    }

    /// Absorptions up to and including `until`, in time order.
    pub fn advance<R: Rng + ?Sized>(&mut self, until: f64, rng: &mut R) -> Vec<Absorption> {
        match self {
            ChannelSim::Statistical(sim) => {
                let mut out = Vec::new();
                while let Some(&Reverse((bits, _, si))) = sim.queue.peek() {
                    let time = f64::from_bits(bits);
                    if time > until {
                        break;
                    }
                    sim.queue.pop();
                    sim.census[si].in_flight -= 1;
                    sim.census[si].absorbed += 1;
                    let species = if si == 0 { Species::S } else { Species::R };
                    out.push(Absorption { time, species });
                }
                out
            }
            ChannelSim::Particle(sim) => sim
                .cloud
                .advance(&mut sim.engine, until, rng)
                .into_iter()
                .map(|ev| Absorption {
                    time: ev.time,
                    species: ev.species,
                })
                .collect(),
        }
    }

    pub fn census(&self, species: Species) -> Census {
        match self {
            ChannelSim::Statistical(sim) => sim.census[index(species)],
            ChannelSim::Particle(sim) => sim.cloud.census(species),
        }
    }
}
