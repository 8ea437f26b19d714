//! Monte Carlo Brownian particle engine.
//!
//! Every free particle carries its own clock. Close to a node surface it moves
//! by Gaussian displacements with per-axis variance `2 D dt`; a step that ends
//! inside a node is either a capture (absorbing node, probability `p_capture`
//! scaled by receptor availability) or a radial reflection. Away from all
//! surfaces the accelerated scheme replaces many small steps by one exact jump
//! to the boundary of the largest empty sphere around the particle, with the
//! exit time drawn from the first-passage law of 3D Brownian motion.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};
use serde::{Deserialize, Serialize};

use super::physics::{diffusion_coefficient, MediumParams, NodeGeometry, Species, SpeciesSpec};
use crate::error::{invalid, Result};

pub type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn species_index(s: Species) -> usize {
    match s {
        Species::S => 0,
        Species::R => 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParticleStatus {
    Free,
    /// Frozen on a node surface.
    Absorbed,
    /// Left the simulated region.
    Culled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleState {
    pub position: Vec3,
    pub species: Species,
    pub emitted_at: f64,
    /// Time at which `position` holds. Runs ahead of the caller's clock after
    /// a long first-passage jump.
    pub clock: f64,
    pub status: ParticleStatus,
}

impl ParticleState {
    pub fn new(position: Vec3, species: Species, emitted_at: f64) -> Self {
        Self {
            position,
            species,
            emitted_at,
            clock: emitted_at,
            status: ParticleStatus::Free,
        }
    }

    pub fn is_free(&self) -> bool {
        self.status == ParticleStatus::Free
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbsorptionEvent {
    pub time: f64,
    pub body: usize,
    pub species: Species,
    pub emitted_at: f64,
}

/// How free particles are advanced away from surfaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepScheme {
    /// Base-timestep Gaussian steps everywhere. Slow; used as a reference.
    Fixed,
    /// Exact first-passage jumps wherever the nearest surface is more than a
    /// few step lengths away.
    Accelerated,
}

/// A spherical node placed in the scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Body {
    pub center: Vec3,
    pub geometry: NodeGeometry,
    /// Species this node captures; every other species bounces off.
    pub absorbs: Option<Species>,
    /// Capture probability per surface crossing with all receptors free.
    pub p_capture: f64,
}

impl Body {
    fn radius(&self) -> f64 {
        self.geometry.node_radius
    }
}

/// Receptors that become unavailable for `trafficking_time` after capturing.
///
/// Releases are tracked per capture; occupancy is exact when callers process
/// captures in time order and approximate to within one engine tick otherwise.
#[derive(Debug, Clone, Default)]
struct ReceptorPool {
    count: u32,
    trafficking_time: f64,
    busy_until: BinaryHeap<Reverse<OrdF64>>,
}

#[derive(Debug, Clone, Copy)]
struct OrdF64(f64);

impl PartialEq for OrdF64 {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl ReceptorPool {
    fn new(geometry: &NodeGeometry) -> Self {
        Self {
            count: geometry.receptor_count,
            trafficking_time: geometry.trafficking_time,
            busy_until: BinaryHeap::new(),
        }
    }

    fn available_fraction(&mut self, t: f64) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        while let Some(Reverse(OrdF64(release))) = self.busy_until.peek() {
            if *release > t {
                break;
            }
            self.busy_until.pop();
        }
        let busy = self.busy_until.len() as f64;
        (f64::from(self.count) - busy).max(0.0) / f64::from(self.count)
    }

    fn occupy(&mut self, t: f64) {
        if self.trafficking_time > 0.0 {
            self.busy_until.push(Reverse(OrdF64(t + self.trafficking_time)));
        }
    }
}

/// Tabulated CDF of the exit time of standard Brownian motion (D = 1) from
/// the unit ball started at its center:
/// `P[tau > s] = 2 sum_{n>=1} (-1)^{n+1} exp(-n^2 pi^2 s)`.
struct ExitTimeTable {
    step: f64,
    cdf: Vec<f64>,
}

const EXIT_TABLE_MAX: f64 = 3.5;
const EXIT_TABLE_POINTS: usize = 35_001;

impl ExitTimeTable {
    fn build() -> Self {
        let step = EXIT_TABLE_MAX / (EXIT_TABLE_POINTS - 1) as f64;
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let mut cdf = Vec::with_capacity(EXIT_TABLE_POINTS);
        let mut prev = 0.0f64;
        for i in 0..EXIT_TABLE_POINTS {
            let s = i as f64 * step;
            let value = if s < 0.012 {
                // Below this the survival series cancels to rounding noise and
                // the true CDF is under 1e-9.
                0.0
            } else {
                let mut survival = 0.0;
                let mut n = 1.0f64;
                loop {
                    let term = (-n * n * pi2 * s).exp();
                    survival += if (n as u64) % 2 == 1 { term } else { -term };
                    if term < 1e-18 {
                        break;
                    }
                    n += 1.0;
                }
                (1.0 - 2.0 * survival).clamp(0.0, 1.0)
            };
            prev = prev.max(value);
            cdf.push(prev);
        }
        let last = cdf.len() - 1;
        cdf[last] = 1.0;
        Self { step, cdf }
    }

    fn get() -> &'static Self {
        static TABLE: OnceLock<ExitTimeTable> = OnceLock::new();
        TABLE.get_or_init(Self::build)
    }

    /// Inverse-CDF draw of the dimensionless exit time.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let i = self.cdf.partition_point(|&c| c < u).max(1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        (i as f64 - 1.0 + frac) * self.step
    }
}

/// Draw the time (for diffusion coefficient `diffusion`) needed to leave a
/// ball of radius `radius` starting from its center.
pub fn sample_exit_time<R: Rng + ?Sized>(radius: f64, diffusion: f64, rng: &mut R) -> f64 {
    radius * radius / diffusion * ExitTimeTable::get().sample(rng)
}

/// What happened to a particle that touched an absorbing surface.
enum Hit {
    Capture,
    Bounce,
}

/// Immutable scene geometry plus physics constants.
#[derive(Debug, Clone)]
pub struct Scene {
    pub bodies: Vec<Body>,
    pub cull_center: Vec3,
    pub cull_radius: f64,
    pub scheme: StepScheme,
    diffusion: [f64; 2],
    dt: f64,
    /// Surface distance above which first-passage jumps are used, per species.
    jump_threshold: [f64; 2],
}

/// Number of per-axis standard deviations of one base step that must separate
/// a particle from every surface before a first-passage jump is taken.
const JUMP_SIGMAS: f64 = 10.0;

impl Scene {
    pub fn new(
        medium: &MediumParams,
        species: [SpeciesSpec; 2],
        bodies: Vec<Body>,
        cull_center: Vec3,
        cull_radius: f64,
        scheme: StepScheme,
    ) -> Result<Self> {
        medium.validate()?;
        if !(cull_radius > 0.0) {
            return Err(invalid("cull_radius", "must be > 0"));
        }
        for b in &bodies {
            b.geometry.validate()?;
            if !(0.0..=1.0).contains(&b.p_capture) {
                return Err(invalid("p_capture", "must lie in [0, 1]"));
            }
        }
        let mut diffusion = [0.0; 2];
        for spec in species {
            diffusion[species_index(spec.label)] = diffusion_coefficient(medium, &spec)?;
        }
        if diffusion.contains(&0.0) {
            return Err(invalid("species", "both S and R must be specified"));
        }
        let jump_threshold = diffusion.map(|d| JUMP_SIGMAS * (2.0 * d * medium.timestep).sqrt());
        Ok(Self {
            bodies,
            cull_center,
            cull_radius,
            scheme,
            diffusion,
            dt: medium.timestep,
            jump_threshold,
        })
    }

    pub fn diffusion(&self, species: Species) -> f64 {
        self.diffusion[species_index(species)]
    }

    /// Uniform point just outside the surface of body `idx`.
    pub fn surface_point<R: Rng + ?Sized>(&self, idx: usize, rng: &mut R) -> Vec3 {
        let b = &self.bodies[idx];
        let dir: [f64; 3] = UnitSphere.sample(rng);
        let r = b.radius() * (1.0 + 1e-9);
        [
            b.center[0] + r * dir[0],
            b.center[1] + r * dir[1],
            b.center[2] + r * dir[2],
        ]
    }

    /// Distance to the nearest surface, counting the cull sphere as one.
    fn clearance(&self, pos: Vec3) -> f64 {
        let mut h = self.cull_radius - norm(sub(pos, self.cull_center));
        for b in &self.bodies {
            h = h.min(norm(sub(pos, b.center)) - b.radius());
        }
        h
    }

    /// Advance one particle until its clock reaches `until`, it is captured,
    /// or it leaves the cull sphere. `on_hit` decides capture for a crossing
    /// into an absorbing body at the given time.
    fn walk<R, F>(&self, p: &mut ParticleState, until: f64, rng: &mut R, mut on_hit: F) -> Option<usize>
    where
        R: Rng + ?Sized,
        F: FnMut(usize, f64, &mut R) -> Hit,
    {
        let si = species_index(p.species);
        let diffusion = self.diffusion[si];
        let threshold = self.jump_threshold[si];
        let table = ExitTimeTable::get();
        while p.is_free() && p.clock < until {
            let h = self.clearance(p.position);
            if self.scheme == StepScheme::Accelerated && h > threshold {
                let dir: [f64; 3] = UnitSphere.sample(rng);
                let tau = table.sample(rng);
                for (x, u) in p.position.iter_mut().zip(dir) {
                    *x += h * u;
                }
                p.clock += h * h / diffusion * tau;
                continue;
            }
            let dt = self.dt.min(until - p.clock);
            let sigma = (2.0 * diffusion * dt).sqrt();
            for x in p.position.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *x += sigma * z;
            }
            p.clock += dt;
            for (idx, b) in self.bodies.iter().enumerate() {
                let rel = sub(p.position, b.center);
                let dist = norm(rel);
                if dist >= b.radius() {
                    continue;
                }
                if b.absorbs == Some(p.species) {
                    if let Hit::Capture = on_hit(idx, p.clock, rng) {
                        p.status = ParticleStatus::Absorbed;
                        return Some(idx);
                    }
                }
                // Mirror through the surface along the radial direction.
                let scale = if dist > 0.0 {
                    (2.0 * b.radius() - dist) / dist
                } else {
                    0.0
                };
                for ((x, c), r) in p.position.iter_mut().zip(b.center).zip(rel) {
                    *x = c + r * scale;
                }
                if dist == 0.0 {
                    p.position = [b.center[0] + b.radius() * 1.000_001, b.center[1], b.center[2]];
                }
            }
            if norm(sub(p.position, self.cull_center)) >= self.cull_radius {
                p.status = ParticleStatus::Culled;
            }
        }
        if p.is_free() && norm(sub(p.position, self.cull_center)) >= self.cull_radius {
            p.status = ParticleStatus::Culled;
        }
        None
    }

    /// Follow a particle to `horizon` treating absorbers as reflecting and
    /// return the smallest capture uniform drawn over all its crossings into
    /// body `absorber` (1.0 if it never touched it).
    ///
    /// A capture probability `p` would have absorbed this particle exactly
    /// when the returned value is below `p`, so one pass over reflecting paths
    /// yields the whole absorption-versus-`p_capture` curve.
    pub fn min_capture_draw<R: Rng + ?Sized>(
        &self,
        p: &mut ParticleState,
        horizon: f64,
        absorber: usize,
        rng: &mut R,
    ) -> f64 {
        let mut lowest = 1.0f64;
        self.walk(p, horizon, rng, |idx, _t, rng| {
            if idx == absorber {
                let u: f64 = rng.random();
                lowest = lowest.min(u);
            }
            Hit::Bounce
        });
        lowest
    }
}

/// A scene together with the mutable receptor state of its nodes.
#[derive(Debug, Clone)]
pub struct ParticleEngine {
    scene: Scene,
    receptors: Vec<ReceptorPool>,
}

impl ParticleEngine {
    pub fn new(scene: Scene) -> Self {
        let receptors = scene.bodies.iter().map(|b| ReceptorPool::new(&b.geometry)).collect();
        Self { scene, receptors }
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    /// Advance a single particle to `until`; returns its absorption if any.
    pub fn advance<R: Rng + ?Sized>(
        &mut self,
        p: &mut ParticleState,
        until: f64,
        rng: &mut R,
    ) -> Option<AbsorptionEvent> {
        let receptors = &mut self.receptors;
        let bodies = &self.scene.bodies;
        let body = self.scene.walk(p, until, rng, |idx, t, rng| {
            let pool = &mut receptors[idx];
            let p_eff = bodies[idx].p_capture * pool.available_fraction(t);
            if p_eff > 0.0 && rng.random::<f64>() < p_eff {
                pool.occupy(t);
                Hit::Capture
            } else {
                Hit::Bounce
            }
        })?;
        Some(AbsorptionEvent {
            time: p.clock,
            body,
            species: p.species,
            emitted_at: p.emitted_at,
        })
    }

    /// Advance every free particle to `until` and collect absorptions in
    /// time order.
    pub fn step_particles<R: Rng + ?Sized>(
        &mut self,
        particles: &mut [ParticleState],
        until: f64,
        rng: &mut R,
    ) -> Vec<AbsorptionEvent> {
        let mut events: Vec<AbsorptionEvent> = particles
            .iter_mut()
            .filter_map(|p| self.advance(p, until, rng))
            .collect();
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        events
    }
}

/// Free particles kept in a min-heap on their own clocks so that each engine
/// tick only touches particles that are actually behind the tick.
#[derive(Debug, Default)]
pub struct ParticleCloud {
    particles: Vec<ParticleState>,
    vacant: Vec<usize>,
    queue: BinaryHeap<Reverse<(OrdF64, usize)>>,
    absorbed: [u64; 2],
    culled: [u64; 2],
    emitted: [u64; 2],
}

/// Per-species particle bookkeeping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub emitted: u64,
    pub absorbed: u64,
    pub culled: u64,
    pub in_flight: u64,
}

impl ParticleCloud {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn emit(&mut self, p: ParticleState) {
        let si = species_index(p.species);
        self.emitted[si] += 1;
        let clock = p.clock;
        let idx = match self.vacant.pop() {
            Some(i) => {
                self.particles[i] = p;
                i
            }
            None => {
                self.particles.push(p);
                self.particles.len() - 1
            }
        };
        self.queue.push(Reverse((OrdF64(clock), idx)));
    }

    /// Move all particles whose clock lags `until` forward and return the
    /// absorptions that happened, in time order.
    pub fn advance<R: Rng + ?Sized>(
        &mut self,
        engine: &mut ParticleEngine,
        until: f64,
        rng: &mut R,
    ) -> Vec<AbsorptionEvent> {
        let mut events = Vec::new();
        let mut requeue = Vec::new();
        while let Some(Reverse((OrdF64(clock), idx))) = self.queue.peek().copied() {
            if clock >= until {
                break;
            }
            self.queue.pop();
            let p = &mut self.particles[idx];
            if let Some(ev) = engine.advance(p, until, rng) {
                events.push(ev);
            }
            let si = species_index(p.species);
            match p.status {
                ParticleStatus::Free => requeue.push(Reverse((OrdF64(p.clock), idx))),
                ParticleStatus::Absorbed => {
                    self.absorbed[si] += 1;
                    self.vacant.push(idx);
                }
                ParticleStatus::Culled => {
                    self.culled[si] += 1;
                    self.vacant.push(idx);
                }
            }
        }
        self.queue.extend(requeue);
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        events
    }

    pub fn census(&self, species: Species) -> Census {
        let si = species_index(species);
        let in_flight = self
            .queue
            .iter()
            .filter(|Reverse((_, i))| self.particles[*i].species == species)
            .count() as u64;
        Census {
            emitted: self.emitted[si],
            absorbed: self.absorbed[si],
            culled: self.culled[si],
            in_flight,
        }
    }
}
