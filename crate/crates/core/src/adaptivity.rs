//! Split particles that outgrow local linearity and merge particles that
//! crowd into the same hash-grid cell.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::hash::{BuildHasherDefault, Hash, Hasher};

use hashbrown::HashMap;
use nalgebra::SMatrix;

use crate::linalg::{psd_sqrt_factor, symmetric_eigen};
use crate::lskf::VelocityField;
use crate::particle::{mixture_moments, normal_pdf, DomainBox, GaussianParticle, StateVector};
use crate::{AppdError, Result};

/// Offset and weights of the three-component replacement of one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConstants {
    /// Child offset in units of the standard deviation along the split direction.
    pub offset_scale: f64,
    /// Weight fraction of each of the two side children.
    pub side_weight: f64,
}

impl SplitConstants {
    pub const DEFAULT: Self = Self {
        offset_scale: 1.03332,
        side_weight: 0.21921,
    };

    pub fn center_weight(&self) -> f64 {
        1.0 - 2.0 * self.side_weight
    }

    /// Ratio of the mixture variance along the split direction after and
    /// before a split.
    pub fn variance_factor(&self) -> f64 {
        0.5 + 2.0 * self.side_weight * self.offset_scale * self.offset_scale
    }
}

impl Default for SplitConstants {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitPolicy<const D: usize> {
    pub linearity_tolerance: f64,
    /// Largest marginal variance allowed per dimension.
    pub variance_cap: StateVector<D>,
    pub max_splits: usize,
}

impl<const D: usize> Default for SplitPolicy<D> {
    fn default() -> Self {
        Self {
            linearity_tolerance: 0.05,
            variance_cap: StateVector::<D>::repeat(f64::INFINITY),
            max_splits: 8,
        }
    }
}

impl<const D: usize> SplitPolicy<D> {
    pub fn is_valid(&self) -> bool {
        self.linearity_tolerance > 0.0 && self.variance_cap.iter().all(|&c| c > 0.0)
    }
}

/// Below this speed the relative linearity error is meaningless.
pub const STAGNATION_SPEED: f64 = 1e-12;

/// Relative second difference of `v` along `dx`:
/// `‖(v(x+2dx) − v(x)) − 2(v(x+dx) − v(x))‖ / (2‖v(x)‖)`.
pub fn linearity_error<V: VelocityField<D>, const D: usize>(v: &V, x: &StateVector<D>, dx: &StateVector<D>) -> f64 {
    let v0 = v.velocity(x);
    second_difference(v, x, dx, &v0) / (2.0 * v0.norm().max(STAGNATION_SPEED))
}

#[inline]
fn second_difference<V: VelocityField<D>, const D: usize>(
    v: &V,
    x: &StateVector<D>,
    dx: &StateVector<D>,
    v0: &StateVector<D>,
) -> f64 {
    let v1 = v.velocity(&(x + dx));
    let v2 = v.velocity(&(x + dx * 2.0));
    ((v2 - v0) - (v1 - v0) * 2.0).norm()
}

/// Column of the square-root factor to split along, if any.
///
/// The column with the largest linearity error above tolerance wins. Failing
/// that, a dimension whose marginal variance exceeds its cap is split along
/// the column contributing most to it. Particles at rest skip the linearity
/// test and only face the caps.
pub fn needs_split<V: VelocityField<D>, const D: usize>(
    p: &GaussianParticle<D>,
    v: &V,
    policy: &SplitPolicy<D>,
) -> Option<usize> {
    let x = &p.center;
    let v0 = v.velocity(x);
    let speed = v0.norm();
    if speed >= STAGNATION_SPEED {
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..D {
            let dx = p.sqrt_factor.column(i).into_owned();
            let eps = second_difference(v, x, &dx, &v0) / (2.0 * speed);
            if eps > policy.linearity_tolerance && worst.is_none_or(|(_, e)| eps > e) {
                worst = Some((i, eps));
            }
        }
        if let Some((i, _)) = worst {
            return Some(i);
        }
    }

    let m = &p.sqrt_factor;
    let mut worst: Option<(usize, f64)> = None;
    for j in 0..D {
        let row = m.row(j);
        let variance = row.norm_squared();
        if variance > policy.variance_cap[j] {
            let excess = variance / policy.variance_cap[j];
            if worst.is_none_or(|(_, e)| excess > e) {
                worst = Some((j, excess));
            }
        }
    }
    worst.map(|(j, _)| {
        let row = m.row(j);
        let mut best = 0;
        for i in 1..D {
            if row[i].abs() > row[best].abs() {
                best = i;
            }
        }
        best
    })
}

fn children<const D: usize>(
    p: &GaussianParticle<D>,
    offset: StateVector<D>,
    factor: SMatrix<f64, D, D>,
    constants: &SplitConstants,
    domain: &DomainBox<D>,
) -> [GaussianParticle<D>; 3] {
    let side = p.weight * constants.side_weight;
    let centre = p.weight * constants.center_weight();
    [
        GaussianParticle::new(side, domain.clamp(&(p.center + offset)), factor),
        GaussianParticle::new(centre, p.center, factor),
        GaussianParticle::new(side, domain.clamp(&(p.center - offset)), factor),
    ]
}

/// Split along column `col` of the square-root factor. The children share
/// the factor `Nᵢ = Mᵢ − (1 − 1/√2)(⟨M_c,Mᵢ⟩/⟨M_c,M_c⟩)M_c`, which halves the
/// variance along `M_c` and leaves the orthogonal complement alone.
pub fn split_sqrt<const D: usize>(
    p: &GaussianParticle<D>,
    col: usize,
    constants: &SplitConstants,
    domain: &DomainBox<D>,
) -> Result<[GaussianParticle<D>; 3]> {
    let m = &p.sqrt_factor;
    let dir = m.column(col).into_owned();
    let norm2 = dir.norm_squared();
    if !(norm2 > 0.0) {
        return Err(AppdError::ZeroDirection);
    }
    let shrink = 1.0 - core::f64::consts::FRAC_1_SQRT_2;
    let mut factor = *m;
    for i in 0..D {
        if i == col {
            factor.column_mut(i).scale_mut(core::f64::consts::FRAC_1_SQRT_2);
        } else {
            let coef = shrink * dir.dot(&m.column(i)) / norm2;
            factor.column_mut(i).axpy(-coef, &dir, 1.0);
        }
    }
    Ok(children(p, dir * constants.offset_scale, factor, constants, domain))
}

/// Split along the principal axis of the covariance. Ties go to the lowest
/// index. Kept as a reference for [`split_sqrt`].
pub fn split_eigen<const D: usize>(
    p: &GaussianParticle<D>,
    constants: &SplitConstants,
    domain: &DomainBox<D>,
) -> [GaussianParticle<D>; 3] {
    let sigma = p.covariance();
    let (values, vectors) = symmetric_eigen(&sigma);
    let mut best = 0;
    for i in 1..D {
        if values[i] > values[best] * (1.0 + 1e-12) {
            best = i;
        }
    }
    let mut e = vectors.column(best).into_owned();
    let lead = e.iamax();
    if e[lead] < 0.0 {
        e = -e;
    }
    let lambda = values[best].max(0.0);
    let child_cov = sigma - e * e.transpose() * (0.5 * lambda);
    let offset = e * (constants.offset_scale * libm::sqrt(lambda));
    children(p, offset, psd_sqrt_factor(&child_cov), constants, domain)
}

/// Sup-norm of the difference between a centred 1-D Gaussian of the given
/// variance and its three-component split, relative to the Gaussian's peak.
pub fn split_1d_error(variance: f64) -> f64 {
    split_1d_error_with(variance, &SplitConstants::DEFAULT)
}

pub fn split_1d_error_with(variance: f64, constants: &SplitConstants) -> f64 {
    const POINTS: usize = 40_001;
    const HALF_WIDTH: f64 = 10.0;
    let sd = libm::sqrt(variance);
    let child_var = 0.5 * variance;
    let shift = constants.offset_scale * sd;
    let peak = normal_pdf(0.0, 0.0, variance);
    let mut worst: f64 = 0.0;
    for k in 0..POINTS {
        let x = sd * HALF_WIDTH * (2.0 * k as f64 / (POINTS - 1) as f64 - 1.0);
        let split = constants.center_weight() * normal_pdf(x, 0.0, child_var)
            + constants.side_weight * (normal_pdf(x, shift, child_var) + normal_pdf(x, -shift, child_var));
        worst = worst.max((normal_pdf(x, 0.0, variance) - split).abs());
    }
    worst / peak
}

/// Apply [`needs_split`] and [`split_sqrt`] breadth-first to one particle
/// and its descendants, performing at most `policy.max_splits` splits.
pub fn refine_particle<V: VelocityField<D>, const D: usize>(
    p: &GaussianParticle<D>,
    v: &V,
    policy: &SplitPolicy<D>,
    constants: &SplitConstants,
    domain: &DomainBox<D>,
) -> Result<Vec<GaussianParticle<D>>> {
    if policy.max_splits == 0 {
        return Ok(vec![p.clone()]);
    }
    let Some(col) = needs_split(p, v, policy) else {
        return Ok(vec![p.clone()]);
    };
    let mut pending: VecDeque<GaussianParticle<D>> = split_sqrt(p, col, constants, domain)?.into_iter().collect();
    let mut splits = 1;
    let mut out = Vec::with_capacity(3);
    while let Some(q) = pending.pop_front() {
        if splits < policy.max_splits {
            if let Some(col) = needs_split(&q, v, policy) {
                pending.extend(split_sqrt(&q, col, constants, domain)?);
                splits += 1;
                continue;
            }
        }
        out.push(q);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Combining

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombineGrid<const D: usize> {
    pub cell_side: StateVector<D>,
}

impl<const D: usize> CombineGrid<D> {
    pub fn new(cell_side: StateVector<D>) -> Self {
        Self { cell_side }
    }

    pub fn is_valid(&self) -> bool {
        self.cell_side.iter().all(|&s| s > 0.0 && s.is_finite())
    }
}

/// Integer cell coordinates of a point. Equality compares the whole tuple;
/// hashing packs it with a splitmix finalizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellKey<const D: usize>(pub [i64; D]);

impl<const D: usize> CellKey<D> {
    pub fn packed(&self) -> u64 {
        let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
        for &i in &self.0 {
            h = splitmix64(h ^ i as u64);
        }
        h
    }
}

impl<const D: usize> Hash for CellKey<D> {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.packed());
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Passes the already-mixed key straight through.
#[derive(Default)]
struct PackedKeyHasher(u64);

impl Hasher for PackedKeyHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = splitmix64(self.0 ^ b as u64);
        }
    }

    fn write_u64(&mut self, i: u64) {
        self.0 = i;
    }
}

type CellMap<const D: usize> = HashMap<CellKey<D>, u32, BuildHasherDefault<PackedKeyHasher>>;

pub fn bucket_key<const D: usize>(center: &StateVector<D>, grid: &CombineGrid<D>) -> CellKey<D> {
    let mut idx = [0i64; D];
    for i in 0..D {
        idx[i] = libm::floor(center[i] / grid.cell_side[i]) as i64;
    }
    CellKey(idx)
}

/// Moment-matched merge of a bucket. A singleton is returned unchanged.
pub fn combine_bucket<const D: usize>(particles: &[GaussianParticle<D>]) -> Result<GaussianParticle<D>> {
    match particles {
        [] => Err(AppdError::EmptyMixture),
        [only] if only.weight > 0.0 => Ok(only.clone()),
        _ => {
            let moments = mixture_moments(particles)?;
            Ok(GaussianParticle::new(
                moments.total_weight,
                moments.mean,
                psd_sqrt_factor(&moments.covariance),
            ))
        }
    }
}

/// Merge every group of particles sharing a grid cell. Output is ordered by
/// the first appearance of each cell in the input, so the result does not
/// depend on hash iteration order.
pub fn combine_pass<const D: usize>(
    particles: &[GaussianParticle<D>],
    grid: &CombineGrid<D>,
) -> Result<Vec<GaussianParticle<D>>> {
    let n = particles.len();
    let mut cells: CellMap<D> = HashMap::with_capacity_and_hasher(n, Default::default());
    let mut cell_of = Vec::with_capacity(n);
    let mut counts: Vec<u32> = Vec::new();
    for p in particles {
        let next = counts.len() as u32;
        let id = *cells.entry(bucket_key(&p.center, grid)).or_insert(next);
        if id == next {
            counts.push(0);
        }
        counts[id as usize] += 1;
        cell_of.push(id);
    }
    if counts.len() == n {
        return Ok(particles.to_vec());
    }

    // Counting sort of particle indices by cell, stable within a cell.
    let mut start = Vec::with_capacity(counts.len() + 1);
    start.push(0usize);
    for &c in &counts {
        start.push(start.last().unwrap() + c as usize);
    }
    let mut fill = start.clone();
    let mut order = vec![0usize; n];
    for (i, &id) in cell_of.iter().enumerate() {
        order[fill[id as usize]] = i;
        fill[id as usize] += 1;
    }

    let mut out = Vec::with_capacity(counts.len());
    let mut bucket = Vec::new();
    for c in 0..counts.len() {
        let members = &order[start[c]..start[c + 1]];
        if let [only] = members {
            out.push(particles[*only].clone());
            continue;
        }
        bucket.clear();
        bucket.extend(members.iter().map(|&i| particles[i].clone()));
        out.push(combine_bucket(&bucket)?);
    }
    Ok(out)
}
