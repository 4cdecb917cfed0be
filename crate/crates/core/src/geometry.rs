//! Node distributions on rectangular (optionally periodic, optionally
//! punctured) domains, and the neighbour stencils built on top of them.
//!
//! Clouds are generated by a propagating front followed by exactly ten
//! repulsive shifting sweeps. The generator is deterministic for a given
//! `(domain, s, seed)` triple.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of nodes a generated cloud must contain.
pub const MIN_NODES: usize = 100;

/// Number of shifting sweeps applied after the front has filled the domain.
pub const SHIFT_ITERATIONS: usize = 10;

/// Candidates closer than `REJECT_RADIUS * s` to an accepted node are dropped.
const REJECT_RADIUS: f64 = 0.82;
/// Candidates are placed at `s * [1, 1 + CANDIDATE_JITTER)` from a front node.
const CANDIDATE_JITTER: f64 = 0.15;
const CANDIDATES_PER_NODE: usize = 16;
/// Interior nodes keep at least this many spacings away from an exclusion disk.
const DISK_MARGIN: f64 = 0.5;

/// A circular hole cut out of the domain. Nodes on its rim carry Dirichlet data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    #[serde(default)]
    pub periodic_x: bool,
    #[serde(default)]
    pub periodic_y: bool,
    #[serde(default)]
    pub exclusions: Vec<Disk>,
}

impl DomainSpec {
    /// `[0,1]²`, periodic in both directions.
    pub fn unit_periodic() -> Self {
        Self {
            x_min: 0.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
            periodic_x: true,
            periodic_y: true,
            exclusions: Vec::new(),
        }
    }

    /// Periodic unit square with the disk of radius 0.1 at its centre removed.
    pub fn punctured_unit_square() -> Self {
        Self {
            exclusions: vec![Disk {
                center: [0.5, 0.5],
                radius: 0.1,
            }],
            ..Self::unit_periodic()
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    /// Area of the rectangle minus the exclusion disks.
    pub fn area(&self) -> f64 {
        self.width() * self.height()
            - self
                .exclusions
                .iter()
                .map(|d| PI * d.radius * d.radius)
                .sum::<f64>()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(Error::Config(format!(
                "invalid domain bounds [{}, {}] x [{}, {}]",
                self.x_min, self.x_max, self.y_min, self.y_max
            )));
        }
        for d in &self.exclusions {
            let [cx, cy] = d.center;
            let inside = d.radius > 0.0
                && cx - d.radius > self.x_min
                && cx + d.radius < self.x_max
                && cy - d.radius > self.y_min
                && cy + d.radius < self.y_max;
            if !inside {
                return Err(Error::Config(format!(
                    "exclusion disk at ({cx}, {cy}) radius {} does not lie strictly inside the domain",
                    d.radius
                )));
            }
        }
        Ok(())
    }

    fn wrap(&self, mut p: [f64; 2]) -> [f64; 2] {
        if self.periodic_x {
            p[0] = self.x_min + (p[0] - self.x_min).rem_euclid(self.width());
        }
        if self.periodic_y {
            p[1] = self.y_min + (p[1] - self.y_min).rem_euclid(self.height());
        }
        p
    }
}

/// Displacement `r_j - r_i`, wrapped to the nearest periodic image in every
/// periodic direction.
pub fn min_image_offset(ri: [f64; 2], rj: [f64; 2], domain: &DomainSpec) -> [f64; 2] {
    let mut dx = rj[0] - ri[0];
    let mut dy = rj[1] - ri[1];
    if domain.periodic_x {
        let l = domain.width();
        dx -= l * (dx / l).round();
    }
    if domain.periodic_y {
        let l = domain.height();
        dy -= l * (dy / l).round();
    }
    [dx, dy]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeTag {
    Interior,
    DirichletBoundary,
}

impl NodeTag {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeTag::Interior => "interior",
            NodeTag::DirichletBoundary => "dirichlet_boundary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "interior" => Some(NodeTag::Interior),
            "dirichlet_boundary" => Some(NodeTag::DirichletBoundary),
            _ => None,
        }
    }
}

/// A scattered node cloud. Immutable once built; `build_neighbors` returns a
/// new set carrying stencil radii and neighbour lists.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet {
    pub domain: DomainSpec,
    pub positions: Vec<[f64; 2]>,
    /// Average local nodal spacing `s_i`.
    pub spacing: Vec<f64>,
    /// Stencil scale `h_i`; the stencil radius is `2 h_i`.
    pub h: Vec<f64>,
    pub tags: Vec<NodeTag>,
    /// Neighbour lists, sorted ascending, never containing the node itself.
    pub neighbors: Vec<Vec<usize>>,
    pub seed: u64,
}

impl NodeSet {
    /// Wraps raw positions. `s_i` is the global estimate `sqrt(area / N)`
    /// and `h_i = s_i` until `build_neighbors` is called.
    pub fn from_positions(
        domain: DomainSpec,
        positions: Vec<[f64; 2]>,
        tags: Vec<NodeTag>,
        seed: u64,
    ) -> Result<Self> {
        domain.validate()?;
        if positions.len() != tags.len() {
            return Err(Error::Dimension(format!(
                "{} positions but {} tags",
                positions.len(),
                tags.len()
            )));
        }
        if positions.is_empty() {
            return Err(Error::Config("empty node set".into()));
        }
        let s = (domain.area() / positions.len() as f64).sqrt();
        let n = positions.len();
        Ok(Self {
            domain,
            positions,
            spacing: vec![s; n],
            h: vec![s; n],
            tags,
            neighbors: vec![Vec::new(); n],
            seed,
        })
    }

    /// Regular `nx × ny` lattice at cell centres, all nodes interior.
    pub fn lattice(domain: DomainSpec, nx: usize, ny: usize) -> Result<Self> {
        domain.validate()?;
        let dx = domain.width() / nx as f64;
        let dy = domain.height() / ny as f64;
        let mut positions = Vec::with_capacity(nx * ny);
        for b in 0..ny {
            for a in 0..nx {
                positions.push([
                    domain.x_min + (a as f64 + 0.5) * dx,
                    domain.y_min + (b as f64 + 0.5) * dy,
                ]);
            }
        }
        let tags = vec![NodeTag::Interior; positions.len()];
        Self::from_positions(domain, positions, tags, 0)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `r_j - r_i` under the minimum-image convention.
    pub fn offset(&self, i: usize, j: usize) -> [f64; 2] {
        min_image_offset(self.positions[i], self.positions[j], &self.domain)
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.tags[i] == NodeTag::DirichletBoundary
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Sets `h_i = h_over_s * s_i` and collects every `j != i` within `2 h_i`.
    ///
    /// Interior nodes must end up with more than `basis_size` neighbours;
    /// boundary nodes never carry a stencil and are exempt.
    pub fn build_neighbors(&self, h_over_s: f64, basis_size: usize) -> Result<NodeSet> {
        if !(h_over_s > 1.0) || !h_over_s.is_finite() {
            return Err(Error::Config(format!(
                "h/s must be greater than 1, got {h_over_s}"
            )));
        }
        let h: Vec<f64> = self.spacing.iter().map(|s| h_over_s * s).collect();
        let max_radius = 2.0 * h.iter().copied().fold(0.0, f64::max);
        let grid = CellGrid::new(&self.domain, &self.positions, max_radius);
        let mut neighbors = Vec::with_capacity(self.len());
        let mut scratch = Vec::new();
        for i in 0..self.len() {
            let radius = 2.0 * h[i];
            let r2 = radius * radius;
            scratch.clear();
            grid.candidates(self.positions[i], &mut scratch);
            let mut list: Vec<usize> = scratch
                .iter()
                .copied()
                .filter(|&j| {
                    if j == i {
                        return false;
                    }
                    let [dx, dy] = min_image_offset(self.positions[i], self.positions[j], &self.domain);
                    dx * dx + dy * dy <= r2
                })
                .collect();
            list.sort_unstable();
            list.dedup();
            if !self.is_boundary(i) && list.len() <= basis_size {
                return Err(Error::StencilDeficiency {
                    node: i,
                    found: list.len(),
                    required: basis_size,
                });
            }
            neighbors.push(list);
        }
        Ok(NodeSet {
            h,
            neighbors,
            ..self.clone()
        })
    }

    /// Minimum pairwise separation (brute force over neighbour cells).
    pub fn min_separation(&self) -> f64 {
        let s = self.min_spacing();
        let grid = CellGrid::new(&self.domain, &self.positions, 2.0 * s);
        let mut best = f64::INFINITY;
        let mut scratch = Vec::new();
        for i in 0..self.len() {
            scratch.clear();
            grid.candidates(self.positions[i], &mut scratch);
            for &j in &scratch {
                if j > i {
                    let [dx, dy] = self.offset(i, j);
                    best = best.min((dx * dx + dy * dy).sqrt());
                }
            }
        }
        best
    }

    /// Writes `id,x,y,s,h,tag` at 17 significant digits.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("id,x,y,s,h,tag\n");
        for i in 0..self.len() {
            let [x, y] = self.positions[i];
            let _ = writeln!(
                out,
                "{i},{x:.16e},{y:.16e},{:.16e},{:.16e},{}",
                self.spacing[i],
                self.h[i],
                self.tags[i].as_str()
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    /// Parses the node CSV. Neighbour lists are left empty.
    pub fn from_csv_str(domain: DomainSpec, text: &str) -> Result<NodeSet> {
        domain.validate()?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == "id,x,y,s,h,tag" => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    reason: "expected header `id,x,y,s,h,tag`".into(),
                })
            }
        }
        let mut positions = Vec::new();
        let mut spacing = Vec::new();
        let mut h = Vec::new();
        let mut tags = Vec::new();
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: &str| Error::Parse {
                line: ln + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(bad("expected 6 fields"));
            }
            let id: usize = fields[0].parse().map_err(|_| bad("bad id"))?;
            if id != positions.len() {
                return Err(bad("ids must be consecutive from 0"));
            }
            let num = |k: usize| -> Result<f64> {
                fields[k]
                    .parse::<f64>()
                    .map_err(|_| bad(&format!("bad number `{}`", fields[k])))
            };
            positions.push([num(1)?, num(2)?]);
            spacing.push(num(3)?);
            h.push(num(4)?);
            tags.push(NodeTag::parse(fields[5].trim()).ok_or_else(|| bad("unknown tag"))?);
        }
        if positions.is_empty() {
            return Err(Error::Config("empty node set".into()));
        }
        let n = positions.len();
        Ok(NodeSet {
            domain,
            positions,
            spacing,
            h,
            tags,
            neighbors: vec![Vec::new(); n],
            seed: 0,
        })
    }

    pub fn read_csv(domain: DomainSpec, path: &Path) -> Result<NodeSet> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_str(domain, &text)
    }
}

/// Uniform background grid for radius queries, aware of periodic wrap.
struct CellGrid {
    x_min: f64,
    y_min: f64,
    cell_w: f64,
    cell_h: f64,
    nx: usize,
    ny: usize,
    periodic_x: bool,
    periodic_y: bool,
    cells: Vec<Vec<usize>>,
}

impl CellGrid {
    fn new(domain: &DomainSpec, positions: &[[f64; 2]], cell: f64) -> Self {
        let nx = ((domain.width() / cell).floor() as usize).max(1);
        let ny = ((domain.height() / cell).floor() as usize).max(1);
        let mut grid = CellGrid {
            x_min: domain.x_min,
            y_min: domain.y_min,
            cell_w: domain.width() / nx as f64,
            cell_h: domain.height() / ny as f64,
            nx,
            ny,
            periodic_x: domain.periodic_x,
            periodic_y: domain.periodic_y,
            cells: vec![Vec::new(); nx * ny],
        };
        for (i, &p) in positions.iter().enumerate() {
            let c = grid.cell_of(p);
            grid.cells[c.1 * nx + c.0].push(i);
        }
        grid
    }

    fn cell_of(&self, p: [f64; 2]) -> (usize, usize) {
        let cx = ((p[0] - self.x_min) / self.cell_w).floor() as i64;
        let cy = ((p[1] - self.y_min) / self.cell_h).floor() as i64;
        (
            cx.clamp(0, self.nx as i64 - 1) as usize,
            cy.clamp(0, self.ny as i64 - 1) as usize,
        )
    }

    fn insert(&mut self, idx: usize, p: [f64; 2]) {
        let c = self.cell_of(p);
        self.cells[c.1 * self.nx + c.0].push(idx);
    }

    fn axis_cells(c: usize, n: usize, periodic: bool) -> Vec<usize> {
        let mut out = Vec::with_capacity(3);
        for d in [-1i64, 0, 1] {
            let k = c as i64 + d;
            let k = if periodic {
                k.rem_euclid(n as i64)
            } else if k < 0 || k >= n as i64 {
                continue;
            } else {
                k
            };
            if !out.contains(&(k as usize)) {
                out.push(k as usize);
            }
        }
        out
    }

    /// Every index stored in the 3×3 block of cells around `p`.
    fn candidates(&self, p: [f64; 2], out: &mut Vec<usize>) {
        let (cx, cy) = self.cell_of(p);
        let xs = Self::axis_cells(cx, self.nx, self.periodic_x);
        let ys = Self::axis_cells(cy, self.ny, self.periodic_y);
        for &b in &ys {
            for &a in &xs {
                out.extend_from_slice(&self.cells[b * self.nx + a]);
            }
        }
    }
}

fn inside_domain(domain: &DomainSpec, p: [f64; 2], margin: f64) -> bool {
    let x_ok = domain.periodic_x || (p[0] >= domain.x_min + margin && p[0] <= domain.x_max - margin);
    let y_ok = domain.periodic_y || (p[1] >= domain.y_min + margin && p[1] <= domain.y_max - margin);
    if !(x_ok && y_ok) {
        return false;
    }
    domain.exclusions.iter().all(|d| {
        let [dx, dy] = min_image_offset(d.center, p, domain);
        (dx * dx + dy * dy).sqrt() >= d.radius + margin
    })
}

fn boundary_seeds(domain: &DomainSpec, s: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let mut seeds = Vec::new();
    for d in &domain.exclusions {
        let n = ((2.0 * PI * d.radius / s).round() as usize).max(3);
        let phase = rng.gen::<f64>() * 2.0 * PI / n as f64;
        for k in 0..n {
            let t = phase + 2.0 * PI * k as f64 / n as f64;
            seeds.push([d.center[0] + d.radius * t.cos(), d.center[1] + d.radius * t.sin()]);
        }
    }
    // Non-periodic walls carry a row of nodes at spacing ~s, corners included once.
    let nx = ((domain.width() / s).round() as usize).max(1);
    let ny = ((domain.height() / s).round() as usize).max(1);
    if !domain.periodic_y {
        for k in 0..=nx {
            let x = domain.x_min + domain.width() * k as f64 / nx as f64;
            if domain.periodic_x && k == nx {
                continue;
            }
            seeds.push([x, domain.y_min]);
            seeds.push([x, domain.y_max]);
        }
    }
    if !domain.periodic_x {
        let (lo, hi) = if domain.periodic_y { (0, ny) } else { (1, ny - 1) };
        for k in lo..=hi {
            if domain.periodic_y && k == ny {
                continue;
            }
            let y = domain.y_min + domain.height() * k as f64 / ny as f64;
            seeds.push([domain.x_min, y]);
            seeds.push([domain.x_max, y]);
        }
    }
    seeds
}

/// Generates a disordered, quasi-uniform cloud with mean spacing `s`.
///
/// Nodes on exclusion rims and non-periodic walls are tagged
/// [`NodeTag::DirichletBoundary`]; everything else is interior.
pub fn generate_nodes(domain: &DomainSpec, s: f64, seed: u64) -> Result<NodeSet> {
    domain.validate()?;
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Config(format!("spacing must be positive, got {s}")));
    }
    let expected = domain.area() / (s * s);
    if expected < MIN_NODES as f64 {
        return Err(Error::Config(format!(
            "spacing {s} is too coarse: about {expected:.0} nodes fit, need at least {MIN_NODES}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reject = REJECT_RADIUS * s;
    let mut positions: Vec<[f64; 2]> = Vec::with_capacity(expected as usize + 16);
    let mut tags = Vec::with_capacity(positions.capacity());
    let mut grid = CellGrid::new(domain, &[], reject);

    let seeds = boundary_seeds(domain, s, &mut rng);
    let mut front = VecDeque::new();
    for p in seeds {
        grid.insert(positions.len(), p);
        front.push_back(positions.len());
        positions.push(p);
        tags.push(NodeTag::DirichletBoundary);
    }
    if front.is_empty() {
        loop {
            let p = [
                domain.x_min + rng.gen::<f64>() * domain.width(),
                domain.y_min + rng.gen::<f64>() * domain.height(),
            ];
            if inside_domain(domain, p, DISK_MARGIN * s) {
                grid.insert(0, p);
                front.push_back(0);
                positions.push(p);
                tags.push(NodeTag::Interior);
                break;
            }
        }
    }

    let mut scratch = Vec::new();
    while let Some(idx) = front.pop_front() {
        let origin = positions[idx];
        let phase = rng.gen::<f64>() * 2.0 * PI;
        for t in 0..CANDIDATES_PER_NODE {
            let angle = phase + 2.0 * PI * t as f64 / CANDIDATES_PER_NODE as f64;
            let dist = s * (1.0 + CANDIDATE_JITTER * rng.gen::<f64>());
            let cand = domain.wrap([origin[0] + dist * angle.cos(), origin[1] + dist * angle.sin()]);
            if !inside_domain(domain, cand, DISK_MARGIN * s) {
                continue;
            }
            scratch.clear();
            grid.candidates(cand, &mut scratch);
            let crowded = scratch.iter().any(|&j| {
                let [dx, dy] = min_image_offset(cand, positions[j], domain);
                dx * dx + dy * dy < reject * reject
            });
            if crowded {
                continue;
            }
            let k = positions.len();
            grid.insert(k, cand);
            positions.push(cand);
            tags.push(NodeTag::Interior);
            front.push_back(k);
        }
    }

    shift_nodes(domain, s, &mut positions, &tags);
    NodeSet::from_positions(domain.clone(), positions, tags, seed)
}

/// Repulsive smoothing: every interior node moves along
/// `Σ_j (s/|r_ji|)² · (−r̂_ji)`, scaled so the largest move is `0.1 s`.
fn shift_nodes(domain: &DomainSpec, s: f64, positions: &mut [[f64; 2]], tags: &[NodeTag]) {
    let reach = 1.5 * s;
    let mut scratch = Vec::new();
    for _ in 0..SHIFT_ITERATIONS {
        let grid = CellGrid::new(domain, positions, reach);
        let mut disp = vec![[0.0f64; 2]; positions.len()];
        let mut largest = 0.0f64;
        for i in 0..positions.len() {
            if tags[i] != NodeTag::Interior {
                continue;
            }
            scratch.clear();
            grid.candidates(positions[i], &mut scratch);
            let mut d = [0.0, 0.0];
            for &j in &scratch {
                if j == i {
                    continue;
                }
                let [dx, dy] = min_image_offset(positions[i], positions[j], domain);
                let r2 = dx * dx + dy * dy;
                if r2 >= reach * reach || r2 == 0.0 {
                    continue;
                }
                let r = r2.sqrt();
                let mag = s * s / r2;
                d[0] -= mag * dx / r;
                d[1] -= mag * dy / r;
            }
            largest = largest.max((d[0] * d[0] + d[1] * d[1]).sqrt());
            disp[i] = d;
        }
        if largest == 0.0 {
            break;
        }
        let scale = 0.1 * s / largest;
        for i in 0..positions.len() {
            if tags[i] != NodeTag::Interior {
                continue;
            }
            let moved = domain.wrap([
                positions[i][0] + scale * disp[i][0],
                positions[i][1] + scale * disp[i][1],
            ]);
            if inside_domain(domain, moved, DISK_MARGIN * s) {
                positions[i] = moved;
            }
        }
    }
}
