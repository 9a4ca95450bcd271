//! Nearest-site partition of the cell grid, coverage cost and per-cell
//! density moments.
//!
//! Rows are scanned with a lower envelope: along a row the squared distance to
//! site `i` is `q² - 2·px_i·q + (px_i² + dy_i²)`, so once the common `q²` is
//! dropped each site is a line in `q`. Only sites on (or within a couple of
//! cells of) the envelope are compared at a given cell, and the comparison
//! itself uses the same squared-distance expression as a plain scan, with ties
//! going to the lowest site index.

use bitvec::slice::BitSlice;

use super::world::{CellRect, GridGeom, World};
use crate::graph::Vec2;

pub const UNASSIGNED: u32 = u32::MAX;

/// Owner of every cell, or [`UNASSIGNED`] outside the considered region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoronoiPartition {
    pub cells: usize,
    pub owner: Vec<u32>,
}

impl VoronoiPartition {
    pub fn owner_of(&self, ix: usize, iy: usize) -> Option<u32> {
        match self.owner[iy * self.cells + ix] {
            UNASSIGNED => None,
            o => Some(o),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct HullLine {
    slope: f64,
    offset: f64,
    /// Range into the row's `(offset, site)` list holding the sites tied on
    /// this line.
    first: usize,
    last: usize,
}

/// Visits every cell of `rect` with the index (into `sites`) of its nearest site.
pub fn scan_nearest<F>(sites: &[Vec2], geom: &GridGeom, rect: CellRect, mut visit: F)
where
    F: FnMut(usize, usize, usize),
{
    scan_runs(sites, geom, rect, |iy, x0, x1, s| {
        for ix in x0..x1 {
            visit(ix, iy, s);
        }
    });
}

/// Like [`scan_nearest`], but reports maximal horizontal runs
/// `(iy, x_begin, x_end, site)` of cells sharing a nearest site.
pub fn scan_runs<F>(sites: &[Vec2], geom: &GridGeom, rect: CellRect, mut visit: F)
where
    F: FnMut(usize, usize, usize, usize),
{
    if sites.is_empty() || rect.is_empty() {
        return;
    }
    let res = geom.resolution;
    let margin = 2.0 * res;
    let mut order: Vec<usize> = (0..sites.len()).collect();
    order.sort_by(|&a, &b| sites[a].x.total_cmp(&sites[b].x).then(a.cmp(&b)));

    let mut members: Vec<(f64, usize)> = Vec::with_capacity(sites.len());
    let mut hull: Vec<HullLine> = Vec::with_capacity(sites.len());
    let mut starts: Vec<f64> = Vec::with_capacity(sites.len());
    let mut ends: Vec<f64> = Vec::with_capacity(sites.len());
    let xs: Vec<f64> = (rect.x0..rect.x1).map(|ix| geom.center(ix)).collect();

    for iy in rect.y0..rect.y1 {
        let qy = geom.center(iy);
        members.clear();
        members.extend(order.iter().map(|&s| {
            let dy = qy - sites[s].y;
            (sites[s].x * sites[s].x + dy * dy, s)
        }));
        hull.clear();
        let mut g = 0;
        while g < members.len() {
            // sites sharing the same x are parallel lines; keep the lowest
            let x = sites[members[g].1].x;
            let mut e = g + 1;
            while e < members.len() && sites[members[e].1].x == x {
                e += 1;
            }
            if e - g > 1 {
                members[g..e].sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            }
            let bmin = members[g].0;
            let tol = 1e-9 * bmin.abs().max(1.0);
            let mut t = g + 1;
            while t < e && members[t].0 <= bmin + tol {
                t += 1;
            }
            let line = HullLine {
                slope: -2.0 * x,
                offset: bmin,
                first: g,
                last: t,
            };
            while hull.len() >= 2 {
                let l1 = &hull[hull.len() - 2];
                let l2 = &hull[hull.len() - 1];
                let x12 = (l2.offset - l1.offset) / (l1.slope - l2.slope);
                let x13 = (line.offset - l1.offset) / (l1.slope - line.slope);
                if x13 < x12 - 1e-6 * res {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(line);
            g = e;
        }
        starts.clear();
        ends.clear();
        for m in 0..hull.len() {
            let start = if m == 0 {
                f64::NEG_INFINITY
            } else {
                let (l1, l2) = (&hull[m - 1], &hull[m]);
                (l2.offset - l1.offset) / (l1.slope - l2.slope)
            };
            starts.push(start);
            if m > 0 {
                ends.push(start);
            }
        }
        ends.push(f64::INFINITY);

        let (mut lo, mut hi) = (0usize, 0usize);
        let mut run = PendingRun::default();
        let mut k = 0;
        while k < xs.len() {
            let qx = xs[k];
            while lo + 1 < hull.len() && ends[lo].max(starts[lo]) < qx - margin {
                lo += 1;
            }
            hi = hi.max(lo);
            while hi + 1 < hull.len() && starts[hi + 1].min(ends[hi + 1]) <= qx + margin {
                hi += 1;
            }
            let line = hull[lo];
            if lo == hi && line.last - line.first == 1 {
                // Only one candidate: it wins until the candidate window moves.
                let s = members[line.first].1;
                let lo_fixed = lo + 1 >= hull.len();
                let next = (hi + 1 < hull.len()).then(|| starts[hi + 1].min(ends[hi + 1]));
                let end_lo = ends[lo].max(starts[lo]);
                let begin = k;
                // The window moves at the first cell where either bound is
                // crossed; both tests are monotone along the row.
                let moves = |q: f64| (!lo_fixed && end_lo < q - margin) || next.is_some_and(|n| n <= q + margin);
                k += 1 + xs[k + 1..].partition_point(|&q| !moves(q));
                run.push(&mut visit, iy, rect.x0 + begin, rect.x0 + k, s);
                continue;
            }
            let mut best = (f64::INFINITY, usize::MAX);
            for line in &hull[lo..=hi] {
                for &(_, s) in &members[line.first..line.last] {
                    let p = sites[s];
                    let dx = qx - p.x;
                    let dy = qy - p.y;
                    let d = dx * dx + dy * dy;
                    if d < best.0 || (d == best.0 && s < best.1) {
                        best = (d, s);
                    }
                }
            }
            run.push(&mut visit, iy, rect.x0 + k, rect.x0 + k + 1, best.1);
            k += 1;
        }
        run.flush(&mut visit);
    }
}

/// Coalesces adjacent runs of the same site before reporting them.
#[derive(Default)]
struct PendingRun(Option<(usize, usize, usize, usize)>);

impl PendingRun {
    fn push<F: FnMut(usize, usize, usize, usize)>(&mut self, visit: &mut F, iy: usize, x0: usize, x1: usize, s: usize) {
        match &mut self.0 {
            Some((_, _, end, site)) if *end == x0 && *site == s => *end = x1,
            _ => {
                self.flush(visit);
                self.0 = Some((iy, x0, x1, s));
            }
        }
    }

    fn flush<F: FnMut(usize, usize, usize, usize)>(&mut self, visit: &mut F) {
        if let Some((iy, x0, x1, s)) = self.0.take() {
            visit(iy, x0, x1, s);
        }
    }
}

/// Nearest-site assignment over the whole grid, or only inside `restrict`.
pub fn voronoi_assign(positions: &[Vec2], world: &World, restrict: Option<CellRect>) -> VoronoiPartition {
    let geom = world.geom();
    let n = geom.cells;
    let rect = restrict.map_or(geom.full(), |r| CellRect {
        x0: r.x0.min(n),
        y0: r.y0.min(n),
        x1: r.x1.min(n),
        y1: r.y1.min(n),
    });
    let mut owner = vec![UNASSIGNED; n * n];
    scan_nearest(positions, &geom, rect, |ix, iy, s| owner[iy * n + ix] = s as u32);
    VoronoiPartition { cells: n, owner }
}

/// `sum_cells ‖p_nearest(q) - q‖² Φ(q) · cell_area`.
pub fn coverage_cost(positions: &[Vec2], world: &World) -> f64 {
    let geom = world.geom();
    let n = geom.cells;
    let idf = world.idf();
    let mut total = 0.0;
    scan_runs(positions, &geom, geom.full(), |iy, x0, x1, s| {
        let p = positions[s];
        let dy = geom.center(iy) - p.y;
        let dy2 = dy * dy;
        total += row_cost(&idf[iy * n + x0..iy * n + x1], geom.center(x0) - p.x, geom.resolution, dy2);
    });
    total * world.cell_area()
}

/// Weighted and unweighted first moments of one Voronoi cell.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CellMoments {
    pub mass: f64,
    pub mass_x: f64,
    pub mass_y: f64,
    pub count: usize,
    pub sum_x: f64,
    pub sum_y: f64,
}

impl CellMoments {
    /// Density centroid, or the geometric centroid when the cell has no mass.
    pub fn centroid(&self) -> Option<Vec2> {
        if self.mass > 0.0 {
            Some(Vec2::new(self.mass_x / self.mass, self.mass_y / self.mass))
        } else if self.count > 0 {
            Some(Vec2::new(self.sum_x / self.count as f64, self.sum_y / self.count as f64))
        } else {
            None
        }
    }
}

/// Moments of every site's cell inside `rect` under density `weight(ix, iy)`.
pub fn cell_moments<F>(sites: &[Vec2], geom: &GridGeom, rect: CellRect, weight: F) -> Vec<CellMoments>
where
    F: Fn(usize, usize) -> f64,
{
    let mut out = vec![CellMoments::default(); sites.len()];
    scan_nearest(sites, geom, rect, |ix, iy, s| {
        let (qx, qy) = (geom.center(ix), geom.center(iy));
        let m = &mut out[s];
        let w = weight(ix, iy);
        if w != 0.0 {
            m.mass += w;
            m.mass_x += w * qx;
            m.mass_y += w * qy;
        }
        m.count += 1;
        m.sum_x += qx;
        m.sum_y += qy;
    });
    out
}

const LANES: usize = 4;

/// `sum_k ((dx0 + k·res)² + dy2) · phi[k]`, split over independent lanes so
/// the loop vectorizes.
fn row_cost(phi: &[f64], dx0: f64, res: f64, dy2: f64) -> f64 {
    let mut acc = [0.0; LANES];
    let chunks = phi.chunks_exact(LANES);
    let tail = chunks.remainder();
    for (c, ch) in chunks.enumerate() {
        for l in 0..LANES {
            let dx = dx0 + (c * LANES + l) as f64 * res;
            acc[l] += (dx * dx + dy2) * ch[l];
        }
    }
    let base = phi.len() - tail.len();
    for (k, &v) in tail.iter().enumerate() {
        let dx = dx0 + (base + k) as f64 * res;
        acc[0] += (dx * dx + dy2) * v;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// `(sum phi[k], sum phi[k]·(x0 + k·res))`, lane-split like [`row_cost`].
fn row_moments(phi: &[f64], x0: f64, res: f64) -> (f64, f64) {
    let (mut w, mut wx) = ([0.0; LANES], [0.0; LANES]);
    let chunks = phi.chunks_exact(LANES);
    let tail = chunks.remainder();
    for (c, ch) in chunks.enumerate() {
        for l in 0..LANES {
            w[l] += ch[l];
            wx[l] += ch[l] * (x0 + (c * LANES + l) as f64 * res);
        }
    }
    let base = phi.len() - tail.len();
    for (k, &v) in tail.iter().enumerate() {
        w[0] += v;
        wx[0] += v * (x0 + (base + k) as f64 * res);
    }
    ((w[0] + w[1]) + (w[2] + w[3]), (wx[0] + wx[1]) + (wx[2] + wx[3]))
}

/// [`cell_moments`] under the world density, zeroed outside `mask` when one
/// is given (a row-major bit per world cell).
pub fn density_moments(sites: &[Vec2], world: &World, rect: CellRect, mask: Option<&BitSlice>) -> Vec<CellMoments> {
    let geom = world.geom();
    let n = geom.cells;
    let idf = world.idf();
    let mut out = vec![CellMoments::default(); sites.len()];
    scan_runs(sites, &geom, rect, |iy, x0, x1, s| {
        let base = iy * n;
        let (mut w, mut wx) = (0.0, 0.0);
        match mask {
            None => (w, wx) = row_moments(&idf[base + x0..base + x1], geom.center(x0), geom.resolution),
            Some(bits) => {
                for off in bits[base + x0..base + x1].iter_ones() {
                    let phi = idf[base + x0 + off];
                    w += phi;
                    wx += phi * geom.center(x0 + off);
                }
            }
        }
        let qy = geom.center(iy);
        let len = x1 - x0;
        let m = &mut out[s];
        m.mass += w;
        m.mass_x += wx;
        m.mass_y += w * qy;
        m.count += len;
        m.sum_x += geom.resolution * len as f64 * (x0 + x1) as f64 * 0.5;
        m.sum_y += qy * len as f64;
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::world::GaussianPeak;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_owner(sites: &[Vec2], geom: &GridGeom, ix: usize, iy: usize) -> usize {
        let (qx, qy) = (geom.center(ix), geom.center(iy));
        let mut best = (f64::INFINITY, 0);
        for (s, p) in sites.iter().enumerate() {
            let d = (qx - p.x) * (qx - p.x) + (qy - p.y) * (qy - p.y);
            if d < best.0 {
                best = (d, s);
            }
        }
        best.1
    }

    #[test]
    fn single_site_owns_everything() {
        let w = World::uniform(16.0, 1.0, 1.0).unwrap();
        let part = voronoi_assign(&[Vec2::new(3.0, 9.0)], &w, None);
        assert!(part.owner.iter().all(|&o| o == 0));
    }

    #[test]
    fn symmetric_pair_splits_with_lower_index_on_midline() {
        // odd grid so the midline passes through cell centers
        let w = World::uniform(9.0, 1.0, 1.0).unwrap();
        let sites = [Vec2::new(6.5, 4.5), Vec2::new(2.5, 4.5)];
        let part = voronoi_assign(&sites, &w, None);
        for iy in 0..9 {
            for ix in 0..9 {
                let expect = if ix < 4 { 1 } else { 0 };
                assert_eq!(part.owner_of(ix, iy), Some(expect), "cell {ix},{iy}");
            }
        }
        let sites = [Vec2::new(2.5, 4.5), Vec2::new(6.5, 4.5)];
        let part = voronoi_assign(&sites, &w, None);
        assert_eq!(part.owner_of(4, 0), Some(0));
    }

    #[test]
    fn matches_brute_force_on_random_sites() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = World::uniform(256.0, 1.0, 1.0).unwrap();
        let geom = w.geom();
        for trial in 0..6 {
            let n = if trial == 0 { 32 } else { rng.random_range(1..40) };
            let mut sites: Vec<Vec2> = (0..n)
                .map(|_| Vec2::new(rng.random_range(0.0..256.0), rng.random_range(0.0..256.0)))
                .collect();
            if trial == 5 {
                // duplicated and vertically stacked sites
                sites.push(sites[0]);
                sites.push(Vec2::new(sites[1].x, sites[1].y + 17.0));
                sites.push(Vec2::new(sites[1].x, 300.0));
            }
            let part = voronoi_assign(&sites, &w, None);
            for iy in 0..256 {
                for ix in 0..256 {
                    assert_eq!(
                        part.owner_of(ix, iy),
                        Some(brute_owner(&sites, &geom, ix, iy) as u32),
                        "trial {trial} cell {ix},{iy}"
                    );
                }
            }
        }
    }

    #[test]
    fn grid_aligned_ties_resolve_like_brute_force() {
        let w = World::uniform(32.0, 1.0, 1.0).unwrap();
        let geom = w.geom();
        let mut sites = Vec::new();
        for y in [4.5, 12.5, 20.5] {
            for x in [3.5, 11.5, 19.5, 27.5] {
                sites.push(Vec2::new(x, y));
            }
        }
        sites.reverse();
        let part = voronoi_assign(&sites, &w, None);
        for iy in 0..32 {
            for ix in 0..32 {
                assert_eq!(part.owner_of(ix, iy), Some(brute_owner(&sites, &geom, ix, iy) as u32));
            }
        }
    }

    #[test]
    fn restricted_assignment_leaves_outside_unassigned() {
        let w = World::uniform(64.0, 1.0, 1.0).unwrap();
        let rect = CellRect { x0: 10, y0: 20, x1: 30, y1: 25 };
        let part = voronoi_assign(&[Vec2::new(1.0, 1.0), Vec2::new(40.0, 40.0)], &w, Some(rect));
        let assigned = part.owner.iter().filter(|&&o| o != UNASSIGNED).count();
        assert_eq!(assigned, rect.area());
        assert_eq!(part.owner_of(0, 0), None);
    }

    #[test]
    fn cost_on_toy_grid_is_hand_sum() {
        let w = World::uniform(4.0, 1.0, 1.0).unwrap();
        let p = Vec2::new(1.0, 1.0);
        let mut expect = 0.0;
        for iy in 0..4 {
            for ix in 0..4 {
                let (dx, dy) = (ix as f64 + 0.5 - 1.0, iy as f64 + 0.5 - 1.0);
                expect += dx * dx + dy * dy;
            }
        }
        assert_eq!(coverage_cost(&[p], &w), expect);
        assert_eq!(coverage_cost(&[p], &World::uniform(4.0, 1.0, 0.0).unwrap()), 0.0);
    }

    #[test]
    fn centered_robot_beats_offset_robot() {
        let w = World::uniform(256.0, 1.0, 1.0).unwrap();
        let centered = coverage_cost(&[Vec2::new(128.0, 128.0)], &w);
        let offset = coverage_cost(&[Vec2::new(228.0, 128.0)], &w);
        assert!(centered < offset);
    }

    #[test]
    fn cost_agrees_with_partition_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let w = World::generate(5, &crate::env::IdfSpec { side: 256.0, num_peaks: 6, ..Default::default() }).unwrap();
        for _ in 0..5 {
            let sites: Vec<Vec2> = (0..12)
                .map(|_| Vec2::new(rng.random_range(0.0..256.0), rng.random_range(0.0..256.0)))
                .collect();
            let part = voronoi_assign(&sites, &w, None);
            let mut by_partition = 0.0;
            for (i, site) in sites.iter().enumerate() {
                for iy in 0..256 {
                    for ix in 0..256 {
                        if part.owner_of(ix, iy) == Some(i as u32) {
                            let q = w.cell_center(ix, iy);
                            let d = q - *site;
                            by_partition += (d.x * d.x + d.y * d.y) * w.value(ix, iy) * w.cell_area();
                        }
                    }
                }
            }
            let direct = coverage_cost(&sites, &w);
            assert!((direct - by_partition).abs() <= 1e-9 * by_partition.max(1.0));
        }
    }

    #[test]
    fn run_moments_agree_with_per_cell_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let peaks = [GaussianPeak {
            center: Vec2::new(40.0, 70.0),
            sigma: 30.0,
            amplitude: 0.8,
        }];
        let w = World::from_peaks(128.0, 1.0, &peaks).unwrap();
        let sites: Vec<Vec2> = (0..9)
            .map(|_| Vec2::new(rng.random_range(0.0..128.0), rng.random_range(0.0..128.0)))
            .collect();
        let mask: bitvec::vec::BitVec = (0..128 * 128).map(|_| rng.random_bool(0.6)).collect();
        let rect = CellRect {
            x0: 10,
            y0: 5,
            x1: 120,
            y1: 100,
        };
        let geom = w.geom();
        let full = cell_moments(&sites, &geom, rect, |ix, iy| w.value(ix, iy));
        let masked = cell_moments(&sites, &geom, rect, |ix, iy| {
            if mask[iy * 128 + ix] {
                w.value(ix, iy)
            } else {
                0.0
            }
        });
        for (reference, fast) in [
            (full, density_moments(&sites, &w, rect, None)),
            (masked, density_moments(&sites, &w, rect, Some(&mask))),
        ] {
            for (a, b) in reference.iter().zip(&fast) {
                assert_eq!(a.count, b.count);
                for (x, y) in [
                    (a.mass, b.mass),
                    (a.mass_x, b.mass_x),
                    (a.mass_y, b.mass_y),
                    (a.sum_x, b.sum_x),
                    (a.sum_y, b.sum_y),
                ] {
                    assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn zero_mass_cell_falls_back_to_geometric_centroid() {
        let w = World::uniform(8.0, 1.0, 0.0).unwrap();
        let m = cell_moments(&[Vec2::new(1.0, 1.0)], &w.geom(), w.geom().full(), |_, _| 0.0);
        assert_eq!(m[0].centroid(), Some(Vec2::new(4.0, 4.0)));
    }
}
