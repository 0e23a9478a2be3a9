//! Shoreline contours and exact distance fields.
//!
//! Pixel `(i, j)` covers `[i, i+1) x [j, j+1)`, so its center sits at
//! `(i + 0.5, j + 0.5)`. Contours follow the cracks between a water pixel and
//! a 4-adjacent non-water pixel; every vertex is a pixel corner and every
//! crack midpoint lies on the contour. The image border is not a boundary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Mask;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub row: f64,
    pub col: f64,
}

impl Point {
    pub fn new(row: f64, col: f64) -> Self {
        Self { row, col }
    }

    pub fn dist(self, o: Point) -> f64 {
        (self.row - o.row).hypot(self.col - o.col)
    }
}

/// Distance from `p` to the segment `a..b`.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dr, dc) = (b.row - a.row, b.col - a.col);
    let len2 = dr * dr + dc * dc;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (((p.row - a.row) * dr + (p.col - a.col) * dc) / len2).clamp(0.0, 1.0);
    p.dist(Point::new(a.row + t * dr, a.col + t * dc))
}

/// One or more ordered point chains. A closed chain repeats its first point
/// at the end.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContourPolyline {
    pub chains: Vec<Vec<Point>>,
}

impl ContourPolyline {
    pub fn new(chains: Vec<Vec<Point>>) -> Result<Self> {
        if chains.iter().any(|c| c.len() < 2) {
            return Err(Error::Validation("contour chains need at least 2 points".into()));
        }
        Ok(Self { chains })
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.chains
            .iter()
            .flat_map(|c| c.windows(2).map(|w| (w[0], w[1])))
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| a.dist(b)).sum()
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        self.chains.iter().flatten().copied()
    }

    /// Distance from `p` to the nearest point of the polyline.
    pub fn distance_to(&self, p: Point) -> f64 {
        self.segments()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    /// `n` points drawn independently and uniformly by arc length.
    pub fn sample_uniform(&self, n: usize, seed: u64) -> Vec<Point> {
        let segs: Vec<(Point, Point)> = self.segments().collect();
        let mut cumulative = Vec::with_capacity(segs.len());
        let mut total = 0.0;
        for (a, b) in &segs {
            total += a.dist(*b);
            cumulative.push(total);
        }
        if total == 0.0 {
            return Vec::new();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let s = rng.random::<f64>() * total;
                let i = cumulative.partition_point(|&c| c <= s).min(segs.len() - 1);
                let start = if i == 0 { 0.0 } else { cumulative[i - 1] };
                let (a, b) = segs[i];
                let len = a.dist(b);
                let t = if len > 0.0 { ((s - start) / len).clamp(0.0, 1.0) } else { 0.0 };
                Point::new(a.row + t * (b.row - a.row), a.col + t * (b.col - a.col))
            })
            .collect()
    }
}

/// Directed boundary cracks, keeping water on the right-hand side.
fn boundary_cracks(mask: &Mask) -> Vec<((usize, usize), (usize, usize))> {
    let (h, w) = mask.dims();
    let mut edges = Vec::new();
    for r in 1..h {
        for c in 0..w {
            let (above, below) = (mask.get(r - 1, c), mask.get(r, c));
            if above != below {
                if below == 1 {
                    edges.push(((r, c), (r, c + 1)));
                } else {
                    edges.push(((r, c + 1), (r, c)));
                }
            }
        }
    }
    for c in 1..w {
        for r in 0..h {
            let (west, east) = (mask.get(r, c - 1), mask.get(r, c));
            if west != east {
                if west == 1 {
                    edges.push(((r, c), (r + 1, c)));
                } else {
                    edges.push(((r + 1, c), (r, c)));
                }
            }
        }
    }
    edges
}

/// Extracts the water/background boundary as crack-following chains with
/// collinear vertices removed. Empty when the mask is all water or all
/// background.
pub fn mask_to_contour(mask: &Mask) -> Result<ContourPolyline> {
    mask.validate_binary()?;
    let (h, w) = mask.dims();
    let cols = w + 1;
    let id = |(r, c): (usize, usize)| r * cols + c;
    let n_corners = (h + 1) * cols;

    let edges = boundary_cracks(mask);
    let mut out_edges: Vec<Vec<usize>> = vec![Vec::new(); n_corners];
    let mut in_degree = vec![0usize; n_corners];
    for (i, (a, b)) in edges.iter().enumerate() {
        out_edges[id(*a)].push(i);
        in_degree[id(*b)] += 1;
    }
    let mut used = vec![false; edges.len()];

    let trace = |start: usize, used: &mut Vec<bool>| -> Vec<(usize, usize)> {
        let mut path = vec![(start / cols, start % cols)];
        let mut at = start;
        let mut heading: Option<(isize, isize)> = None;
        loop {
            let candidates: Vec<usize> = out_edges[at].iter().copied().filter(|&e| !used[e]).collect();
            let Some(&first) = candidates.first() else { break };
            let dir = |e: usize| {
                let (a, b) = edges[e];
                (b.0 as isize - a.0 as isize, b.1 as isize - a.1 as isize)
            };
            let chosen = match (heading, candidates.len()) {
                (Some((dr, dc)), n) if n > 1 => candidates
                    .iter()
                    .copied()
                    .find(|&e| dir(e) == (dc, -dr))
                    .unwrap_or(first),
                _ => first,
            };
            used[chosen] = true;
            heading = Some(dir(chosen));
            let next = edges[chosen].1;
            path.push(next);
            at = id(next);
        }
        path
    };

    let mut chains = Vec::new();
    for corner in 0..n_corners {
        while out_edges[corner].len() > in_degree[corner]
            && out_edges[corner].iter().any(|&e| !used[e])
        {
            chains.push(trace(corner, &mut used));
        }
    }
    for corner in 0..n_corners {
        while out_edges[corner].iter().any(|&e| !used[e]) {
            chains.push(trace(corner, &mut used));
        }
    }

    let chains = chains
        .into_iter()
        .map(|c| simplify(&c))
        .map(|c| c.into_iter().map(|(r, c)| Point::new(r as f64, c as f64)).collect())
        .collect();
    Ok(ContourPolyline { chains })
}

fn collinear(a: (usize, usize), b: (usize, usize), c: (usize, usize)) -> bool {
    let (a0, a1) = (a.0 as isize, a.1 as isize);
    let (b0, b1) = (b.0 as isize, b.1 as isize);
    let (c0, c1) = (c.0 as isize, c.1 as isize);
    (b0 - a0) * (c1 - b1) == (b1 - a1) * (c0 - b0)
}

fn simplify(path: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let closed = path.len() > 2 && path.first() == path.last();
    let mut pts: Vec<(usize, usize)> = if closed {
        path[..path.len() - 1].to_vec()
    } else {
        path.to_vec()
    };
    let n = pts.len();
    let keep: Vec<bool> = (0..n)
        .map(|i| {
            if !closed && (i == 0 || i == n - 1) {
                return true;
            }
            let prev = pts[(i + n - 1) % n];
            let next = pts[(i + 1) % n];
            !collinear(prev, pts[i], next)
        })
        .collect();
    pts = pts
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect();
    if closed {
        if let Some(&first) = pts.first() {
            pts.push(first);
        }
    }
    pts
}

/// Exact Euclidean distances to a crack contour, sampled on the half-pixel
/// lattice `(2H+1) x (2W+1)` (lattice point `(a, b)` is image point
/// `(a/2, b/2)`). Pixel centers and crack midpoints are lattice points, and
/// for axis-aligned integer contours the nearest contour point to either is
/// itself a lattice point, so the values at those locations are exact.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceField {
    pub height: usize,
    pub width: usize,
    lattice: Vec<f64>,
    empty: bool,
}

impl DistanceField {
    pub fn from_mask(mask: &Mask) -> Result<Self> {
        let contour = mask_to_contour(mask)?;
        Ok(Self::from_contour(&contour, mask.height, mask.width))
    }

    /// Only exact for contours whose segments are axis-aligned with integer
    /// endpoints, i.e. those produced by [`mask_to_contour`].
    pub fn from_contour(contour: &ContourPolyline, height: usize, width: usize) -> Self {
        let (lh, lw) = (2 * height + 1, 2 * width + 1);
        let mut sites = vec![false; lh * lw];
        for (a, b) in contour.segments() {
            let steps = (2.0 * a.dist(b)).round().max(1.0) as usize;
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let r = (2.0 * (a.row + t * (b.row - a.row))).round() as isize;
                let c = (2.0 * (a.col + t * (b.col - a.col))).round() as isize;
                if r >= 0 && c >= 0 && (r as usize) < lh && (c as usize) < lw {
                    sites[r as usize * lw + c as usize] = true;
                }
            }
        }
        let empty = !sites.iter().any(|&s| s);
        let lattice = if empty {
            vec![f64::INFINITY; lh * lw]
        } else {
            edt(&sites, lh, lw)
                .into_iter()
                .map(|d2| d2.sqrt() * 0.5)
                .collect()
        };
        Self {
            height,
            width,
            lattice,
            empty,
        }
    }

    /// True when there was no contour; every distance is then infinite.
    pub fn is_empty(&self) -> bool {
        self.empty
    }

    #[inline]
    fn at(&self, a: usize, b: usize) -> f64 {
        self.lattice[a * (2 * self.width + 1) + b]
    }

    pub fn at_pixel(&self, y: usize, x: usize) -> f64 {
        self.at(2 * y + 1, 2 * x + 1)
    }

    /// Midpoint of the crack between pixel `(y, x)` and `(y + 1, x)`.
    pub fn below_edge(&self, y: usize, x: usize) -> f64 {
        self.at(2 * y + 2, 2 * x + 1)
    }

    /// Midpoint of the crack between pixel `(y, x)` and `(y, x + 1)`.
    pub fn right_edge(&self, y: usize, x: usize) -> f64 {
        self.at(2 * y + 1, 2 * x + 2)
    }
}

const EDT_INF: f64 = 1e20;

/// Two-pass exact squared Euclidean distance transform (lower envelope of
/// parabolas along columns, then rows).
fn edt(sites: &[bool], h: usize, w: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { EDT_INF }).collect();
    let n = h.max(w);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        dt1d(&f[..h], &mut d[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = d[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        dt1d(&f[..w], &mut d[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&d[..w]);
    }
    grid
}

fn dt1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            // z[0] is -inf, so this never steps below the first parabola.
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
}
