//! Axis-aligned boxes, half-spaces, grid partitions and clipped Voronoi
//! cells. Everything is generic over the scalar so the same code runs in
//! `f64` for speed and in exact rationals when boundary decisions matter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Closed box `lo <= x <= hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rect<T> {
    pub lo: Vec<T>,
    pub hi: Vec<T>,
}

impl<T: Scalar> Rect<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidInput("rectangle bounds differ in dimension".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(Error::InvalidInput("degenerate rectangle".into()));
        }
        Ok(Rect { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| l <= v && v <= h)
    }

    pub fn volume(&self) -> T {
        self.lo
            .iter()
            .zip(&self.hi)
            .fold(T::one(), |acc, (l, h)| acc * (h.clone() - l.clone()))
    }

    /// Bounding box of `points`, grown by `margin` (a fraction of the
    /// extent) on every side.
    pub fn bounding(points: &[Vec<T>], margin: T) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::InvalidInput("no points to bound".into()))?;
        let mut lo = first.clone();
        let mut hi = first.clone();
        for p in points {
            for (i, v) in p.iter().enumerate() {
                if *v < lo[i] {
                    lo[i] = v.clone();
                }
                if *v > hi[i] {
                    hi[i] = v.clone();
                }
            }
        }
        for i in 0..lo.len() {
            let mut pad = (hi[i].clone() - lo[i].clone()) * margin.clone();
            if pad <= T::zero() {
                pad = T::one();
            }
            lo[i] = lo[i].clone() - pad.clone();
            hi[i] = hi[i].clone() + pad;
        }
        Rect::new(lo, hi)
    }

    pub fn corners_2d(&self) -> Result<Vec<[T; 2]>> {
        if self.dim() != 2 {
            return Err(Error::InvalidInput("expected a 2-d rectangle".into()));
        }
        let (x0, y0, x1, y1) = (&self.lo[0], &self.lo[1], &self.hi[0], &self.hi[1]);
        Ok(vec![
            [x0.clone(), y0.clone()],
            [x1.clone(), y0.clone()],
            [x1.clone(), y1.clone()],
            [x0.clone(), y1.clone()],
        ])
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(&T) -> U) -> Rect<U> {
        Rect { lo: self.lo.iter().map(&f).collect(), hi: self.hi.iter().map(&f).collect() }
    }
}

/// `normal . x <= offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace<T> {
    pub normal: Vec<T>,
    pub offset: T,
}

impl<T: Scalar> HalfSpace<T> {
    /// Points at least as close to `own` as to `other`:
    /// `2 (other - own) . x <= |other|^2 - |own|^2`.
    pub fn bisector(own: &[T], other: &[T]) -> Self {
        let two = T::one() + T::one();
        let normal = other
            .iter()
            .zip(own)
            .map(|(o, p)| two.clone() * (o.clone() - p.clone()))
            .collect();
        HalfSpace { normal, offset: sq_norm(other) - sq_norm(own) }
    }

    /// `offset - normal . x`; non-negative inside.
    pub fn slack(&self, x: &[T]) -> T {
        self.offset.clone() - dot(&self.normal, x)
    }

    pub fn contains(&self, x: &[T]) -> bool {
        self.slack(x) >= T::zero()
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + x.clone() * y.clone())
}

pub fn sq_norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a)
}

pub fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| {
        let d = x.clone() - y.clone();
        acc + d.clone() * d
    })
}

/// Clips a convex polygon (counter-clockwise or clockwise) to a half-plane.
pub fn clip_polygon<T: Scalar>(poly: &[[T; 2]], hs: &HalfSpace<T>) -> Vec<[T; 2]> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..n {
        let a = &poly[i];
        let b = &poly[(i + 1) % n];
        let sa = hs.slack(a);
        let sb = hs.slack(b);
        let a_in = sa >= T::zero();
        let b_in = sb >= T::zero();
        if a_in {
            out.push(a.clone());
        }
        if a_in != b_in {
            // Crossing point a + t (b - a) with slack zero.
            let t = sa.clone() / (sa - sb);
            let p = [
                a[0].clone() + t.clone() * (b[0].clone() - a[0].clone()),
                a[1].clone() + t * (b[1].clone() - a[1].clone()),
            ];
            if out.last() != Some(&p) {
                out.push(p);
            }
        }
    }
    if out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiCell<T> {
    pub generator: Vec<T>,
    /// One bisector per other generator.
    pub halfspaces: Vec<HalfSpace<T>>,
    /// Vertices of the cell intersected with the clip rectangle.
    pub vertices: Vec<[T; 2]>,
}

impl<T: Scalar> VoronoiCell<T> {
    pub fn contains(&self, x: &[T]) -> bool {
        self.halfspaces.iter().all(|h| h.contains(x))
    }
}

/// Removes repeated generators, keeping first occurrences. Returns the kept
/// indices into `points`.
pub fn dedupe_points<T: Scalar>(points: &[Vec<T>]) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if kept.iter().any(|&k| points[k] == *p) {
            log::warn!("dropping duplicate Voronoi generator {p:?}");
        } else {
            kept.push(i);
        }
    }
    kept
}

/// Voronoi cells of distinct 2-d `generators`, clipped to `clip`.
pub fn voronoi_cells<T: Scalar>(generators: &[Vec<T>], clip: &Rect<T>) -> Result<Vec<VoronoiCell<T>>> {
    if generators.len() < 2 {
        return Err(Error::InvalidInput("Voronoi needs at least two generators".into()));
    }
    if generators.iter().any(|g| g.len() != 2) {
        return Err(Error::InvalidInput("Voronoi cells are built in the plane".into()));
    }
    let frame = clip.corners_2d()?;
    let cells = generators
        .iter()
        .enumerate()
        .map(|(k, own)| {
            let halfspaces: Vec<HalfSpace<T>> = generators
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != k)
                .map(|(_, other)| HalfSpace::bisector(own, other))
                .collect();
            let mut poly = frame.clone();
            // Nearest neighbours cut the most; clip with them first.
            let mut order: Vec<usize> = (0..halfspaces.len()).collect();
            let others: Vec<&Vec<T>> =
                generators.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, g)| g).collect();
            order.sort_by(|&a, &b| {
                sq_dist(own, others[a])
                    .partial_cmp(&sq_dist(own, others[b]))
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            for i in order {
                if poly.is_empty() {
                    break;
                }
                poly = clip_polygon(&poly, &halfspaces[i]);
            }
            VoronoiCell { generator: own.clone(), halfspaces, vertices: poly }
        })
        .collect();
    Ok(cells)
}

/// One cell of a uniform grid over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell<T> {
    pub index: Vec<usize>,
    pub bounds: Rect<T>,
}

/// Splits `rect` into `per_axis^d` equal cells, in row-major index order.
pub fn grid_cells<T: Scalar>(rect: &Rect<T>, per_axis: usize) -> Result<Vec<GridCell<T>>> {
    if per_axis == 0 {
        return Err(Error::Config("cells_per_axis must be at least 1".into()));
    }
    let d = rect.dim();
    let n = T::from_f64(per_axis as f64);
    let edge = |axis: usize, i: usize| {
        if i == per_axis {
            // Pin the far edge so rounding cannot leave a sliver.
            return rect.hi[axis].clone();
        }
        let frac = T::from_f64(i as f64) / n.clone();
        rect.lo[axis].clone() + (rect.hi[axis].clone() - rect.lo[axis].clone()) * frac
    };
    let total = per_axis.pow(d as u32);
    let mut cells = Vec::with_capacity(total);
    for flat in 0..total {
        let mut index = vec![0; d];
        let mut rem = flat;
        for axis in (0..d).rev() {
            index[axis] = rem % per_axis;
            rem /= per_axis;
        }
        let lo = (0..d).map(|a| edge(a, index[a])).collect();
        let hi = (0..d).map(|a| edge(a, index[a] + 1)).collect();
        cells.push(GridCell { index, bounds: Rect { lo, hi } });
    }
    Ok(cells)
}
