//! Points, intervals and finite unions of axis-aligned boxes in the unit cube.
//!
//! Every set the builtin maps produce (forward images of the domain, images of
//! the singular set, sup-metric balls and their unions) is a finite union of
//! boxes whose sides carry open/closed endpoint flags, so inclusion and
//! emptiness tests are exact set-algebra statements rather than measure
//! statements. A degenerate closed side `[a, a]` is a non-empty set of measure
//! zero.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Largest supported state-space dimension.
pub const MAX_DIM: usize = 4;

/// A point of `R^D` stored inline so the orbit hot loop never allocates.
#[derive(Clone, Copy, PartialEq)]
pub struct Point {
    dim: usize,
    coords: [f64; MAX_DIM],
}

impl Point {
    /// Panics if `coords` is empty or longer than [`MAX_DIM`].
    pub fn new(coords: &[f64]) -> Self {
        Self::try_new(coords).expect("point dimension out of range")
    }

    pub fn try_new(coords: &[f64]) -> Result<Self> {
        if coords.is_empty() || coords.len() > MAX_DIM {
            return Err(Error::Domain(format!(
                "point dimension {} outside 1..={MAX_DIM}",
                coords.len()
            )));
        }
        let mut c = [0.0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Point {
            dim: coords.len(),
            coords: c,
        })
    }

    pub fn splat(dim: usize, value: f64) -> Self {
        assert!((1..=MAX_DIM).contains(&dim));
        let mut c = [0.0; MAX_DIM];
        c[..dim].fill(value);
        Point { dim, coords: c }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords[..self.dim]
    }

    /// `max_i |x_i - y_i|`.
    pub fn sup_distance(&self, other: &Point) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        self.as_slice()
            .iter()
            .zip(other.as_slice())
            .fold(0.0, |acc, (a, b)| f64::max(acc, (a - b).abs()))
    }

    pub fn in_unit_cube(&self) -> bool {
        self.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v))
    }
}

impl Index<usize> for Point {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.as_slice()[i]
    }
}

impl IndexMut<usize> for Point {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.coords[..self.dim][i]
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.as_slice()).finish()
    }
}

/// A real interval with independent endpoint flags.
#[derive(Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn open(lo: f64, hi: f64) -> Self {
        Interval {
            lo,
            hi,
            lo_closed: false,
            hi_closed: false,
        }
    }

    pub fn closed(lo: f64, hi: f64) -> Self {
        Interval {
            lo,
            hi,
            lo_closed: true,
            hi_closed: true,
        }
    }

    /// `[lo, hi)`
    pub fn half_open(lo: f64, hi: f64) -> Self {
        Interval {
            lo,
            hi,
            lo_closed: true,
            hi_closed: false,
        }
    }

    pub fn point(v: f64) -> Self {
        Interval::closed(v, v)
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && !(self.lo_closed && self.hi_closed))
    }

    pub fn length(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.hi - self.lo
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        let above = if self.lo_closed { v >= self.lo } else { v > self.lo };
        let below = if self.hi_closed { v <= self.hi } else { v < self.hi };
        above && below
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        let (lo, lo_closed) = if self.lo > other.lo {
            (self.lo, self.lo_closed)
        } else if other.lo > self.lo {
            (other.lo, other.lo_closed)
        } else {
            (self.lo, self.lo_closed && other.lo_closed)
        };
        let (hi, hi_closed) = if self.hi < other.hi {
            (self.hi, self.hi_closed)
        } else if other.hi < self.hi {
            (other.hi, other.hi_closed)
        } else {
            (self.hi, self.hi_closed && other.hi_closed)
        };
        Interval {
            lo,
            hi,
            lo_closed,
            hi_closed,
        }
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        if self.is_empty() {
            return true;
        }
        let lo_ok = other.lo < self.lo || (other.lo == self.lo && (other.lo_closed || !self.lo_closed));
        let hi_ok = other.hi > self.hi || (other.hi == self.hi && (other.hi_closed || !self.hi_closed));
        lo_ok && hi_ok
    }

    pub fn closure(&self) -> Interval {
        Interval::closed(self.lo, self.hi)
    }

    /// Part of `self` strictly left of `other`.
    fn left_of(&self, other: &Interval) -> Interval {
        self.intersect(&Interval {
            lo: f64::NEG_INFINITY,
            hi: other.lo,
            lo_closed: true,
            hi_closed: !other.lo_closed,
        })
    }

    /// Part of `self` strictly right of `other`.
    fn right_of(&self, other: &Interval) -> Interval {
        self.intersect(&Interval {
            lo: other.hi,
            hi: f64::INFINITY,
            lo_closed: !other.hi_closed,
            hi_closed: true,
        })
    }

    /// Image under `v -> scale * v + offset`; a negative scale swaps the endpoint flags.
    pub fn affine_image(&self, scale: f64, offset: f64) -> Interval {
        let a = scale * self.lo + offset;
        let b = scale * self.hi + offset;
        if scale >= 0.0 {
            Interval {
                lo: a,
                hi: b,
                lo_closed: self.lo_closed,
                hi_closed: self.hi_closed,
            }
        } else {
            Interval {
                lo: b,
                hi: a,
                lo_closed: self.hi_closed,
                hi_closed: self.lo_closed,
            }
        }
    }

    /// Preimage under `v -> scale * v + offset`.
    pub fn affine_preimage(&self, scale: f64, offset: f64) -> Interval {
        let a = (self.lo - offset) / scale;
        let b = (self.hi - offset) / scale;
        if scale >= 0.0 {
            Interval {
                lo: a,
                hi: b,
                lo_closed: self.lo_closed,
                hi_closed: self.hi_closed,
            }
        } else {
            Interval {
                lo: b,
                hi: a,
                lo_closed: self.hi_closed,
                hi_closed: self.lo_closed,
            }
        }
    }

    /// Sup-distance from `v` to the closure of the interval.
    pub fn distance_to(&self, v: f64) -> f64 {
        if v < self.lo {
            self.lo - v
        } else if v > self.hi {
            v - self.hi
        } else {
            0.0
        }
    }
}

impl fmt::Debug for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}, {}{}",
            if self.lo_closed { '[' } else { '(' },
            self.lo,
            self.hi,
            if self.hi_closed { ']' } else { ')' }
        )
    }
}

/// An axis-aligned box: the product of one interval per axis.
#[derive(Clone, Copy, PartialEq)]
pub struct AxisBox {
    dim: usize,
    sides: [Interval; MAX_DIM],
}

impl AxisBox {
    pub fn new(sides: &[Interval]) -> Self {
        assert!(!sides.is_empty() && sides.len() <= MAX_DIM);
        let mut s = [Interval::point(0.0); MAX_DIM];
        s[..sides.len()].copy_from_slice(sides);
        AxisBox {
            dim: sides.len(),
            sides: s,
        }
    }

    pub fn open(lo: &[f64], hi: &[f64]) -> Self {
        let sides: Vec<Interval> = lo.iter().zip(hi).map(|(&a, &b)| Interval::open(a, b)).collect();
        AxisBox::new(&sides)
    }

    pub fn closed(lo: &[f64], hi: &[f64]) -> Self {
        let sides: Vec<Interval> = lo.iter().zip(hi).map(|(&a, &b)| Interval::closed(a, b)).collect();
        AxisBox::new(&sides)
    }

    pub fn unit_closed(dim: usize) -> Self {
        AxisBox::new(&vec![Interval::closed(0.0, 1.0); dim])
    }

    pub fn unit_open(dim: usize) -> Self {
        AxisBox::new(&vec![Interval::open(0.0, 1.0); dim])
    }

    /// Open sup-metric ball `{x : max_i |x_i - c_i| < r}`.
    pub fn ball(center: &Point, radius: f64) -> Self {
        let sides: Vec<Interval> = center
            .as_slice()
            .iter()
            .map(|&c| Interval::open(c - radius, c + radius))
            .collect();
        AxisBox::new(&sides)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sides(&self) -> &[Interval] {
        &self.sides[..self.dim]
    }

    pub fn side(&self, axis: usize) -> &Interval {
        &self.sides()[axis]
    }

    pub fn is_empty(&self) -> bool {
        self.sides().iter().any(Interval::is_empty)
    }

    pub fn is_open(&self) -> bool {
        self.sides().iter().all(|s| !s.lo_closed && !s.hi_closed)
    }

    pub fn measure(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.sides().iter().map(Interval::length).product()
    }

    pub fn contains(&self, p: &Point) -> bool {
        debug_assert_eq!(p.dim(), self.dim);
        self.sides().iter().zip(p.as_slice()).all(|(s, &v)| s.contains(v))
    }

    pub fn intersect(&self, other: &AxisBox) -> AxisBox {
        debug_assert_eq!(self.dim, other.dim);
        let mut out = *self;
        for i in 0..self.dim {
            out.sides[i] = self.sides[i].intersect(&other.sides[i]);
        }
        out
    }

    pub fn intersects(&self, other: &AxisBox) -> bool {
        !self.intersect(other).is_empty()
    }

    pub fn is_subset_of(&self, other: &AxisBox) -> bool {
        self.is_empty() || self.sides().iter().zip(other.sides()).all(|(a, b)| a.is_subset_of(b))
    }

    pub fn closure(&self) -> AxisBox {
        let mut out = *self;
        for i in 0..self.dim {
            out.sides[i] = self.sides[i].closure();
        }
        out
    }

    /// `self \ other` as pairwise disjoint boxes (at most `2 * dim` of them).
    pub fn difference(&self, other: &AxisBox) -> Vec<AxisBox> {
        if self.is_empty() {
            return Vec::new();
        }
        if !self.intersects(other) {
            return vec![*self];
        }
        let mut out = Vec::new();
        let mut rest = *self;
        for axis in 0..self.dim {
            let side = rest.sides[axis];
            for piece in [side.left_of(&other.sides[axis]), side.right_of(&other.sides[axis])] {
                if !piece.is_empty() {
                    let mut b = rest;
                    b.sides[axis] = piece;
                    out.push(b);
                }
            }
            rest.sides[axis] = side.intersect(&other.sides[axis]);
        }
        out
    }

    /// Image under the diagonal affine map `x_i -> scale_i * x_i + offset_i`.
    pub fn affine_image(&self, scale: &[f64], offset: &[f64]) -> AxisBox {
        let mut out = *self;
        for i in 0..self.dim {
            out.sides[i] = self.sides[i].affine_image(scale[i], offset[i]);
        }
        out
    }

    pub fn affine_preimage(&self, scale: &[f64], offset: &[f64]) -> AxisBox {
        let mut out = *self;
        for i in 0..self.dim {
            out.sides[i] = self.sides[i].affine_preimage(scale[i], offset[i]);
        }
        out
    }

    /// Sup-distance from `p` to the closure of the box.
    pub fn distance_to(&self, p: &Point) -> f64 {
        self.sides()
            .iter()
            .zip(p.as_slice())
            .fold(0.0, |acc, (s, &v)| f64::max(acc, s.distance_to(v)))
    }

    pub fn center(&self) -> Point {
        let c: Vec<f64> = self.sides().iter().map(|s| 0.5 * (s.lo + s.hi)).collect();
        Point::new(&c)
    }
}

impl fmt::Debug for AxisBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.sides().iter().map(|s| format!("{s:?}")).collect();
        write!(f, "{}", parts.join(" x "))
    }
}

/// A finite union of boxes. Boxes may overlap unless stated otherwise.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Region {
    boxes: Vec<AxisBox>,
}

impl Region {
    pub fn empty() -> Self {
        Region { boxes: Vec::new() }
    }

    pub fn from_boxes(boxes: impl IntoIterator<Item = AxisBox>) -> Self {
        Region {
            boxes: boxes.into_iter().filter(|b| !b.is_empty()).collect(),
        }
    }

    pub fn single(b: AxisBox) -> Self {
        Region::from_boxes([b])
    }

    pub fn boxes(&self) -> &[AxisBox] {
        &self.boxes
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn push(&mut self, b: AxisBox) {
        if !b.is_empty() {
            self.boxes.push(b);
        }
    }

    /// Set emptiness (a degenerate closed box is not empty).
    pub fn is_empty(&self) -> bool {
        self.boxes.iter().all(AxisBox::is_empty)
    }

    pub fn is_open(&self) -> bool {
        self.boxes.iter().all(AxisBox::is_open)
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.boxes.iter().any(|b| b.contains(p))
    }

    pub fn closure(&self) -> Region {
        Region::from_boxes(self.boxes.iter().map(AxisBox::closure))
    }

    pub fn intersect_box(&self, other: &AxisBox) -> Region {
        Region::from_boxes(self.boxes.iter().map(|b| b.intersect(other)))
    }

    pub fn intersect(&self, other: &Region) -> Region {
        Region::from_boxes(
            self.boxes
                .iter()
                .flat_map(|a| other.boxes.iter().map(move |b| a.intersect(b))),
        )
    }

    pub fn intersects(&self, other: &Region) -> bool {
        self.boxes.iter().any(|a| other.boxes.iter().any(|b| a.intersects(b)))
    }

    pub fn difference(&self, other: &Region) -> Region {
        let mut pieces = self.boxes.clone();
        for cut in &other.boxes {
            pieces = pieces.iter().flat_map(|p| p.difference(cut)).collect();
            if pieces.is_empty() {
                break;
            }
        }
        Region { boxes: pieces }
    }

    pub fn is_subset_of(&self, other: &Region) -> bool {
        self.boxes.iter().all(|a| {
            if other.boxes.iter().any(|b| a.is_subset_of(b)) {
                return true;
            }
            let mut pieces = vec![*a];
            for cut in other.boxes.iter().filter(|b| a.intersects(b)) {
                pieces = pieces.iter().flat_map(|p| p.difference(cut)).collect();
                if pieces.is_empty() {
                    return true;
                }
            }
            pieces.is_empty()
        })
    }

    /// Rewrites the union as pairwise disjoint boxes covering the same set.
    pub fn disjoint(&self) -> Region {
        let mut out: Vec<AxisBox> = Vec::new();
        for b in &self.boxes {
            let mut pieces = vec![*b];
            for existing in &out {
                pieces = pieces.iter().flat_map(|p| p.difference(existing)).collect();
                if pieces.is_empty() {
                    break;
                }
            }
            out.extend(pieces);
        }
        Region { boxes: out }
    }

    /// Lebesgue measure of the union.
    pub fn measure(&self) -> f64 {
        self.disjoint().boxes.iter().map(AxisBox::measure).sum()
    }

    /// Sum of box measures; equals [`Region::measure`] only for disjoint boxes.
    pub fn measure_disjoint(&self) -> f64 {
        self.boxes.iter().map(AxisBox::measure).sum()
    }

    /// Sup-distance from `p` to the closure of the union (`inf` when empty).
    pub fn distance_to(&self, p: &Point) -> f64 {
        self.boxes
            .iter()
            .map(|b| b.distance_to(p))
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_flags() {
        let a = Interval::open(0.0, 1.0);
        assert!(!a.contains(0.0));
        assert!(a.contains(0.5));
        assert!(Interval::point(0.3).contains(0.3));
        assert!(!Interval::point(0.3).is_empty());
        assert!(Interval::open(0.3, 0.3).is_empty());
        assert!(Interval::half_open(0.0, 0.5)
            .intersect(&Interval::half_open(0.5, 1.0))
            .is_empty());
        assert!(!Interval::closed(0.0, 0.5)
            .intersect(&Interval::closed(0.5, 1.0))
            .is_empty());
    }

    #[test]
    fn interval_subset_respects_endpoints() {
        let open = Interval::open(0.0, 1.0);
        let closed = Interval::closed(0.0, 1.0);
        assert!(open.is_subset_of(&closed));
        assert!(!closed.is_subset_of(&open));
        assert!(Interval::open(0.0, 0.5).is_subset_of(&open));
        assert!(!Interval::point(0.0).is_subset_of(&open));
    }

    #[test]
    fn negative_scale_swaps_flags() {
        let i = Interval::half_open(0.0, 1.0).affine_image(-2.0, 1.0);
        assert_eq!(i.lo, -1.0);
        assert_eq!(i.hi, 1.0);
        assert!(!i.lo_closed && i.hi_closed);
    }

    #[test]
    fn box_difference_partitions() {
        let a = AxisBox::open(&[0.0, 0.0], &[1.0, 1.0]);
        let b = AxisBox::closed(&[0.25, 0.25], &[0.5, 0.75]);
        let parts = a.difference(&b);
        let total: f64 = parts.iter().map(AxisBox::measure).sum();
        assert!((total - (1.0 - 0.25 * 0.5)).abs() < 1e-15);
        for (i, p) in parts.iter().enumerate() {
            assert!(!p.intersects(&b));
            for q in &parts[i + 1..] {
                assert!(!p.intersects(q));
            }
        }
        assert!(!Region::from_boxes(parts).contains(&Point::new(&[0.25, 0.5])));
    }

    #[test]
    fn degenerate_segment_is_nonempty_and_detected() {
        let segment = AxisBox::new(&[Interval::point(0.5), Interval::closed(0.0, 1.0)]);
        assert!(!segment.is_empty());
        assert_eq!(segment.measure(), 0.0);
        let square = AxisBox::open(&[0.0, 0.0], &[1.0, 1.0]);
        assert!(segment.intersects(&square));
        let left = AxisBox::open(&[0.0, 0.0], &[0.5, 1.0]);
        assert!(!segment.intersects(&left));
    }

    #[test]
    fn region_measure_handles_overlap() {
        let r = Region::from_boxes([AxisBox::open(&[0.0], &[0.5]), AxisBox::open(&[0.25], &[0.75])]);
        assert!((r.measure() - 0.75).abs() < 1e-15);
        assert!((r.measure_disjoint() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn region_subset() {
        let big = Region::from_boxes([AxisBox::open(&[0.0], &[0.5]), AxisBox::open(&[0.5], &[1.0])]);
        assert!(Region::single(AxisBox::open(&[0.1], &[0.4])).is_subset_of(&big));
        assert!(!Region::single(AxisBox::open(&[0.4], &[0.6])).is_subset_of(&big));
        assert!(Region::single(AxisBox::open(&[0.4], &[0.6])).is_subset_of(&big.closure()));
    }

    #[test]
    fn sup_ball() {
        let b = AxisBox::ball(&Point::new(&[0.5, 0.5]), 0.1);
        assert!(b.contains(&Point::new(&[0.59, 0.41])));
        assert!(!b.contains(&Point::new(&[0.6, 0.5])));
        assert!((b.measure() - 0.04).abs() < 1e-15);
    }
}
